#include "mmdt/runtime.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace mmdt {

void tune_allocator() noexcept {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace mmdt
