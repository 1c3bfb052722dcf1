#pragma once

namespace mmdt {

/// Keeps large activation buffers in the heap instead of returning them to the OS after every
/// step. Training allocates and frees the same multi-megabyte blocks each iteration.
void tune_allocator() noexcept;

}  // namespace mmdt
