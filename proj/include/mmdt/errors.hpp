#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mmdt {

/// Root of every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define MMDT_DEFINE_ERROR(Name)         \
  class Name : public Error {           \
   public:                              \
    using Error::Error;                 \
  }

MMDT_DEFINE_ERROR(IngestError);
MMDT_DEFINE_ERROR(PatchError);
MMDT_DEFINE_ERROR(ParamError);
MMDT_DEFINE_ERROR(SplitError);
MMDT_DEFINE_ERROR(ShapeError);
MMDT_DEFINE_ERROR(BatchError);
MMDT_DEFINE_ERROR(NumericError);
MMDT_DEFINE_ERROR(VoteError);
MMDT_DEFINE_ERROR(MetricError);
MMDT_DEFINE_ERROR(StateError);
MMDT_DEFINE_ERROR(ConfigError);
MMDT_DEFINE_ERROR(IoError);
MMDT_DEFINE_ERROR(TraceError);

#undef MMDT_DEFINE_ERROR

/// Malformed checkpoint archive; carries the byte offset where decoding failed.
class CorruptArchiveError : public Error {
 public:
  CorruptArchiveError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

}  // namespace mmdt
