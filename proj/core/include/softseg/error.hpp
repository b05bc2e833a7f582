#pragma once

#include <stdexcept>
#include <string>

namespace softseg {

enum class ErrorCode {
  kDimension,       // tensor / raster shape disagreement
  kInvalidArgument, // precondition violated by caller input
  kParse,           // malformed text (palette files, configs)
  kIo,              // unreadable or unwritable path
  kPaletteMismatch, // palette size differs from trained K
  kNumeric,         // non-finite values where finite ones are required
};

const char* to_string(ErrorCode code);

/// Every failure raised by the library carries a machine-readable code next
/// to the human-readable message so that the CLI and the HTTP service can map
/// it to exit codes / status codes without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace softseg
