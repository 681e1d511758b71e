#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tempofuse {

/// Coarse failure category. The CLI prints it as the machine-readable part of
/// its one-line error message.
enum class ErrorCode {
  invalid_argument,
  io,
  format,
  checksum,
  shape,
  empty_input,
  numeric,
  state,
};

std::string_view to_string(ErrorCode code);

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

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) throw Error(code, message);
}

}  // namespace tempofuse
