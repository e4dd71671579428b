#pragma once

#include <stdexcept>
#include <string>

namespace flowtopo {

enum class ErrorCode {
  kInvalidInput = 1,
  kNumeric = 2,
  kState = 3,
  kUsage = 4,
  kConfig = 5,
  kIo = 6,
  kVersion = 7,
  kParse = 8,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void throw_error(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool ok, ErrorCode code, const std::string& message) {
  if (!ok) throw Error(code, message);
}

}  // namespace flowtopo
