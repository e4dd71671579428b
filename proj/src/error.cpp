#include "flowtopo/error.hpp"

namespace flowtopo {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidInput: return "invalid-input";
    case ErrorCode::kNumeric: return "numeric";
    case ErrorCode::kState: return "state";
    case ErrorCode::kUsage: return "usage";
    case ErrorCode::kConfig: return "config";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kVersion: return "version";
    case ErrorCode::kParse: return "parse";
  }
  return "unknown";
}

}  // namespace flowtopo
