#include "tfda/error.hpp"

namespace tfda {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kConfig:
      return "E_CONFIG";
    case ErrorCode::kValidation:
      return "E_VALIDATION";
    case ErrorCode::kDivergence:
      return "E_DIVERGENCE";
    case ErrorCode::kIo:
      return "E_IO";
    case ErrorCode::kInternal:
      return "E_INTERNAL";
  }
  return "E_UNKNOWN";
}

int exit_code(ErrorCode code) {
  return code == ErrorCode::kDivergence ? 2 : 1;
}

void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace tfda
