#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tfda {

enum class ErrorCode {
  kConfig,      // malformed or out-of-range configuration
  kValidation,  // bad input data, manifests or checkpoints
  kDivergence,  // non-finite or exploding training losses
  kIo,          // filesystem failures
  kInternal,
};

std::string_view to_string(ErrorCode code);

// Process exit status for the command-line tool.
int exit_code(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

}  // namespace tfda
