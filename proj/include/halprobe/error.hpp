#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace halprobe {

enum class ErrorCode {
  INVALID_ARGUMENT,
  IO_ERROR,
  PARSE_ERROR,
  UNKNOWN_TASK,
  MISSING_FIELD,
  SMALL_STRATUM,
  INVALID_DUMP,
  DIMENSION_MISMATCH,
  UNDEFINED_METRIC,
  DEGENERATE_LABELS,
  TRAINING_DIVERGED,
  MISSING_FEATURES,
  INVALID_DISTRIBUTION,
  MISSING_PER_TOKEN,
  MISSING_TASK,
  LEAKAGE,
  DIMENSION_TOO_SMALL,
};

std::string_view to_string(ErrorCode code);

// Every library failure carries a stable code; the message is prefixed with it.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace halprobe
