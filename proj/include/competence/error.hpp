#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace competence {

enum class ErrorCode {
  MissingFile,
  MalformedHeader,
  ShapeMismatch,
  NonFiniteValue,
  InconsistentDimensions,
  PredictionMismatch,
  HeadMismatch,
  DimensionMismatch,
  LengthMismatch,
  EmptyScores,
  DegenerateClass,
  SingularCovariance,
  NumericFailure,
  TooFewSamples,
  InvalidFraction,
  InsufficientOpenPool,
  MissingOpenWorldSplit,
  InvalidConfig,
  Io,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Process exit code for a failure category: 3 I/O, 4 data/shape, 5 numeric.
int exit_code(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, std::string(to_string(code)) + ": " + message);
}

}  // namespace competence
