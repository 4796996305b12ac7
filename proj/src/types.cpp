#include "competence/types.hpp"

#include <cmath>

#include "competence/error.hpp"

namespace competence {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::MalformedHeader: return "MalformedHeader";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::InconsistentDimensions: return "InconsistentDimensions";
    case ErrorCode::PredictionMismatch: return "PredictionMismatch";
    case ErrorCode::HeadMismatch: return "HeadMismatch";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::EmptyScores: return "EmptyScores";
    case ErrorCode::DegenerateClass: return "DegenerateClass";
    case ErrorCode::SingularCovariance: return "SingularCovariance";
    case ErrorCode::NumericFailure: return "NumericFailure";
    case ErrorCode::TooFewSamples: return "TooFewSamples";
    case ErrorCode::InvalidFraction: return "InvalidFraction";
    case ErrorCode::InsufficientOpenPool: return "InsufficientOpenPool";
    case ErrorCode::MissingOpenWorldSplit: return "MissingOpenWorldSplit";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

int exit_code(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::MissingFile:
    case ErrorCode::MalformedHeader:
    case ErrorCode::Io:
      return 3;
    case ErrorCode::SingularCovariance:
    case ErrorCode::NumericFailure:
      return 5;
    case ErrorCode::InvalidConfig:
      return 2;
    default:
      return 4;
  }
}

Mask correctness(const LabeledSplit& split) {
  Mask out(split.size());
  for (Eigen::Index i = 0; i < split.size(); ++i) {
    out(i) = split.labels(i) != kUnknownClass && split.labels(i) == split.predictions(i);
  }
  return out;
}

double accuracy(const LabeledSplit& split) {
  if (split.size() == 0) return 0.0;
  return static_cast<double>(correctness(split).count()) / static_cast<double>(split.size());
}

namespace {

void check_finite(const Tensor2& t, const std::string& what) {
  const float* data = t.data();
  for (Eigen::Index i = 0; i < t.size(); ++i) {
    if (!std::isfinite(data[i])) {
      fail(ErrorCode::NonFiniteValue, what + " has a non-finite value at flat index " + std::to_string(i));
    }
  }
}

}  // namespace

void validate_split(const LabeledSplit& split, std::int32_t num_classes, const std::string& name,
                    bool allow_unknown) {
  const auto n = split.features.rows();
  if (split.logits.rows() != n || split.labels.size() != n || split.predictions.size() != n) {
    fail(ErrorCode::InconsistentDimensions,
         name + ": features/logits/labels/predictions disagree on the sample count");
  }
  if (split.logits.cols() != num_classes) {
    fail(ErrorCode::InconsistentDimensions,
         name + ": logits have " + std::to_string(split.logits.cols()) + " columns, expected " +
             std::to_string(num_classes));
  }
  check_finite(split.features, name + ".features");
  check_finite(split.logits, name + ".logits");
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto y = split.labels(i);
    const bool unknown = y == kUnknownClass;
    if ((unknown && !allow_unknown) || (!unknown && (y < 0 || y >= num_classes))) {
      fail(ErrorCode::InconsistentDimensions,
           name + ": label " + std::to_string(y) + " at row " + std::to_string(i) + " is out of range");
    }
  }
  const LabelVector expected = argmax_rows(split.logits);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (split.predictions(i) != expected(i)) {
      fail(ErrorCode::PredictionMismatch,
           name + ": prediction at row " + std::to_string(i) + " is " +
               std::to_string(split.predictions(i)) + " but argmax of logits is " +
               std::to_string(expected(i)));
    }
  }
}

}  // namespace competence
