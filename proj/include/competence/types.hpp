#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>

#include <Eigen/Core>

namespace competence {

/// Row-major 32-bit storage, as exported by the training framework.
using Tensor2 = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <class Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using LabelVector = Eigen::Matrix<std::int32_t, Eigen::Dynamic, 1>;
using Mask = Eigen::Array<bool, Eigen::Dynamic, 1>;

/// One incompetence value per sample; higher means less competent.
using ScoreVector = Eigen::VectorXd;

inline constexpr std::int32_t kUnknownClass = -1;

struct LabeledSplit {
  Tensor2 features;  // n x d
  Tensor2 logits;    // n x C
  LabelVector labels;
  LabelVector predictions;

  Eigen::Index size() const { return features.rows(); }
  Eigen::Index feature_dim() const { return features.cols(); }
  Eigen::Index num_classes() const { return logits.cols(); }
};

struct ClassifierHead {
  Tensor2 weight;  // d x C
  Eigen::VectorXf bias;
};

struct TaskBundle {
  LabeledSplit id_train;
  LabeledSplit id_val;
  LabeledSplit id_test;
  LabeledSplit ood_test;
  std::optional<LabeledSplit> open_world;
  ClassifierHead head;
  std::int32_t num_classes = 0;
  std::map<std::string, std::string> meta;
};

/// Row-wise argmax; the lowest index wins ties.
template <class Derived>
LabelVector argmax_rows(const Eigen::MatrixBase<Derived>& logits) {
  LabelVector out(logits.rows());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < logits.cols(); ++j) {
      if (logits(i, j) > logits(i, best)) best = j;
    }
    out(i) = static_cast<std::int32_t>(best);
  }
  return out;
}

/// predictions == labels, with unknown-class samples always incorrect.
Mask correctness(const LabeledSplit& split);

double accuracy(const LabeledSplit& split);

/// Checks the per-split invariants (row counts, finiteness, label range,
/// argmax consistency). Throws Error on violation.
void validate_split(const LabeledSplit& split, std::int32_t num_classes,
                    const std::string& name, bool allow_unknown);

}  // namespace competence
