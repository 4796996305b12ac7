#pragma once

#include <cstdint>

#include "competence/types.hpp"

namespace competence {

/// Class-conditional Gaussians N(mu_k, sigma^2 I) with class means at radius
/// `radius` along a seeded orthonormal frame (+q_k, then -q_k once C > d).
/// The OOD split is translated by delta * u for a seeded unit vector u.
struct SyntheticConfig {
  std::int32_t num_classes = 3;
  Eigen::Index feature_dim = 8;
  Eigen::Index n_train = 1000;
  Eigen::Index n_val = 1000;
  Eigen::Index n_test = 1000;
  Eigen::Index n_ood = 1000;
  Eigen::Index n_open = 0;            // 0: no open-world split
  double radius = 2.0;
  double sigma = 1.0;
  double delta = 0.0;
  std::int32_t open_classes = 0;
  double open_radius = 0.0;           // 0: radius + 10 sigma
  std::uint64_t seed = 0;
};

void validate(const SyntheticConfig& config);

TaskBundle generate_synthetic_task(const SyntheticConfig& config);

/// Row-wise argmax of features * weight + bias (lowest index on ties).
LabelVector linear_head_predict(const ClassifierHead& head, const Tensor2& features);

/// Least-squares linear classifier on one-hot targets.
ClassifierHead fit_least_squares_head(const Tensor2& features, const LabelVector& labels,
                                      std::int32_t num_classes);

}  // namespace competence
