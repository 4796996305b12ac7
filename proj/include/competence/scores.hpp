#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "competence/gmm.hpp"
#include "competence/types.hpp"

namespace competence {

enum class ScoreMethod { Softmax, Logit, Energy, EnergyReact, DeepKNN, Mahalanobis, GMM, PCA, ViM };

inline constexpr std::array<ScoreMethod, 9> kAllMethods = {
    ScoreMethod::Softmax, ScoreMethod::Logit, ScoreMethod::Energy,
    ScoreMethod::EnergyReact, ScoreMethod::DeepKNN, ScoreMethod::Mahalanobis,
    ScoreMethod::GMM, ScoreMethod::PCA, ScoreMethod::ViM};

std::string_view to_string(ScoreMethod method) noexcept;
/// Case-insensitive; accepts "knn"/"deep-knn"/"deepknn", "react"/"energy-react".
std::optional<ScoreMethod> parse_method(std::string_view name);

bool uses_features(ScoreMethod method) noexcept;

/// Every field has a default; zero means "derive from the data" for
/// gmm_components (C) and vim_dprime (min(512, d/2)).
struct ScoreConfig {
  ScoreMethod method = ScoreMethod::Softmax;
  Eigen::Index k = 1;
  Eigen::Index gmm_components = 0;
  double pca_variance = 0.95;
  Eigen::Index vim_dprime = 0;
  double react_percentile = 90.0;
  std::uint64_t seed = 0;
  double mahalanobis_epsilon = 1e-6;
};

// ---------------------------------------------------------------------------
// Per-row scores. All return incompetence: higher means less competent.

template <class Derived>
typename Derived::Scalar log_sum_exp(const Eigen::MatrixBase<Derived>& v) {
  using Scalar = typename Derived::Scalar;
  const Scalar top = v.maxCoeff();
  return top + std::log((v.array() - top).exp().sum());
}

/// -max_j softmax(logits)_j, in [-1, -1/C].
template <class Derived>
typename Derived::Scalar softmax_incompetence(const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  const Scalar top = logits.maxCoeff();
  return -Scalar(1) / (logits.array() - top).exp().sum();
}

template <class Derived>
typename Derived::Scalar logit_incompetence(const Eigen::MatrixBase<Derived>& logits) {
  return -logits.maxCoeff();
}

/// Negative free energy at temperature 1: -log sum_j exp(logits_j).
template <class Derived>
typename Derived::Scalar energy_incompetence(const Eigen::MatrixBase<Derived>& logits) {
  return -log_sum_exp(logits);
}

/// Energy of the logits after clipping features from above at `clip`.
/// Evaluated as logits + (min(f, clip) - f) W so that rows with nothing to
/// clip reproduce the plain energy score exactly.
template <class DerivedF, class DerivedL, class DerivedW>
typename DerivedL::Scalar energy_react_incompetence(const Eigen::MatrixBase<DerivedF>& features,
                                                    const Eigen::MatrixBase<DerivedL>& logits,
                                                    const Eigen::MatrixBase<DerivedW>& weight,
                                                    typename DerivedL::Scalar clip) {
  using Scalar = typename DerivedL::Scalar;
  Eigen::Matrix<Scalar, 1, Eigen::Dynamic> excess = features.derived().template cast<Scalar>();
  excess = (excess.array() - clip).max(Scalar(0)).matrix();
  if ((excess.array() == Scalar(0)).all()) return energy_incompetence(logits);
  const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> clipped =
      logits.derived() - (excess * weight.derived().template cast<Scalar>()).transpose();
  return energy_incompetence(clipped);
}

/// Scales a vector to unit L2 norm; the zero vector stays zero.
template <class Derived>
Vector<typename Derived::Scalar> l2_normalized(const Eigen::MatrixBase<Derived>& v) {
  using Scalar = typename Derived::Scalar;
  Vector<Scalar> out = v;
  const Scalar norm = out.norm();
  if (norm > Scalar(0)) out /= norm;
  return out;
}

/// Distance from `query` to its k-th nearest row of `bank` (exhaustive).
/// Both are expected to be normalized already.
template <class DerivedB, class DerivedQ>
typename DerivedB::Scalar knn_distance(const Eigen::MatrixBase<DerivedB>& bank,
                                       const Eigen::MatrixBase<DerivedQ>& query, Eigen::Index k) {
  using Scalar = typename DerivedB::Scalar;
  std::vector<Scalar> dist(static_cast<std::size_t>(bank.rows()));
  for (Eigen::Index i = 0; i < bank.rows(); ++i) {
    dist[static_cast<std::size_t>(i)] = (bank.row(i) - query.derived().transpose()).squaredNorm();
  }
  auto kth = dist.begin() + (k - 1);
  std::nth_element(dist.begin(), kth, dist.end());
  return std::sqrt(*kth);
}

/// min_k (x - mu_k)^T P (x - mu_k) for centroids stored row-wise.
template <class DerivedC, class DerivedP, class DerivedX>
typename DerivedC::Scalar min_mahalanobis(const Eigen::MatrixBase<DerivedC>& centroids,
                                          const Eigen::MatrixBase<DerivedP>& precision,
                                          const Eigen::MatrixBase<DerivedX>& x) {
  using Scalar = typename DerivedC::Scalar;
  Scalar best = std::numeric_limits<Scalar>::infinity();
  for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> diff = x.derived() - centroids.row(c).transpose();
    best = std::min(best, Scalar(diff.dot(precision * diff)));
  }
  return best;
}

/// Squared norm of the part of (x - mean) outside span(basis); basis columns
/// are orthonormal.
template <class DerivedM, class DerivedB, class DerivedX>
typename DerivedB::Scalar pca_residual(const Eigen::MatrixBase<DerivedM>& mean,
                                       const Eigen::MatrixBase<DerivedB>& basis,
                                       const Eigen::MatrixBase<DerivedX>& x) {
  using Scalar = typename DerivedB::Scalar;
  const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> centered = x - mean;
  const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> residual =
      centered - basis * (basis.transpose() * centered);
  return residual.squaredNorm();
}

/// Same quantity from an orthonormal basis of the residual space; exactly 0
/// when that space is empty.
template <class DerivedM, class DerivedC, class DerivedX>
typename DerivedC::Scalar pca_residual_complement(const Eigen::MatrixBase<DerivedM>& mean,
                                                  const Eigen::MatrixBase<DerivedC>& complement,
                                                  const Eigen::MatrixBase<DerivedX>& x) {
  return (complement.transpose() * (x - mean)).squaredNorm();
}

/// Softmax mass of the virtual logit `virtual_logit` against the real logits.
template <class Derived>
typename Derived::Scalar virtual_logit_share(const Eigen::MatrixBase<Derived>& logits,
                                             typename Derived::Scalar virtual_logit) {
  using Scalar = typename Derived::Scalar;
  const Scalar top = std::max(Scalar(logits.maxCoeff()), virtual_logit);
  const Scalar own = std::exp(virtual_logit - top);
  return own / (own + (logits.array() - top).exp().sum());
}

// ---------------------------------------------------------------------------
// Fitted models.

struct KnnState {
  Eigen::MatrixXd bank;  // normalized ID-train features, n x d
  Eigen::Index k = 1;
};

struct MahalanobisState {
  Eigen::MatrixXd centroids;  // C x d
  Eigen::MatrixXd precision;  // d x d
  bool regularized = false;
};

struct GmmState {
  GaussianMixture mixture;
  bool converged = false;
  int iterations = 0;
};

struct PcaState {
  Eigen::VectorXd mean;
  Eigen::MatrixXd basis;       // d x q
  Eigen::MatrixXd complement;  // d x (d - q), remaining eigenvectors
};

struct VimState {
  Eigen::VectorXd offset;          // u = -pinv(W^T) b
  Eigen::MatrixXd residual_basis;  // d x (d - D')
  double alpha = 1.0;
  Eigen::Index principal_dim = 0;
};

struct ReactState {
  Eigen::MatrixXd weight;  // d x C
  double clip = std::numeric_limits<double>::infinity();
};

struct StatelessState {};

using ScoreState = std::variant<StatelessState, ReactState, KnnState, MahalanobisState, GmmState,
                                PcaState, VimState>;

struct ScoreModel {
  ScoreMethod method = ScoreMethod::Softmax;
  ScoreConfig config;
  Eigen::Index feature_dim = 0;
  Eigen::Index num_classes = 0;
  ScoreState state;
};

/// Fits on ID training data only. Deterministic for a fixed config.seed.
ScoreModel fit_score_model(ScoreMethod method, const LabeledSplit& id_train,
                           const ClassifierHead& head, ScoreConfig config = {});

struct ScoringOptions {
  unsigned threads = 1;
};

/// One score per row. Output does not depend on options.threads.
ScoreVector score(const ScoreModel& model, const Tensor2& features, const Tensor2& logits,
                  const ScoringOptions& options = {});

inline ScoreVector score(const ScoreModel& model, const LabeledSplit& split,
                         const ScoringOptions& options = {}) {
  return score(model, split.features, split.logits, options);
}

/// Stable hex digest over the frozen model state.
std::string model_digest(const ScoreModel& model);

/// Nearest-rank percentile (p in (0, 100]) over all entries.
double nearest_rank_percentile(std::vector<double> values, double p);

}  // namespace competence
