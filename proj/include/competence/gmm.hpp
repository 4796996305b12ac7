#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

namespace competence {

/// Full-covariance Gaussian mixture with cached Cholesky factors.
struct GaussianMixture {
  Eigen::VectorXd weights;                    // m, sums to 1
  Eigen::MatrixXd means;                      // m x d
  std::vector<Eigen::MatrixXd> covariances;   // m of d x d
  std::vector<Eigen::MatrixXd> cholesky;      // lower factors L with L L^T = covariance
  Eigen::VectorXd log_normalizers;            // log w_m - (d log 2pi + log det)/2

  Eigen::Index components() const { return means.rows(); }
  Eigen::Index dim() const { return means.cols(); }

  /// Recomputes cholesky and log_normalizers from weights/covariances.
  /// Throws SingularCovariance when a covariance is not positive definite.
  void factorize();
};

/// -log sum_m w_m N(x; mu_m, Sigma_m), evaluated with triangular solves and
/// a max-shifted log-sum-exp.
double gmm_negative_log_likelihood(const GaussianMixture& mixture,
                                   const Eigen::Ref<const Eigen::VectorXd>& x);

struct GmmOptions {
  Eigen::Index components = 1;
  int max_iterations = 100;
  double relative_tolerance = 1e-6;
  double covariance_floor = 1e-6;  // times tr(Sigma_m)/d, added to each diagonal
  std::uint64_t seed = 0;
};

struct GmmFit {
  GaussianMixture mixture;
  bool converged = false;
  int iterations = 0;
  double log_likelihood = 0.0;
};

/// EM from a k-means++ seeding. Non-convergence within max_iterations is
/// reported through GmmFit::converged, not thrown.
GmmFit fit_gmm(const Eigen::Ref<const Eigen::MatrixXd>& data, const GmmOptions& options);

}  // namespace competence
