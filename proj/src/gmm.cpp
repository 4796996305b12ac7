#include "competence/gmm.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "competence/error.hpp"
#include "competence/rng.hpp"

namespace competence {

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

double log_sum_exp(const Eigen::Ref<const Eigen::VectorXd>& v) {
  const double top = v.maxCoeff();
  if (!std::isfinite(top)) return top;
  return top + std::log((v.array() - top).exp().sum());
}

Eigen::MatrixXd floored(Eigen::MatrixXd cov, double floor, double fallback_trace) {
  const auto d = static_cast<double>(cov.rows());
  double trace = cov.trace();
  if (!(trace > 0.0)) trace = fallback_trace;
  cov.diagonal().array() += floor * trace / d;
  return cov;
}

/// k-means++ seeding followed by a hard assignment of every point to its
/// nearest seed.
std::vector<Eigen::Index> kmeans_pp_assignment(const Eigen::Ref<const Eigen::MatrixXd>& data,
                                               Eigen::Index k, Rng& rng) {
  const auto n = data.rows();
  Eigen::MatrixXd centers(k, data.cols());
  centers.row(0) = data.row(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n))));
  Eigen::VectorXd nearest = (data.rowwise() - centers.row(0)).rowwise().squaredNorm();
  for (Eigen::Index c = 1; c < k; ++c) {
    const double total = nearest.sum();
    Eigen::Index pick = 0;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double acc = 0.0;
      pick = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        acc += nearest(i);
        if (acc > target) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)));
    }
    centers.row(c) = data.row(pick);
    nearest = nearest.cwiseMin((data.rowwise() - centers.row(c)).rowwise().squaredNorm());
  }
  std::vector<Eigen::Index> assignment(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index best = 0;
    (centers.rowwise() - data.row(i)).rowwise().squaredNorm().minCoeff(&best);
    assignment[static_cast<std::size_t>(i)] = best;
  }
  return assignment;
}

}  // namespace

void GaussianMixture::factorize() {
  const auto m = components();
  const auto d = static_cast<double>(dim());
  cholesky.assign(static_cast<std::size_t>(m), Eigen::MatrixXd());
  log_normalizers.resize(m);
  for (Eigen::Index c = 0; c < m; ++c) {
    Eigen::LLT<Eigen::MatrixXd> llt(covariances[static_cast<std::size_t>(c)]);
    if (llt.info() != Eigen::Success) {
      fail(ErrorCode::SingularCovariance,
           "mixture component " + std::to_string(c) + " covariance is not positive definite");
    }
    Eigen::MatrixXd lower = llt.matrixL();
    const double log_det = 2.0 * lower.diagonal().array().log().sum();
    log_normalizers(c) = (weights(c) > 0.0 ? std::log(weights(c))
                                            : -std::numeric_limits<double>::infinity()) -
                         0.5 * (d * kLog2Pi + log_det);
    cholesky[static_cast<std::size_t>(c)] = std::move(lower);
  }
}

namespace {

Eigen::VectorXd component_log_densities(const GaussianMixture& g,
                                        const Eigen::Ref<const Eigen::VectorXd>& x) {
  Eigen::VectorXd out(g.components());
  for (Eigen::Index c = 0; c < g.components(); ++c) {
    const Eigen::VectorXd centered = x - g.means.row(c).transpose();
    const Eigen::VectorXd z =
        g.cholesky[static_cast<std::size_t>(c)].triangularView<Eigen::Lower>().solve(centered);
    out(c) = g.log_normalizers(c) - 0.5 * z.squaredNorm();
  }
  return out;
}

}  // namespace

double gmm_negative_log_likelihood(const GaussianMixture& mixture,
                                   const Eigen::Ref<const Eigen::VectorXd>& x) {
  return -log_sum_exp(component_log_densities(mixture, x));
}

GmmFit fit_gmm(const Eigen::Ref<const Eigen::MatrixXd>& data, const GmmOptions& options) {
  const auto n = data.rows();
  const auto d = data.cols();
  const auto k = options.components;
  if (n == 0 || d == 0) fail(ErrorCode::TooFewSamples, "GMM needs a nonempty training set");
  if (k < 1 || k > n) {
    fail(ErrorCode::InvalidConfig, "GMM component count " + std::to_string(k) +
                                       " must lie in [1, " + std::to_string(n) + "]");
  }

  const Eigen::RowVectorXd global_mean = data.colwise().mean();
  const Eigen::MatrixXd global_centered = data.rowwise() - global_mean;
  const double global_trace =
      std::max(global_centered.squaredNorm() / static_cast<double>(n), 1e-300);
  const Eigen::MatrixXd global_cov =
      floored(global_centered.transpose() * global_centered / static_cast<double>(n),
              options.covariance_floor, global_trace);

  Rng rng(options.seed);
  Eigen::MatrixXd resp = Eigen::MatrixXd::Zero(n, k);
  const auto assignment = kmeans_pp_assignment(data, k, rng);
  for (Eigen::Index i = 0; i < n; ++i) resp(i, assignment[static_cast<std::size_t>(i)]) = 1.0;

  GmmFit fit;
  GaussianMixture& g = fit.mixture;
  g.weights = Eigen::VectorXd::Constant(k, 1.0 / static_cast<double>(k));
  g.means = Eigen::MatrixXd::Zero(k, d);
  g.covariances.assign(static_cast<std::size_t>(k), global_cov);

  auto m_step = [&] {
    const Eigen::VectorXd mass = resp.colwise().sum().transpose();
    for (Eigen::Index c = 0; c < k; ++c) {
      if (!(mass(c) > 1e-12 * static_cast<double>(n))) continue;  // keep stale parameters
      const Eigen::RowVectorXd mean = (resp.col(c).transpose() * data) / mass(c);
      const Eigen::MatrixXd centered = data.rowwise() - mean;
      const Eigen::MatrixXd cov =
          centered.transpose() * resp.col(c).asDiagonal() * centered / mass(c);
      g.means.row(c) = mean;
      g.covariances[static_cast<std::size_t>(c)] =
          floored(cov, options.covariance_floor, global_trace);
    }
    g.weights = mass / mass.sum();
    g.factorize();
  };

  m_step();
  double previous = -std::numeric_limits<double>::infinity();
  for (int iter = 1; iter <= options.max_iterations; ++iter) {
    double ll = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::VectorXd logp = component_log_densities(g, data.row(i).transpose());
      const double norm = log_sum_exp(logp);
      ll += norm;
      resp.row(i) = (logp.array() - norm).exp().matrix().transpose();
    }
    fit.iterations = iter;
    fit.log_likelihood = ll;
    if (!std::isfinite(ll)) fail(ErrorCode::NumericFailure, "GMM log-likelihood is not finite");
    if (std::isfinite(previous) &&
        std::abs(ll - previous) < options.relative_tolerance * std::abs(previous)) {
      fit.converged = true;
      break;
    }
    previous = ll;
    m_step();
  }
  return fit;
}

}  // namespace competence
