#include "competence/scores.hpp"

#include <cctype>
#include <cstring>
#include <iomanip>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include "competence/error.hpp"
#include "competence/parallel.hpp"

namespace competence {

std::string_view to_string(ScoreMethod method) noexcept {
  switch (method) {
    case ScoreMethod::Softmax: return "softmax";
    case ScoreMethod::Logit: return "logit";
    case ScoreMethod::Energy: return "energy";
    case ScoreMethod::EnergyReact: return "energy-react";
    case ScoreMethod::DeepKNN: return "deep-knn";
    case ScoreMethod::Mahalanobis: return "mahalanobis";
    case ScoreMethod::GMM: return "gmm";
    case ScoreMethod::PCA: return "pca";
    case ScoreMethod::ViM: return "vim";
  }
  return "unknown";
}

std::optional<ScoreMethod> parse_method(std::string_view name) {
  std::string key;
  for (char ch : name) {
    if (ch == '-' || ch == '_') continue;
    key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  }
  if (key == "softmax" || key == "msp") return ScoreMethod::Softmax;
  if (key == "logit" || key == "maxlogit") return ScoreMethod::Logit;
  if (key == "energy") return ScoreMethod::Energy;
  if (key == "energyreact" || key == "react") return ScoreMethod::EnergyReact;
  if (key == "deepknn" || key == "knn") return ScoreMethod::DeepKNN;
  if (key == "mahalanobis" || key == "maha") return ScoreMethod::Mahalanobis;
  if (key == "gmm") return ScoreMethod::GMM;
  if (key == "pca") return ScoreMethod::PCA;
  if (key == "vim") return ScoreMethod::ViM;
  return std::nullopt;
}

bool uses_features(ScoreMethod method) noexcept {
  switch (method) {
    case ScoreMethod::Softmax:
    case ScoreMethod::Logit:
    case ScoreMethod::Energy:
      return false;
    default:
      return true;
  }
}

double nearest_rank_percentile(std::vector<double> values, double p) {
  if (values.empty()) fail(ErrorCode::EmptyScores, "percentile of an empty set");
  if (!(p > 0.0 && p <= 100.0)) {
    fail(ErrorCode::InvalidConfig, "percentile must lie in (0, 100], got " + std::to_string(p));
  }
  const auto n = values.size();
  auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(n) * (1.0 - 1e-12)));
  rank = std::clamp<std::size_t>(rank, 1, n);
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(rank - 1), values.end());
  return values[rank - 1];
}

namespace {

Eigen::MatrixXd to_double(const Tensor2& t) { return t.cast<double>(); }

/// Symmetric eigendecomposition with eigenvalues ascending.
Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eigen_ascending(const Eigen::MatrixXd& cov) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) {
    fail(ErrorCode::NumericFailure, "eigendecomposition did not converge");
  }
  return solver;
}

ReactState fit_react(const LabeledSplit& train, const ClassifierHead& head, const ScoreConfig& cfg) {
  ReactState s;
  s.weight = head.weight.cast<double>();
  std::vector<double> activations(train.features.data(), train.features.data() + train.features.size());
  s.clip = nearest_rank_percentile(std::move(activations), cfg.react_percentile);
  return s;
}

KnnState fit_knn(const LabeledSplit& train, const ScoreConfig& cfg) {
  const auto n = train.size();
  if (cfg.k < 1 || cfg.k > n) {
    fail(ErrorCode::InvalidConfig,
         "k = " + std::to_string(cfg.k) + " must lie in [1, " + std::to_string(n) + "]");
  }
  KnnState s;
  s.k = cfg.k;
  s.bank = to_double(train.features);
  // same normalization path as queries, so a bank point scores exactly 0
  for (Eigen::Index i = 0; i < n; ++i) s.bank.row(i) = l2_normalized(s.bank.row(i).transpose()).transpose();
  return s;
}

MahalanobisState fit_mahalanobis(const LabeledSplit& train, Eigen::Index num_classes,
                                 const ScoreConfig& cfg) {
  const Eigen::MatrixXd x = to_double(train.features);
  const auto d = x.cols();
  MahalanobisState s;
  s.centroids = Eigen::MatrixXd::Zero(num_classes, d);
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(num_classes);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    s.centroids.row(train.labels(i)) += x.row(i);
    counts(train.labels(i)) += 1.0;
  }
  for (Eigen::Index c = 0; c < num_classes; ++c) {
    if (counts(c) < 2.0) {
      fail(ErrorCode::DegenerateClass, "class " + std::to_string(c) + " has " +
                                           std::to_string(static_cast<int>(counts(c))) +
                                           " training samples; at least 2 are needed");
    }
    s.centroids.row(c) /= counts(c);
  }
  Eigen::MatrixXd centered = x;
  for (Eigen::Index i = 0; i < x.rows(); ++i) centered.row(i) -= s.centroids.row(train.labels(i));
  Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(x.rows());

  // Tikhonov term only when the pooled covariance is numerically singular,
  // so well-posed fits stay exactly affine-equivariant.
  const double ridge = cfg.mahalanobis_epsilon * cov.trace() / static_cast<double>(d);
  const double smallest = eigen_ascending(cov).eigenvalues()(0);
  if (!(smallest > ridge)) {
    cov.diagonal().array() += ridge;
    s.regularized = true;
  }
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success || (s.regularized && !(ridge > 0.0))) {
    fail(ErrorCode::SingularCovariance, "pooled within-class covariance is not positive definite");
  }
  s.precision = llt.solve(Eigen::MatrixXd::Identity(d, d));
  s.precision = 0.5 * (s.precision + s.precision.transpose()).eval();
  return s;
}

GmmState fit_gmm_state(const LabeledSplit& train, Eigen::Index num_classes, const ScoreConfig& cfg) {
  GmmOptions options;
  options.components = cfg.gmm_components > 0 ? cfg.gmm_components : num_classes;
  options.seed = cfg.seed;
  GmmFit fit = fit_gmm(to_double(train.features), options);
  return GmmState{std::move(fit.mixture), fit.converged, fit.iterations};
}

PcaState fit_pca(const LabeledSplit& train, const ScoreConfig& cfg) {
  if (train.size() < 2) fail(ErrorCode::TooFewSamples, "PCA needs at least 2 training samples");
  if (!(cfg.pca_variance > 0.0 && cfg.pca_variance <= 1.0)) {
    fail(ErrorCode::InvalidConfig, "pca_variance must lie in (0, 1]");
  }
  const Eigen::MatrixXd x = to_double(train.features);
  PcaState s;
  s.mean = x.colwise().mean().transpose();
  const Eigen::MatrixXd centered = x.rowwise() - s.mean.transpose();
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(x.rows());
  const auto solver = eigen_ascending(cov);
  const Eigen::VectorXd values = solver.eigenvalues().cwiseMax(0.0);
  const double total = values.sum();
  const auto d = x.cols();
  Eigen::Index q = 0;
  if (total > 0.0) {
    double explained = 0.0;
    while (q < d) {
      explained += values(d - 1 - q);
      ++q;
      if (explained >= cfg.pca_variance * total) break;
    }
  }
  s.basis = solver.eigenvectors().rightCols(q).rowwise().reverse();
  // Scoring projects onto the complement directly; subtracting the principal
  // part instead leaves roundoff of order |x - mean|^2 when q is close to d.
  s.complement = solver.eigenvectors().leftCols(d - q);
  return s;
}

VimState fit_vim(const LabeledSplit& train, const ClassifierHead& head, const ScoreConfig& cfg) {
  const auto d = train.feature_dim();
  if (train.size() < 2) fail(ErrorCode::TooFewSamples, "ViM needs at least 2 training samples");
  VimState s;
  s.principal_dim = cfg.vim_dprime > 0 ? cfg.vim_dprime : std::min<Eigen::Index>(512, d / 2);
  if (s.principal_dim < 1 || s.principal_dim >= d) {
    fail(ErrorCode::InvalidConfig, "ViM principal dimension " + std::to_string(s.principal_dim) +
                                       " must lie in [1, " + std::to_string(d - 1) + "]");
  }
  const Eigen::MatrixXd w_t = head.weight.cast<double>().transpose();
  const Eigen::VectorXd bias = head.bias.cast<double>();
  s.offset = -Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd>(w_t).solve(bias);

  const Eigen::MatrixXd shifted = to_double(train.features).rowwise() - s.offset.transpose();
  const Eigen::MatrixXd second_moment =
      shifted.transpose() * shifted / static_cast<double>(shifted.rows());
  const auto solver = eigen_ascending(second_moment);
  s.residual_basis = solver.eigenvectors().leftCols(d - s.principal_dim);

  const double residual_sum = (shifted * s.residual_basis).rowwise().norm().sum();
  const double logit_sum = train.logits.cast<double>().rowwise().maxCoeff().sum();
  s.alpha = logit_sum / residual_sum;
  if (!std::isfinite(s.alpha) || !(s.alpha > 0.0)) {
    fail(ErrorCode::NumericFailure, "ViM scaling is not positive (sum of max logits " +
                                        std::to_string(logit_sum) + ", sum of residual norms " +
                                        std::to_string(residual_sum) + ")");
  }
  return s;
}

}  // namespace

ScoreModel fit_score_model(ScoreMethod method, const LabeledSplit& id_train, const ClassifierHead& head,
                           ScoreConfig config) {
  config.method = method;
  if (id_train.size() == 0) fail(ErrorCode::TooFewSamples, "ID training split is empty");
  if (head.weight.rows() != id_train.feature_dim() || head.weight.cols() != id_train.num_classes()) {
    fail(ErrorCode::DimensionMismatch, "classifier head does not match the training split");
  }
  ScoreModel model;
  model.method = method;
  model.config = config;
  model.feature_dim = id_train.feature_dim();
  model.num_classes = id_train.num_classes();
  switch (method) {
    case ScoreMethod::Softmax:
    case ScoreMethod::Logit:
    case ScoreMethod::Energy:
      model.state = StatelessState{};
      break;
    case ScoreMethod::EnergyReact:
      model.state = fit_react(id_train, head, config);
      break;
    case ScoreMethod::DeepKNN:
      model.state = fit_knn(id_train, config);
      break;
    case ScoreMethod::Mahalanobis:
      model.state = fit_mahalanobis(id_train, model.num_classes, config);
      break;
    case ScoreMethod::GMM:
      model.state = fit_gmm_state(id_train, model.num_classes, config);
      break;
    case ScoreMethod::PCA:
      model.state = fit_pca(id_train, config);
      break;
    case ScoreMethod::ViM:
      model.state = fit_vim(id_train, head, config);
      break;
  }
  return model;
}

namespace {

void score_knn(const KnnState& s, const Eigen::MatrixXd& queries, Eigen::Index begin, Eigen::Index end,
               ScoreVector& out) {
  // Gram-matrix distances pick candidates; the k-th distance is then
  // recomputed exactly from coordinate differences among near-ties.
  constexpr Eigen::Index kBlock = 256;
  constexpr double kSlack = 1e-9;
  const Eigen::VectorXd bank_sq = s.bank.rowwise().squaredNorm();
  std::vector<double> row;
  std::vector<double> exact;
  for (Eigen::Index b0 = begin; b0 < end; b0 += kBlock) {
    const Eigen::Index rows = std::min(kBlock, end - b0);
    Eigen::MatrixXd q(rows, queries.cols());
    for (Eigen::Index i = 0; i < rows; ++i) q.row(i) = l2_normalized(queries.row(b0 + i).transpose());
    const Eigen::MatrixXd gram = q * s.bank.transpose();
    for (Eigen::Index i = 0; i < rows; ++i) {
      const double q_sq = q.row(i).squaredNorm();
      row.resize(static_cast<std::size_t>(s.bank.rows()));
      for (Eigen::Index j = 0; j < s.bank.rows(); ++j) {
        row[static_cast<std::size_t>(j)] = q_sq + bank_sq(j) - 2.0 * gram(i, j);
      }
      std::vector<double> sorted = row;
      std::nth_element(sorted.begin(), sorted.begin() + (s.k - 1), sorted.end());
      const double cutoff = sorted[static_cast<std::size_t>(s.k - 1)] + kSlack;
      exact.clear();
      for (Eigen::Index j = 0; j < s.bank.rows(); ++j) {
        if (row[static_cast<std::size_t>(j)] <= cutoff) {
          exact.push_back((s.bank.row(j) - q.row(i)).squaredNorm());
        }
      }
      std::nth_element(exact.begin(), exact.begin() + (s.k - 1), exact.end());
      out(b0 + i) = std::sqrt(exact[static_cast<std::size_t>(s.k - 1)]);
    }
  }
}

}  // namespace

ScoreVector score(const ScoreModel& model, const Tensor2& features, const Tensor2& logits,
                  const ScoringOptions& options) {
  const auto n = logits.rows();
  if (logits.cols() != model.num_classes) {
    fail(ErrorCode::DimensionMismatch, "logits have " + std::to_string(logits.cols()) +
                                           " columns, model expects " +
                                           std::to_string(model.num_classes));
  }
  if (uses_features(model.method) &&
      (features.rows() != n || features.cols() != model.feature_dim)) {
    fail(ErrorCode::DimensionMismatch, "features are " + std::to_string(features.rows()) + "x" +
                                           std::to_string(features.cols()) + ", model expects " +
                                           std::to_string(n) + "x" +
                                           std::to_string(model.feature_dim));
  }
  ScoreVector out(n);
  const Eigen::MatrixXd z = logits.cast<double>();
  Eigen::MatrixXd x;
  if (uses_features(model.method)) x = features.cast<double>();

  auto rows = [&](auto&& per_row) {
    parallel_chunks(n, options.threads, [&](Eigen::Index begin, Eigen::Index end) {
      for (Eigen::Index i = begin; i < end; ++i) out(i) = per_row(i);
    });
  };

  switch (model.method) {
    case ScoreMethod::Softmax:
      rows([&](Eigen::Index i) { return softmax_incompetence(z.row(i)); });
      break;
    case ScoreMethod::Logit:
      rows([&](Eigen::Index i) { return logit_incompetence(z.row(i)); });
      break;
    case ScoreMethod::Energy:
      rows([&](Eigen::Index i) { return energy_incompetence(z.row(i)); });
      break;
    case ScoreMethod::EnergyReact: {
      const auto& s = std::get<ReactState>(model.state);
      rows([&](Eigen::Index i) {
        return energy_react_incompetence(x.row(i), z.row(i).transpose(), s.weight, s.clip);
      });
      break;
    }
    case ScoreMethod::DeepKNN: {
      const auto& s = std::get<KnnState>(model.state);
      parallel_chunks(n, options.threads,
                      [&](Eigen::Index begin, Eigen::Index end) { score_knn(s, x, begin, end, out); });
      break;
    }
    case ScoreMethod::Mahalanobis: {
      const auto& s = std::get<MahalanobisState>(model.state);
      rows([&](Eigen::Index i) { return min_mahalanobis(s.centroids, s.precision, x.row(i).transpose()); });
      break;
    }
    case ScoreMethod::GMM: {
      const auto& s = std::get<GmmState>(model.state);
      rows([&](Eigen::Index i) { return gmm_negative_log_likelihood(s.mixture, x.row(i).transpose()); });
      break;
    }
    case ScoreMethod::PCA: {
      const auto& s = std::get<PcaState>(model.state);
      rows([&](Eigen::Index i) { return pca_residual_complement(s.mean, s.complement, x.row(i).transpose()); });
      break;
    }
    case ScoreMethod::ViM: {
      const auto& s = std::get<VimState>(model.state);
      rows([&](Eigen::Index i) {
        const Eigen::VectorXd shifted = x.row(i).transpose() - s.offset;
        const double virtual_logit = s.alpha * (s.residual_basis.transpose() * shifted).norm();
        return virtual_logit_share(z.row(i), virtual_logit);
      });
      break;
    }
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!std::isfinite(out(i))) {
      fail(ErrorCode::NumericFailure, std::string(to_string(model.method)) +
                                          " produced a non-finite score at row " + std::to_string(i));
    }
  }
  return out;
}

namespace {

class Fnv1a {
 public:
  void bytes(const void* data, std::size_t size) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < size; ++i) {
      hash_ ^= p[i];
      hash_ *= 0x100000001b3ULL;
    }
  }
  template <class T>
  void value(const T& v) {
    bytes(&v, sizeof(T));
  }
  template <class Derived>
  void matrix(const Eigen::DenseBase<Derived>& m) {
    value(m.rows());
    value(m.cols());
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      for (Eigen::Index i = 0; i < m.rows(); ++i) value(static_cast<double>(m(i, j)));
    }
  }
  std::uint64_t digest() const { return hash_; }

 private:
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

}  // namespace

std::string model_digest(const ScoreModel& model) {
  Fnv1a h;
  h.value(static_cast<int>(model.method));
  h.value(model.feature_dim);
  h.value(model.num_classes);
  std::visit(
      [&](const auto& s) {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, ReactState>) {
          h.matrix(s.weight);
          h.value(s.clip);
        } else if constexpr (std::is_same_v<S, KnnState>) {
          h.matrix(s.bank);
          h.value(s.k);
        } else if constexpr (std::is_same_v<S, MahalanobisState>) {
          h.matrix(s.centroids);
          h.matrix(s.precision);
        } else if constexpr (std::is_same_v<S, GmmState>) {
          h.matrix(s.mixture.weights);
          h.matrix(s.mixture.means);
          for (const auto& c : s.mixture.covariances) h.matrix(c);
        } else if constexpr (std::is_same_v<S, PcaState>) {
          h.matrix(s.mean);
          h.matrix(s.basis);
          h.matrix(s.complement);
        } else if constexpr (std::is_same_v<S, VimState>) {
          h.matrix(s.offset);
          h.matrix(s.residual_basis);
          h.value(s.alpha);
        }
      },
      model.state);
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << h.digest();
  return out.str();
}

}  // namespace competence
