#include "competence/openworld.hpp"

#include <cmath>
#include <numeric>

#include "competence/error.hpp"
#include "competence/rng.hpp"

namespace competence {

Mask MixedSet::correct() const {
  Mask out = correctness(split);
  for (std::size_t i = 0; i < origin.size(); ++i) {
    if (origin[i] == Origin::Open) out(static_cast<Eigen::Index>(i)) = false;
  }
  return out;
}

Eigen::Index open_sample_count(Eigen::Index n_closed, double fraction) {
  if (!(fraction >= 0.0 && fraction < 1.0)) {
    fail(ErrorCode::InvalidFraction, "open-world fraction must lie in [0, 1), got " + std::to_string(fraction));
  }
  const double exact = fraction * static_cast<double>(n_closed) / (1.0 - fraction);
  return static_cast<Eigen::Index>(std::floor(exact + 0.5));
}

namespace {

template <class Derived>
Derived stack(const Derived& top, const Derived& bottom_source, const std::vector<Eigen::Index>& rows) {
  Derived out(top.rows() + static_cast<Eigen::Index>(rows.size()), top.cols());
  out.topRows(top.rows()) = top;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.row(top.rows() + static_cast<Eigen::Index>(i)) = bottom_source.row(rows[i]);
  }
  return out;
}

}  // namespace

MixedSet mix_open_world(const LabeledSplit& closed, const LabeledSplit& open, double fraction,
                        std::uint64_t seed) {
  const Eigen::Index count = open_sample_count(closed.size(), fraction);
  if (count > open.size()) {
    fail(ErrorCode::InsufficientOpenPool, "fraction " + std::to_string(fraction) + " needs " +
                                              std::to_string(count) + " open samples, pool has " +
                                              std::to_string(open.size()));
  }
  if (count > 0 && (open.feature_dim() != closed.feature_dim() || open.num_classes() != closed.num_classes())) {
    fail(ErrorCode::InconsistentDimensions, "open-world split does not match the closed split");
  }

  // Partial Fisher-Yates: the first `count` slots form the sample.
  std::vector<Eigen::Index> pool(static_cast<std::size_t>(open.size()));
  std::iota(pool.begin(), pool.end(), 0);
  Rng rng(seed);
  for (Eigen::Index i = 0; i < count; ++i) {
    const auto remaining = static_cast<std::uint64_t>(open.size() - i);
    const auto j = i + static_cast<Eigen::Index>(rng.below(remaining));
    std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
  }
  pool.resize(static_cast<std::size_t>(count));

  MixedSet m;
  m.fraction = fraction;
  m.seed = seed;
  m.open_indices = pool;
  m.origin.assign(static_cast<std::size_t>(closed.size()), Origin::Closed);
  m.origin.resize(static_cast<std::size_t>(closed.size() + count), Origin::Open);
  if (count == 0) {
    m.split = closed;
    return m;
  }
  m.split.features = stack(closed.features, open.features, pool);
  m.split.logits = stack(closed.logits, open.logits, pool);
  m.split.labels.resize(closed.size() + count);
  m.split.labels.head(closed.size()) = closed.labels;
  m.split.labels.tail(count).setConstant(kUnknownClass);
  m.split.predictions.resize(closed.size() + count);
  m.split.predictions.head(closed.size()) = closed.predictions;
  for (Eigen::Index i = 0; i < count; ++i) {
    m.split.predictions(closed.size() + i) = open.predictions(pool[static_cast<std::size_t>(i)]);
  }
  return m;
}

namespace {

ScoreVector gather(const ScoreVector& closed, const ScoreVector& open, const std::vector<Eigen::Index>& rows) {
  ScoreVector out(closed.size() + static_cast<Eigen::Index>(rows.size()));
  out.head(closed.size()) = closed;
  for (std::size_t i = 0; i < rows.size(); ++i) out(closed.size() + static_cast<Eigen::Index>(i)) = open(rows[i]);
  return out;
}

ScoreVector select(const ScoreVector& scores, const std::vector<Eigen::Index>& rows) {
  ScoreVector out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) out(static_cast<Eigen::Index>(i)) = scores(rows[i]);
  return out;
}

}  // namespace

std::vector<OpenWorldPoint> open_world_sweep(const TaskBundle& bundle, const ScoreModel& model,
                                             const std::vector<double>& fractions, double q,
                                             std::uint64_t seed, const ScoringOptions& options) {
  if (!bundle.open_world) fail(ErrorCode::MissingOpenWorldSplit, "bundle has no open_world split");
  for (double f : fractions) open_sample_count(bundle.ood_test.size(), f);

  const ScoreVector id_val = score(model, bundle.id_val, options);
  const ScoreVector closed = score(model, bundle.ood_test, options);
  const ScoreVector open = score(model, *bundle.open_world, options);
  const double alpha = quantile_threshold(id_val, q).alpha;
  const double a_id = accuracy(bundle.id_test);

  std::vector<OpenWorldPoint> out;
  out.reserve(fractions.size());
  for (std::size_t fi = 0; fi < fractions.size(); ++fi) {
    const std::uint64_t stream_seed = Rng::derive(seed, fi).next();
    const MixedSet mixed = mix_open_world(bundle.ood_test, *bundle.open_world, fractions[fi], stream_seed);
    const ScoreVector scores = gather(closed, open, mixed.open_indices);
    const Mask correct = mixed.correct();

    OpenWorldPoint p;
    p.fraction = fractions[fi];
    p.n_closed = bundle.ood_test.size();
    p.n_open = static_cast<Eigen::Index>(mixed.open_indices.size());
    p.report = region_report_at(alpha, id_val, a_id, scores, correct);

    std::vector<Eigen::Index> right, wrong, open_rows;
    for (Eigen::Index i = 0; i < scores.size(); ++i) {
      if (mixed.origin[static_cast<std::size_t>(i)] == Origin::Open) {
        open_rows.push_back(i);
      } else if (correct(i)) {
        right.push_back(i);
      } else {
        wrong.push_back(i);
      }
    }
    p.n_correct = static_cast<Eigen::Index>(right.size());
    p.n_wrong = static_cast<Eigen::Index>(wrong.size());
    if (!right.empty()) p.auroc_id_vs_correct = auroc(id_val, select(scores, right));
    if (!wrong.empty()) p.auroc_id_vs_wrong = auroc(id_val, select(scores, wrong));
    if (!open_rows.empty()) {
      const ScoreVector open_scores = select(scores, open_rows);
      p.auroc_id_vs_open = auroc(id_val, open_scores);
      p.coverage_open = coverage(open_scores, alpha);
    }
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace competence
