#include "competence/region.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "competence/error.hpp"

namespace competence {

namespace {

void require_nonempty(Eigen::Index n, const char* what) {
  if (n == 0) fail(ErrorCode::EmptyScores, std::string(what) + " is empty");
}

void require_same_length(Eigen::Index a, Eigen::Index b) {
  if (a != b) {
    fail(ErrorCode::LengthMismatch,
         std::to_string(a) + " scores but " + std::to_string(b) + " correctness flags");
  }
}

std::size_t nearest_rank_index(std::size_t n, double q) {
  if (!(q > 0.0 && q <= 1.0)) {
    fail(ErrorCode::InvalidConfig, "quantile level must lie in (0, 1], got " + std::to_string(q));
  }
  // The relative nudge keeps e.g. 0.95 * 20 from landing on 19 + ulp.
  auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(n) * (1.0 - 1e-12)));
  return std::clamp<std::size_t>(rank, 1, n) - 1;
}

}  // namespace

double nearest_rank(std::vector<double> values, double q) {
  require_nonempty(static_cast<Eigen::Index>(values.size()), "value set");
  const auto idx = nearest_rank_index(values.size(), q);
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(idx), values.end());
  return values[idx];
}

double median(std::vector<double> values) {
  require_nonempty(static_cast<Eigen::Index>(values.size()), "value set");
  std::sort(values.begin(), values.end());
  const auto n = values.size();
  if (n % 2 == 1) return values[n / 2];
  return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

Threshold quantile_threshold(const ScoreVector& scores, double q) {
  require_nonempty(scores.size(), "ID score vector");
  Threshold t;
  t.alpha = nearest_rank(std::vector<double>(scores.begin(), scores.end()), q);
  t.quantile_level = q;
  t.source = ThresholdSource::Quantile;
  return t;
}

double coverage(const ScoreVector& scores, double alpha) {
  require_nonempty(scores.size(), "score vector");
  return static_cast<double>((scores.array() <= alpha).count()) / static_cast<double>(scores.size());
}

std::optional<double> region_accuracy(const ScoreVector& scores, const Mask& correct, double alpha) {
  require_same_length(scores.size(), correct.size());
  Eigen::Index accepted = 0;
  Eigen::Index hits = 0;
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    if (scores(i) <= alpha) {
      ++accepted;
      hits += correct(i) ? 1 : 0;
    }
  }
  if (accepted == 0) return std::nullopt;
  return static_cast<double>(hits) / static_cast<double>(accepted);
}

namespace {

/// Sorted scores with prefix counts, answering "how many s <= alpha and how
/// many of those are correct" by binary search.
class PrefixCounter {
 public:
  PrefixCounter(const ScoreVector& scores, const Mask& correct) : sorted_(static_cast<std::size_t>(scores.size())) {
    std::vector<Eigen::Index> order(sorted_.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return scores(a) < scores(b); });
    hits_.assign(sorted_.size() + 1, 0);
    for (std::size_t i = 0; i < order.size(); ++i) {
      sorted_[i] = scores(order[i]);
      hits_[i + 1] = hits_[i] + (correct(order[i]) ? 1 : 0);
    }
  }

  std::size_t accepted(double alpha) const {
    return static_cast<std::size_t>(std::upper_bound(sorted_.begin(), sorted_.end(), alpha) - sorted_.begin());
  }
  double coverage(double alpha) const {
    return static_cast<double>(accepted(alpha)) / static_cast<double>(sorted_.size());
  }
  std::optional<double> accuracy(double alpha) const {
    const auto a = accepted(alpha);
    if (a == 0) return std::nullopt;
    return static_cast<double>(hits_[a]) / static_cast<double>(a);
  }

 private:
  std::vector<double> sorted_;
  std::vector<long long> hits_;
};

}  // namespace

TradeoffCurve tradeoff_curve(const ScoreVector& ood_scores, const Mask& ood_correct,
                             const ScoreVector& id_scores, const Mask& id_correct) {
  require_nonempty(ood_scores.size(), "OOD score vector");
  require_nonempty(id_scores.size(), "ID score vector");
  require_same_length(ood_scores.size(), ood_correct.size());
  require_same_length(id_scores.size(), id_correct.size());

  std::vector<double> grid(ood_scores.begin(), ood_scores.end());
  grid.insert(grid.end(), id_scores.begin(), id_scores.end());
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  constexpr double kInf = std::numeric_limits<double>::infinity();
  grid.insert(grid.begin(), -kInf);
  grid.push_back(kInf);

  const PrefixCounter ood(ood_scores, ood_correct);
  const PrefixCounter id(id_scores, id_correct);
  TradeoffCurve curve;
  curve.points.reserve(grid.size());
  for (double alpha : grid) {
    curve.points.push_back(
        {alpha, id.coverage(alpha), ood.coverage(alpha), id.accuracy(alpha), ood.accuracy(alpha)});
  }
  return curve;
}

RegionReport region_report_at(double alpha, const ScoreVector& id_scores, double a_id,
                              const ScoreVector& ood_scores, const Mask& ood_correct) {
  require_nonempty(ood_scores.size(), "OOD score vector");
  require_same_length(ood_scores.size(), ood_correct.size());
  RegionReport r;
  r.alpha = alpha;
  r.a_id = a_id;
  r.a_ood = static_cast<double>(ood_correct.count()) / static_cast<double>(ood_correct.size());
  r.a_ood_alpha = region_accuracy(ood_scores, ood_correct, alpha);
  if (r.a_ood_alpha) {
    r.ood_gain = *r.a_ood_alpha - r.a_ood;
    r.id_gain = *r.a_ood_alpha - r.a_id;
  }
  r.n_accepted_ood = static_cast<long long>((ood_scores.array() <= alpha).count());
  r.coverage_ood = static_cast<double>(r.n_accepted_ood) / static_cast<double>(ood_scores.size());
  r.coverage_id = coverage(id_scores, alpha);
  return r;
}

RegionReport region_report(const ScoreVector& id_val_scores, double a_id, const ScoreVector& ood_scores,
                           const Mask& ood_correct, double q) {
  const Threshold t = quantile_threshold(id_val_scores, q);
  return region_report_at(t.alpha, id_val_scores, a_id, ood_scores, ood_correct);
}

double auroc(const ScoreVector& negatives, const ScoreVector& positives) {
  require_nonempty(negatives.size(), "negative score vector");
  require_nonempty(positives.size(), "positive score vector");
  struct Entry {
    double value;
    bool positive;
  };
  std::vector<Entry> all;
  all.reserve(static_cast<std::size_t>(negatives.size() + positives.size()));
  for (double v : negatives) all.push_back({v, false});
  for (double v : positives) all.push_back({v, true});
  std::sort(all.begin(), all.end(), [](const Entry& a, const Entry& b) { return a.value < b.value; });

  // Twice the positive rank sum, with midranks for ties, kept integral.
  long long twice_rank_sum = 0;
  std::size_t i = 0;
  while (i < all.size()) {
    std::size_t j = i;
    long long tied_pos = 0;
    while (j < all.size() && all[j].value == all[i].value) {
      tied_pos += all[j].positive ? 1 : 0;
      ++j;
    }
    // ranks i+1 .. j, midrank (i + 1 + j) / 2
    twice_rank_sum += tied_pos * static_cast<long long>(i + 1 + j);
    i = j;
  }
  const auto n_pos = static_cast<long long>(positives.size());
  const auto n_neg = static_cast<long long>(negatives.size());
  const long long twice_u = twice_rank_sum - n_pos * (n_pos + 1);
  const long long twice_pairs = 2 * n_pos * n_neg;
  // fl(u / p) + fl((p - u) / p) rounds to exactly 1, so swapping the two
  // populations gives the exact complement.
  return static_cast<double>(twice_u) / static_cast<double>(twice_pairs);
}

}  // namespace competence
