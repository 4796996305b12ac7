#pragma once

#include <optional>
#include <vector>

#include "competence/types.hpp"

namespace competence {

enum class ThresholdSource { Quantile, AccuracyTarget, Manual };

struct Threshold {
  double alpha = 0.0;
  std::optional<double> quantile_level;
  ThresholdSource source = ThresholdSource::Manual;
};

/// Nearest-rank quantile: alpha is the ceil(q n)-th smallest score, so at
/// least ceil(q n) scores satisfy s <= alpha. q in (0, 1].
Threshold quantile_threshold(const ScoreVector& scores, double q);

/// Fraction of scores with s <= alpha.
double coverage(const ScoreVector& scores, double alpha);

/// Mean of `correct` over {i : s_i <= alpha}; nullopt when that set is empty.
std::optional<double> region_accuracy(const ScoreVector& scores, const Mask& correct, double alpha);

struct TradeoffPoint {
  double alpha = 0.0;
  double coverage_id = 0.0;
  double coverage_ood = 0.0;
  std::optional<double> accuracy_id;
  std::optional<double> accuracy_ood;
};

/// Points at -inf, at every distinct value of the union of both score sets,
/// and at +inf; coverage columns are non-decreasing.
struct TradeoffCurve {
  std::vector<TradeoffPoint> points;
};

TradeoffCurve tradeoff_curve(const ScoreVector& ood_scores, const Mask& ood_correct,
                             const ScoreVector& id_scores, const Mask& id_correct);

struct RegionReport {
  double alpha = 0.0;
  std::optional<double> a_ood_alpha;  // empty region -> nullopt
  double a_ood = 0.0;
  double a_id = 0.0;
  std::optional<double> ood_gain;  // a_ood_alpha - a_ood
  std::optional<double> id_gain;   // a_ood_alpha - a_id
  double coverage_ood = 0.0;
  double coverage_id = 0.0;
  long long n_accepted_ood = 0;
};

/// Summary metrics at a fixed threshold; coverage_id is measured on id_scores.
RegionReport region_report_at(double alpha, const ScoreVector& id_scores, double a_id,
                              const ScoreVector& ood_scores, const Mask& ood_correct);

/// alpha = quantile_threshold(id_val_scores, q), then region_report_at.
RegionReport region_report(const ScoreVector& id_val_scores, double a_id,
                           const ScoreVector& ood_scores, const Mask& ood_correct, double q);

/// P(positive > negative) with ties counted 1/2, via midranks.
double auroc(const ScoreVector& negatives, const ScoreVector& positives);

/// Median of nonempty values (mean of the middle pair for even counts).
double median(std::vector<double> values);

/// Nearest-rank quantile of raw values, q in (0, 1].
double nearest_rank(std::vector<double> values, double q);

}  // namespace competence
