#pragma once

#include <vector>

#include "competence/region.hpp"
#include "competence/types.hpp"

namespace competence {

enum class Interpolation { Step, Linear };

/// Monotone non-decreasing map from raw incompetence score to an estimated
/// error probability. Clamped outside [breakpoints.front(), breakpoints.back()].
struct MonotonicCalibrator {
  std::vector<double> breakpoints;  // strictly ascending
  std::vector<double> levels;       // non-decreasing, in [0, 1]
  Interpolation interpolation = Interpolation::Linear;

  /// Step is right-continuous: b_i <= s < b_{i+1} maps to levels[i].
  double evaluate(double score) const;
};

/// Isotonic least-squares fit of the 0/1 error indicator on the score
/// (pool-adjacent-violators). Tied scores are merged into one weighted point,
/// so breakpoints are the distinct score values.
MonotonicCalibrator fit_calibrator(const ScoreVector& scores, const Mask& errors,
                                   Interpolation interpolation = Interpolation::Linear);

ScoreVector transform(const MonotonicCalibrator& calibrator, const ScoreVector& scores);

/// Threshold on the transformed score that targets accuracy a_id.
inline double accuracy_target_threshold(double a_id) { return 1.0 - a_id; }

/// Region report on transformed scores at alpha = 1 - a_id. coverage_id is
/// measured on the transformed id_scores.
RegionReport calibrated_report(const MonotonicCalibrator& calibrator, double a_id,
                               const ScoreVector& id_scores, const ScoreVector& ood_scores,
                               const Mask& ood_correct);

}  // namespace competence
