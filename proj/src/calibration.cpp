#include "competence/calibration.hpp"

#include <algorithm>
#include <numeric>

#include "competence/error.hpp"

namespace competence {

double MonotonicCalibrator::evaluate(double score) const {
  if (score <= breakpoints.front()) return levels.front();
  if (score >= breakpoints.back()) return levels.back();
  const auto upper = std::upper_bound(breakpoints.begin(), breakpoints.end(), score);
  const auto i = static_cast<std::size_t>(upper - breakpoints.begin()) - 1;
  if (interpolation == Interpolation::Step) return levels[i];
  const double t = (score - breakpoints[i]) / (breakpoints[i + 1] - breakpoints[i]);
  // Convex combination of two ordered levels stays between them.
  return std::clamp(levels[i] + t * (levels[i + 1] - levels[i]), levels[i], levels[i + 1]);
}

MonotonicCalibrator fit_calibrator(const ScoreVector& scores, const Mask& errors,
                                   Interpolation interpolation) {
  if (scores.size() != errors.size()) {
    fail(ErrorCode::LengthMismatch, std::to_string(scores.size()) + " scores but " +
                                        std::to_string(errors.size()) + " error flags");
  }
  if (scores.size() < 2) fail(ErrorCode::TooFewSamples, "calibration needs at least 2 samples");

  std::vector<Eigen::Index> order(static_cast<std::size_t>(scores.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return scores(a) < scores(b); });

  // Merge ties: one point per distinct score with weight = multiplicity.
  std::vector<double> xs, sums, weights;
  for (Eigen::Index idx : order) {
    const double e = errors(idx) ? 1.0 : 0.0;
    if (!xs.empty() && xs.back() == scores(idx)) {
      sums.back() += e;
      weights.back() += 1.0;
    } else {
      xs.push_back(scores(idx));
      sums.push_back(e);
      weights.push_back(1.0);
    }
  }

  // Pool adjacent violators over blocks (sum, weight, first point index).
  struct Block {
    double sum;
    double weight;
    std::size_t first;
  };
  std::vector<Block> blocks;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    blocks.push_back({sums[i], weights[i], i});
    while (blocks.size() > 1) {
      const Block& last = blocks.back();
      const Block& prev = blocks[blocks.size() - 2];
      if (prev.sum * last.weight <= last.sum * prev.weight) break;
      Block merged{prev.sum + last.sum, prev.weight + last.weight, prev.first};
      blocks.pop_back();
      blocks.back() = merged;
    }
  }

  MonotonicCalibrator cal;
  cal.interpolation = interpolation;
  cal.breakpoints = xs;
  cal.levels.resize(xs.size());
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const std::size_t end = b + 1 < blocks.size() ? blocks[b + 1].first : xs.size();
    const double level = std::clamp(blocks[b].sum / blocks[b].weight, 0.0, 1.0);
    std::fill(cal.levels.begin() + static_cast<std::ptrdiff_t>(blocks[b].first),
              cal.levels.begin() + static_cast<std::ptrdiff_t>(end), level);
  }
  // Block means are ordered up to rounding; enforce it exactly.
  for (std::size_t i = 1; i < cal.levels.size(); ++i) {
    cal.levels[i] = std::max(cal.levels[i], cal.levels[i - 1]);
  }
  return cal;
}

ScoreVector transform(const MonotonicCalibrator& calibrator, const ScoreVector& scores) {
  ScoreVector out(scores.size());
  for (Eigen::Index i = 0; i < scores.size(); ++i) out(i) = calibrator.evaluate(scores(i));
  return out;
}

RegionReport calibrated_report(const MonotonicCalibrator& calibrator, double a_id,
                               const ScoreVector& id_scores, const ScoreVector& ood_scores,
                               const Mask& ood_correct) {
  return region_report_at(accuracy_target_threshold(a_id), transform(calibrator, id_scores), a_id,
                          transform(calibrator, ood_scores), ood_correct);
}

}  // namespace competence
