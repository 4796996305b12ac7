#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "competence/region.hpp"
#include "competence/scores.hpp"
#include "competence/types.hpp"

namespace competence {

enum class Origin : std::uint8_t { Closed, Open };

struct MixedSet {
  LabeledSplit split;                     // closed rows first, then open rows
  std::vector<Origin> origin;
  std::vector<Eigen::Index> open_indices; // rows drawn from the open pool
  double fraction = 0.0;
  std::uint64_t seed = 0;

  /// Open rows are always incorrect.
  Mask correct() const;
};

/// Number of open samples so that they make up `fraction` of the mixed set:
/// round-half-up of fraction / (1 - fraction) * n_closed.
Eigen::Index open_sample_count(Eigen::Index n_closed, double fraction);

/// Keeps every closed row and appends open rows drawn uniformly without
/// replacement from a generator seeded with `seed`.
MixedSet mix_open_world(const LabeledSplit& closed, const LabeledSplit& open, double fraction,
                        std::uint64_t seed);

struct OpenWorldPoint {
  double fraction = 0.0;
  Eigen::Index n_closed = 0;
  Eigen::Index n_open = 0;
  RegionReport report;
  double coverage_open = 0.0;  // share of open rows inside the region (0 if none)
  std::optional<double> auroc_id_vs_correct;
  std::optional<double> auroc_id_vs_wrong;
  std::optional<double> auroc_id_vs_open;
  Eigen::Index n_correct = 0;
  Eigen::Index n_wrong = 0;
};

/// For each fraction f_i, mixes bundle.ood_test with bundle.open_world using
/// the stream derived from (seed, i) and evaluates against the ID-validation
/// threshold at level q. AUROCs use the ID-validation scores as negatives.
std::vector<OpenWorldPoint> open_world_sweep(const TaskBundle& bundle, const ScoreModel& model,
                                             const std::vector<double>& fractions, double q,
                                             std::uint64_t seed, const ScoringOptions& options = {});

}  // namespace competence
