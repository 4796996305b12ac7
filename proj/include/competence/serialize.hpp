#pragma once

#include <map>
#include <string>
#include <vector>

#include "competence/calibration.hpp"
#include "competence/openworld.hpp"
#include "competence/region.hpp"
#include "competence/scores.hpp"
#include "json.hpp"

namespace competence {

/// Shortest decimal string that round-trips to the same double.
std::string format_double(double value);

nlohmann::json to_json(const ScoreConfig& config);
/// Missing fields keep their defaults; an unknown method is InvalidConfig.
ScoreConfig score_config_from_json(const nlohmann::json& j, ScoreConfig base = {});

/// Field names: alpha, a_ood_alpha, a_ood, a_id, ood_gain, id_gain,
/// coverage_ood, coverage_id, n_accepted_ood. Empty-region values are null.
nlohmann::json to_json(const RegionReport& report);
RegionReport region_report_from_json(const nlohmann::json& j);

nlohmann::json to_json(const MonotonicCalibrator& calibrator);
MonotonicCalibrator calibrator_from_json(const nlohmann::json& j);

nlohmann::json to_json(const std::vector<OpenWorldPoint>& sweep);

/// Header: alpha,coverage_id,coverage_ood,accuracy_id,accuracy_ood. Empty
/// accuracies are written as empty fields.
std::string curve_csv(const TradeoffCurve& curve);

/// Header: index,score.
std::string scores_csv(const ScoreVector& scores);

/// Header: fraction,n_closed,n_open,alpha,a_ood_alpha,a_ood,ood_gain,id_gain,
/// coverage_ood,coverage_open,auroc_id_vs_correct,auroc_id_vs_wrong,auroc_id_vs_open.
std::string openworld_csv(const std::vector<OpenWorldPoint>& sweep);

/// Method defaults that were chosen rather than prescribed, recorded with
/// every output so sweeps can tell them apart.
nlohmann::json method_metadata(const ScoreModel& model);

}  // namespace competence
