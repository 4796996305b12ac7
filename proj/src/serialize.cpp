#include "competence/serialize.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "competence/error.hpp"

namespace competence {

using nlohmann::json;

std::string format_double(double value) {
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  if (std::isnan(value)) return "nan";
  char buf[64];
  const auto result = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, result.ptr);
}

namespace {

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> optional_from(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

std::string optional_field(const std::optional<double>& v) { return v ? format_double(*v) : ""; }

}  // namespace

json to_json(const ScoreConfig& c) {
  return {{"method", std::string(to_string(c.method))},
          {"k", c.k},
          {"gmm_components", c.gmm_components},
          {"pca_variance", c.pca_variance},
          {"vim_dprime", c.vim_dprime},
          {"react_percentile", c.react_percentile},
          {"seed", c.seed}};
}

ScoreConfig score_config_from_json(const json& j, ScoreConfig c) {
  if (!j.is_object()) fail(ErrorCode::InvalidConfig, "score config must be a JSON object");
  try {
    if (j.contains("method")) {
      const auto name = j.at("method").get<std::string>();
      const auto method = parse_method(name);
      if (!method) fail(ErrorCode::InvalidConfig, "unknown score method '" + name + "'");
      c.method = *method;
    }
    if (j.contains("k")) c.k = j.at("k").get<Eigen::Index>();
    if (j.contains("gmm_components")) c.gmm_components = j.at("gmm_components").get<Eigen::Index>();
    if (j.contains("pca_variance")) c.pca_variance = j.at("pca_variance").get<double>();
    if (j.contains("vim_dprime")) c.vim_dprime = j.at("vim_dprime").get<Eigen::Index>();
    if (j.contains("react_percentile")) c.react_percentile = j.at("react_percentile").get<double>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidConfig, e.what());
  }
  return c;
}

json to_json(const RegionReport& r) {
  return {{"alpha", r.alpha},
          {"a_ood_alpha", optional_number(r.a_ood_alpha)},
          {"a_ood", r.a_ood},
          {"a_id", r.a_id},
          {"ood_gain", optional_number(r.ood_gain)},
          {"id_gain", optional_number(r.id_gain)},
          {"coverage_ood", r.coverage_ood},
          {"coverage_id", r.coverage_id},
          {"n_accepted_ood", r.n_accepted_ood}};
}

RegionReport region_report_from_json(const json& j) {
  RegionReport r;
  try {
    r.alpha = j.at("alpha").get<double>();
    r.a_ood_alpha = optional_from(j, "a_ood_alpha");
    r.a_ood = j.at("a_ood").get<double>();
    r.a_id = j.at("a_id").get<double>();
    r.ood_gain = optional_from(j, "ood_gain");
    r.id_gain = optional_from(j, "id_gain");
    r.coverage_ood = j.at("coverage_ood").get<double>();
    r.coverage_id = j.at("coverage_id").get<double>();
    r.n_accepted_ood = j.at("n_accepted_ood").get<long long>();
  } catch (const json::exception& e) {
    fail(ErrorCode::MalformedHeader, std::string("region report: ") + e.what());
  }
  return r;
}

json to_json(const MonotonicCalibrator& c) {
  return {{"breakpoints", c.breakpoints},
          {"levels", c.levels},
          {"interpolation", c.interpolation == Interpolation::Step ? "step" : "linear"}};
}

MonotonicCalibrator calibrator_from_json(const json& j) {
  MonotonicCalibrator c;
  try {
    c.breakpoints = j.at("breakpoints").get<std::vector<double>>();
    c.levels = j.at("levels").get<std::vector<double>>();
    const auto mode = j.value("interpolation", std::string("linear"));
    if (mode != "step" && mode != "linear") fail(ErrorCode::MalformedHeader, "interpolation must be step or linear");
    c.interpolation = mode == "step" ? Interpolation::Step : Interpolation::Linear;
  } catch (const json::exception& e) {
    fail(ErrorCode::MalformedHeader, std::string("calibrator: ") + e.what());
  }
  if (c.breakpoints.empty() || c.breakpoints.size() != c.levels.size()) {
    fail(ErrorCode::MalformedHeader, "calibrator needs equally many (>= 1) breakpoints and levels");
  }
  for (std::size_t i = 0; i < c.levels.size(); ++i) {
    const bool ascending = i == 0 || c.breakpoints[i] > c.breakpoints[i - 1];
    const bool ordered = i == 0 || c.levels[i] >= c.levels[i - 1];
    if (!ascending || !ordered || c.levels[i] < 0.0 || c.levels[i] > 1.0) {
      fail(ErrorCode::MalformedHeader, "calibrator is not monotone at entry " + std::to_string(i));
    }
  }
  return c;
}

json to_json(const std::vector<OpenWorldPoint>& sweep) {
  json out = json::array();
  for (const auto& p : sweep) {
    out.push_back({{"fraction", p.fraction},
                   {"n_closed", p.n_closed},
                   {"n_open", p.n_open},
                   {"n_correct", p.n_correct},
                   {"n_wrong", p.n_wrong},
                   {"report", to_json(p.report)},
                   {"coverage_open", p.coverage_open},
                   {"auroc_id_vs_correct", optional_number(p.auroc_id_vs_correct)},
                   {"auroc_id_vs_wrong", optional_number(p.auroc_id_vs_wrong)},
                   {"auroc_id_vs_open", optional_number(p.auroc_id_vs_open)}});
  }
  return out;
}

std::string curve_csv(const TradeoffCurve& curve) {
  std::ostringstream out;
  out << "alpha,coverage_id,coverage_ood,accuracy_id,accuracy_ood\n";
  for (const auto& p : curve.points) {
    out << format_double(p.alpha) << ',' << format_double(p.coverage_id) << ','
        << format_double(p.coverage_ood) << ',' << optional_field(p.accuracy_id) << ','
        << optional_field(p.accuracy_ood) << '\n';
  }
  return out.str();
}

std::string scores_csv(const ScoreVector& scores) {
  std::ostringstream out;
  out << "index,score\n";
  for (Eigen::Index i = 0; i < scores.size(); ++i) out << i << ',' << format_double(scores(i)) << '\n';
  return out.str();
}

std::string openworld_csv(const std::vector<OpenWorldPoint>& sweep) {
  std::ostringstream out;
  out << "fraction,n_closed,n_open,alpha,a_ood_alpha,a_ood,ood_gain,id_gain,coverage_ood,"
         "coverage_open,auroc_id_vs_correct,auroc_id_vs_wrong,auroc_id_vs_open\n";
  for (const auto& p : sweep) {
    out << format_double(p.fraction) << ',' << p.n_closed << ',' << p.n_open << ','
        << format_double(p.report.alpha) << ',' << optional_field(p.report.a_ood_alpha) << ','
        << format_double(p.report.a_ood) << ',' << optional_field(p.report.ood_gain) << ','
        << optional_field(p.report.id_gain) << ',' << format_double(p.report.coverage_ood) << ','
        << format_double(p.coverage_open) << ',' << optional_field(p.auroc_id_vs_correct) << ','
        << optional_field(p.auroc_id_vs_wrong) << ',' << optional_field(p.auroc_id_vs_open) << '\n';
  }
  return out.str();
}

json method_metadata(const ScoreModel& model) {
  json meta = {{"method", std::string(to_string(model.method))},
               {"config", to_json(model.config)},
               {"feature_dim", model.feature_dim},
               {"num_classes", model.num_classes},
               {"fit_digest", model_digest(model)}};
  std::visit(
      [&](const auto& s) {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, ReactState>) {
          meta["react_clip"] = s.clip;
          meta["defaulted"] = {"react_percentile"};
        } else if constexpr (std::is_same_v<S, KnnState>) {
          meta["k"] = s.k;
        } else if constexpr (std::is_same_v<S, MahalanobisState>) {
          meta["distance"] = "squared";
          meta["regularized"] = s.regularized;
        } else if constexpr (std::is_same_v<S, GmmState>) {
          meta["gmm_components"] = s.mixture.components();
          meta["em_converged"] = s.converged;
          meta["em_iterations"] = s.iterations;
          meta["defaulted"] = {"gmm_components"};
        } else if constexpr (std::is_same_v<S, PcaState>) {
          meta["pca_rank"] = s.basis.cols();
          meta["defaulted"] = {"pca_variance"};
        } else if constexpr (std::is_same_v<S, VimState>) {
          meta["vim_dprime"] = s.principal_dim;
          meta["vim_alpha"] = s.alpha;
          meta["vim_form"] = "softmax";
          meta["defaulted"] = {"vim_dprime", "vim_form"};
        }
      },
      model.state);
  return meta;
}

}  // namespace competence
