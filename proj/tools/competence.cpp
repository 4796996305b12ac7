#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include "CLI11.hpp"
#include "competence/calibration.hpp"
#include "competence/error.hpp"
#include "competence/openworld.hpp"
#include "competence/parallel.hpp"
#include "competence/region.hpp"
#include "competence/scores.hpp"
#include "competence/serialize.hpp"
#include "competence/synthetic.hpp"
#include "competence/tensor_io.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace competence;

namespace {

struct GlobalOptions {
  std::string bundle;
  std::string method;
  std::string config;
  double q = 0.95;
  std::uint64_t seed = 0;
  unsigned threads = 0;
  std::string out = ".";
  bool json_errors = false;
  bool no_head_check = false;
};

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::MissingFile, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorCode::MalformedHeader, path.string() + ": " + e.what());
  }
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::Io, "cannot write " + path.string());
  out << text;
  if (!out) fail(ErrorCode::Io, "write failed for " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_file(path, j.dump(2) + "\n"); }

fs::path output_dir(const GlobalOptions& g) {
  const fs::path dir(g.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorCode::Io, "cannot create " + dir.string() + ": " + ec.message());
  return dir;
}

json config_file(const GlobalOptions& g) {
  if (g.config.empty()) return json::object();
  return read_json_file(g.config);
}

ScoreConfig score_config(const GlobalOptions& g) {
  json j = config_file(g);
  if (j.contains("score")) j = j.at("score");
  ScoreConfig c = score_config_from_json(j);
  if (!g.method.empty()) {
    const auto m = parse_method(g.method);
    if (!m) throw UsageError("unknown score method '" + g.method + "'");
    c.method = *m;
  } else if (!j.contains("method")) {
    throw UsageError("--method is required");
  }
  return c;
}

void check_q(double q) {
  if (!(q > 0.0 && q <= 1.0)) throw UsageError("--q must be in (0, 1]");
}

TaskBundle bundle(const GlobalOptions& g) {
  if (g.bundle.empty()) throw UsageError("--bundle is required");
  fs::path path(g.bundle);
  if (fs::is_directory(path)) path /= "manifest.json";
  LoadOptions opts;
  opts.check_head = !g.no_head_check;
  return load_task_bundle(path, opts);
}

ScoringOptions scoring(const GlobalOptions& g) {
  ScoringOptions o;
  o.threads = g.threads > 0 ? g.threads : default_threads();
  return o;
}

json run_meta(const GlobalOptions& g, const TaskBundle& b, const ScoreModel& m) {
  json meta = method_metadata(m);
  meta["q"] = g.q;
  meta["seed"] = g.seed;
  json bm = json::object();
  for (const auto& [k, v] : b.meta) bm[k] = v;
  meta["bundle_meta"] = bm;
  return meta;
}

const LabeledSplit* split_by_name(const TaskBundle& b, const std::string& name) {
  if (name == "id_train") return &b.id_train;
  if (name == "id_val") return &b.id_val;
  if (name == "id_test") return &b.id_test;
  if (name == "ood_test") return &b.ood_test;
  if (name == "open_world") {
    if (!b.open_world) fail(ErrorCode::MissingOpenWorldSplit, "bundle has no open_world split");
    return &*b.open_world;
  }
  throw UsageError("unknown split '" + name + "'");
}

void cmd_score(const GlobalOptions& g, std::vector<std::string> splits) {
  const ScoreConfig cfg = score_config(g);
  const TaskBundle b = bundle(g);
  if (splits.empty()) {
    splits = {"id_train", "id_val", "id_test", "ood_test"};
    if (b.open_world) splits.push_back("open_world");
  }
  const ScoreModel m = fit_score_model(cfg.method, b.id_train, b.head, cfg);
  const fs::path dir = output_dir(g);
  json meta = run_meta(g, b, m);
  meta["splits"] = splits;
  for (const auto& name : splits) {
    const ScoreVector s = score(m, *split_by_name(b, name), scoring(g));
    write_file(dir / (name + "_scores.csv"), scores_csv(s));
  }
  write_json(dir / "score_meta.json", meta);
}

struct Fitted {
  TaskBundle bundle;
  ScoreModel model;
  ScoreVector id_val, id_test, ood;
};

Fitted fit_and_score(const GlobalOptions& g) {
  const ScoreConfig cfg = score_config(g);
  check_q(g.q);
  Fitted f{bundle(g), {}, {}, {}, {}};
  f.model = fit_score_model(cfg.method, f.bundle.id_train, f.bundle.head, cfg);
  f.id_val = score(f.model, f.bundle.id_val, scoring(g));
  f.id_test = score(f.model, f.bundle.id_test, scoring(g));
  f.ood = score(f.model, f.bundle.ood_test, scoring(g));
  return f;
}

void cmd_report(const GlobalOptions& g, bool with_report) {
  const Fitted f = fit_and_score(g);
  const fs::path dir = output_dir(g);
  const Mask ood_correct = correctness(f.bundle.ood_test);
  if (with_report) {
    const RegionReport r = region_report(f.id_val, accuracy(f.bundle.id_test), f.ood, ood_correct, g.q);
    json j = to_json(r);
    j["meta"] = run_meta(g, f.bundle, f.model);
    write_json(dir / "report.json", j);
  }
  const TradeoffCurve c = tradeoff_curve(f.ood, ood_correct, f.id_test, correctness(f.bundle.id_test));
  write_file(dir / "curve.csv", curve_csv(c));
}

void cmd_calibrate(const GlobalOptions& g, const std::string& interpolation) {
  Interpolation mode = Interpolation::Linear;
  if (interpolation == "step") mode = Interpolation::Step;
  else if (interpolation != "linear") throw UsageError("--interpolation must be step or linear");
  const Fitted f = fit_and_score(g);
  const Mask errors = !correctness(f.bundle.id_val);
  const MonotonicCalibrator cal = fit_calibrator(f.id_val, errors, mode);
  const RegionReport r = calibrated_report(cal, accuracy(f.bundle.id_test), f.id_test, f.ood,
                                           correctness(f.bundle.ood_test));
  const fs::path dir = output_dir(g);
  json meta = run_meta(g, f.bundle, f.model);
  meta.erase("q");
  meta["fitted_on"] = "id_val";
  json cj = to_json(cal);
  cj["meta"] = meta;
  write_json(dir / "calibrator.json", cj);
  json rj = to_json(r);
  rj["threshold"] = accuracy_target_threshold(r.a_id);
  rj["meta"] = meta;
  write_json(dir / "calibrated_report.json", rj);
}

void cmd_openworld(const GlobalOptions& g, const std::vector<double>& fractions) {
  for (double f : fractions)
    if (!(f >= 0.0 && f < 1.0)) throw UsageError("fractions must lie in [0, 1)");
  const ScoreConfig cfg = score_config(g);
  check_q(g.q);
  const TaskBundle b = bundle(g);
  if (!b.open_world) fail(ErrorCode::MissingOpenWorldSplit, "bundle has no open_world split");
  const ScoreModel m = fit_score_model(cfg.method, b.id_train, b.head, cfg);
  const auto sweep = open_world_sweep(b, m, fractions, g.q, g.seed, scoring(g));
  const fs::path dir = output_dir(g);
  json j = {{"points", to_json(sweep)}, {"meta", run_meta(g, b, m)}};
  write_json(dir / "openworld.json", j);
  write_file(dir / "openworld.csv", openworld_csv(sweep));
}

template <class T>
void take(const json& j, const char* key, T& field) {
  if (!j.contains(key)) return;
  try {
    field = j.at(key).get<T>();
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidConfig, std::string(key) + ": " + e.what());
  }
}

void cmd_synth(const GlobalOptions& g, SyntheticConfig c, const CLI::App& sub) {
  json j = config_file(g);
  if (j.contains("synthetic")) j = j.at("synthetic");
  SyntheticConfig file = c;
  take(j, "num_classes", file.num_classes);
  take(j, "feature_dim", file.feature_dim);
  take(j, "n_train", file.n_train);
  take(j, "n_val", file.n_val);
  take(j, "n_test", file.n_test);
  take(j, "n_ood", file.n_ood);
  take(j, "n_open", file.n_open);
  take(j, "radius", file.radius);
  take(j, "sigma", file.sigma);
  take(j, "delta", file.delta);
  take(j, "open_classes", file.open_classes);
  take(j, "open_radius", file.open_radius);
  take(j, "seed", file.seed);
  // explicit flags win over the config file
  auto pick = [&](const char* flag, auto& field, const auto& from_file) {
    if (sub.count(flag) == 0) field = from_file;
  };
  pick("--classes", c.num_classes, file.num_classes);
  pick("--dim", c.feature_dim, file.feature_dim);
  pick("--n-train", c.n_train, file.n_train);
  pick("--n-val", c.n_val, file.n_val);
  pick("--n-test", c.n_test, file.n_test);
  pick("--n-ood", c.n_ood, file.n_ood);
  pick("--n-open", c.n_open, file.n_open);
  pick("--radius", c.radius, file.radius);
  pick("--sigma", c.sigma, file.sigma);
  pick("--delta", c.delta, file.delta);
  pick("--open-classes", c.open_classes, file.open_classes);
  pick("--open-radius", c.open_radius, file.open_radius);
  c.seed = file.seed;
  if (sub.get_parent()->count("--seed") > 0) c.seed = g.seed;
  const TaskBundle t = generate_synthetic_task(c);
  save_task_bundle(t, output_dir(g));
}

const std::vector<std::string> kMetrics = {"alpha",   "a_ood_alpha",  "a_ood",      "a_id",
                                           "ood_gain", "id_gain", "coverage_ood", "coverage_id"};

std::string group_value(const json& report, const std::string& key) {
  const json* v = nullptr;
  if (report.contains("meta")) {
    const json& meta = report.at("meta");
    if (meta.contains(key)) v = &meta.at(key);
    else if (meta.contains("bundle_meta") && meta.at("bundle_meta").contains(key)) v = &meta.at("bundle_meta").at(key);
  }
  if (!v) return "";
  if (v->is_string()) return v->get<std::string>();
  if (v->is_number_float()) return format_double(v->get<double>());
  return v->dump();
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

void cmd_aggregate(const GlobalOptions& g, const std::vector<std::string>& files,
                   const std::vector<std::string>& keys) {
  if (files.empty()) throw UsageError("aggregate needs at least one report file");
  std::map<std::vector<std::string>, std::map<std::string, std::vector<double>>> groups;
  for (const auto& file : files) {
    const json report = read_json_file(file);
    region_report_from_json(report);  // schema check
    std::vector<std::string> group;
    for (const auto& k : keys) group.push_back(group_value(report, k));
    auto& metrics = groups[group];
    for (const auto& m : kMetrics) {
      auto& values = metrics[m];
      if (!report.at(m).is_null()) values.push_back(report.at(m).get<double>());
    }
  }
  std::ostringstream out;
  for (const auto& k : keys) out << csv_field(k) << ',';
  out << "metric,n,median,q05,q95\n";
  for (const auto& [group, metrics] : groups) {
    for (const auto& m : kMetrics) {
      const auto& values = metrics.at(m);
      for (const auto& v : group) out << csv_field(v) << ',';
      out << m << ',' << values.size() << ',';
      if (values.empty()) {
        out << ",,\n";
        continue;
      }
      out << format_double(median(values)) << ',' << format_double(nearest_rank(values, 0.05)) << ','
          << format_double(nearest_rank(values, 0.95)) << '\n';
    }
  }
  write_file(output_dir(g) / "aggregate.csv", out.str());
}

int report_error(const GlobalOptions& g, int code, std::string_view name, const std::string& message) {
  if (g.json_errors) {
    std::cerr << json{{"error", name}, {"message", message}, {"exit_code", code}}.dump() << "\n";
  } else {
    std::cerr << "error: " << message << "\n";
  }
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Competence regions for frozen classifiers"};
  app.require_subcommand(1);
  GlobalOptions g;
  app.add_option("--bundle", g.bundle, "Bundle manifest or directory");
  app.add_option("--method", g.method, "Score method");
  app.add_option("--config", g.config, "JSON config file");
  app.add_option("--q", g.q, "ID quantile level for the threshold");
  app.add_option("--seed", g.seed, "Seed");
  app.add_option("--threads", g.threads, "Worker threads (default: COMPETENCE_KIT_THREADS or 1)");
  app.add_option("--out", g.out, "Output directory");
  app.add_flag("--json-errors", g.json_errors, "Print errors as JSON on stderr");
  app.add_flag("--no-head-check", g.no_head_check, "Skip the head/logit consistency check");

  std::vector<std::string> splits;
  auto* score = app.add_subcommand("score", "Score bundle splits");
  score->add_option("--split", splits, "Splits to score (default: all)")->delimiter(',')->allow_extra_args(false);
  auto* report = app.add_subcommand("report", "Region report and trade-off curve");
  auto* curve = app.add_subcommand("curve", "Trade-off curve only");
  std::string interpolation = "linear";
  auto* calibrate = app.add_subcommand("calibrate", "Accuracy-targeted calibrated threshold");
  calibrate->add_option("--interpolation", interpolation, "step or linear");
  std::vector<double> fractions = {0.0, 0.05, 0.1, 0.15, 0.2, 0.25};
  auto* openworld = app.add_subcommand("openworld", "Open-world contamination sweep");
  openworld->add_option("--fractions", fractions, "Open-world fractions")->delimiter(',')->allow_extra_args(false);
  SyntheticConfig synth_config;
  auto* synth = app.add_subcommand("synth", "Write a synthetic bundle");
  synth->add_option("--classes", synth_config.num_classes);
  synth->add_option("--dim", synth_config.feature_dim);
  synth->add_option("--n-train", synth_config.n_train);
  synth->add_option("--n-val", synth_config.n_val);
  synth->add_option("--n-test", synth_config.n_test);
  synth->add_option("--n-ood", synth_config.n_ood);
  synth->add_option("--n-open", synth_config.n_open);
  synth->add_option("--radius", synth_config.radius);
  synth->add_option("--sigma", synth_config.sigma);
  synth->add_option("--delta", synth_config.delta);
  synth->add_option("--open-classes", synth_config.open_classes);
  synth->add_option("--open-radius", synth_config.open_radius);
  std::vector<std::string> report_files, group_by;
  auto* aggregate = app.add_subcommand("aggregate", "Medians and 5%/95% quantiles over reports");
  aggregate->add_option("reports", report_files, "Report JSON files");
  aggregate->add_option("--group-by", group_by, "Meta keys to group by")->delimiter(',')->allow_extra_args(false);
  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error(g, 2, "UsageError", e.what());
  }

  try {
    if (*score) cmd_score(g, splits);
    else if (*report) cmd_report(g, true);
    else if (*curve) cmd_report(g, false);
    else if (*calibrate) cmd_calibrate(g, interpolation);
    else if (*openworld) cmd_openworld(g, fractions);
    else if (*synth) cmd_synth(g, synth_config, *synth);
    else if (*aggregate) cmd_aggregate(g, report_files, group_by);
  } catch (const UsageError& e) {
    return report_error(g, 2, "UsageError", e.what());
  } catch (const Error& e) {
    return report_error(g, exit_code(e.code()), to_string(e.code()), e.what());
  } catch (const std::bad_alloc&) {
    return report_error(g, 5, "NumericFailure", "out of memory");
  } catch (const std::exception& e) {
    return report_error(g, 4, "Error", e.what());
  }
  return 0;
}
