#include "competence/tensor_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "competence/error.hpp"
#include "json.hpp"

namespace competence {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

static_assert(std::endian::native == std::endian::little,
              "payload decoding assumes a little-endian host");

struct Header {
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  std::string dtype;
  fs::path payload;
};

json read_json(const fs::path& path) {
  if (!fs::exists(path)) fail(ErrorCode::MissingFile, path.string());
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorCode::MalformedHeader, path.string() + ": " + e.what());
  }
}

Header read_header(const fs::path& path) {
  const json j = read_json(path);
  Header h;
  try {
    const auto rows = j.at("rows").get<std::int64_t>();
    const auto cols = j.at("cols").get<std::int64_t>();
    if (rows < 0 || cols < 0) fail(ErrorCode::MalformedHeader, path.string() + ": negative shape");
    h.rows = rows;
    h.cols = cols;
    h.dtype = j.value("dtype", std::string("f32le"));
    h.payload = j.contains("data") ? path.parent_path() / j.at("data").get<std::string>()
                                   : fs::path(path).replace_extension(".bin");
  } catch (const json::exception& e) {
    fail(ErrorCode::MalformedHeader, path.string() + ": " + e.what());
  }
  return h;
}

std::string read_payload(const Header& h, std::size_t element_size) {
  if (!fs::exists(h.payload)) fail(ErrorCode::MissingFile, h.payload.string());
  std::ifstream in(h.payload, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open " + h.payload.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  std::string bytes = buf.str();
  const auto expected = static_cast<std::size_t>(h.rows * h.cols) * element_size;
  if (bytes.size() != expected) {
    fail(ErrorCode::ShapeMismatch, h.payload.string() + ": header declares " +
                                       std::to_string(h.rows) + "x" + std::to_string(h.cols) +
                                       " but payload holds " +
                                       std::to_string(bytes.size() / element_size) + " values");
  }
  return bytes;
}

void write_header(const fs::path& header_path, Eigen::Index rows, Eigen::Index cols,
                  const std::string& dtype) {
  const fs::path payload = fs::path(header_path).replace_extension(".bin");
  json j = {{"rows", rows}, {"cols", cols}, {"dtype", dtype}, {"data", payload.filename().string()}};
  if (header_path.has_parent_path()) fs::create_directories(header_path.parent_path());
  std::ofstream out(header_path);
  if (!out) fail(ErrorCode::Io, "cannot write " + header_path.string());
  out << j.dump(2) << '\n';
}

void write_payload(const fs::path& header_path, const void* data, std::size_t bytes) {
  const fs::path payload = fs::path(header_path).replace_extension(".bin");
  std::ofstream out(payload, std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot write " + payload.string());
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
}

}  // namespace

Tensor2 load_tensor(const fs::path& header_path) {
  const Header h = read_header(header_path);
  if (h.dtype != "f32le") {
    fail(ErrorCode::MalformedHeader, header_path.string() + ": expected dtype f32le, got " + h.dtype);
  }
  const std::string bytes = read_payload(h, sizeof(float));
  Tensor2 t(h.rows, h.cols);
  if (!bytes.empty()) std::memcpy(t.data(), bytes.data(), bytes.size());
  for (Eigen::Index i = 0; i < t.size(); ++i) {
    if (!std::isfinite(t.data()[i])) {
      fail(ErrorCode::NonFiniteValue,
           header_path.string() + ": non-finite value at flat index " + std::to_string(i));
    }
  }
  return t;
}

LabelVector load_label_tensor(const fs::path& header_path) {
  const Header h = read_header(header_path);
  if (h.dtype != "i32le") {
    fail(ErrorCode::MalformedHeader, header_path.string() + ": expected dtype i32le, got " + h.dtype);
  }
  if (h.cols != 1 && h.rows != 1 && h.rows * h.cols != 0) {
    fail(ErrorCode::ShapeMismatch, header_path.string() + ": label tensor must be a vector");
  }
  const std::string bytes = read_payload(h, sizeof(std::int32_t));
  LabelVector v(h.rows * h.cols);
  if (!bytes.empty()) std::memcpy(v.data(), bytes.data(), bytes.size());
  return v;
}

void save_tensor(const fs::path& header_path, const Tensor2& tensor) {
  write_header(header_path, tensor.rows(), tensor.cols(), "f32le");
  write_payload(header_path, tensor.data(), sizeof(float) * static_cast<std::size_t>(tensor.size()));
}

void save_label_tensor(const fs::path& header_path, const LabelVector& labels) {
  write_header(header_path, labels.size(), 1, "i32le");
  write_payload(header_path, labels.data(),
                sizeof(std::int32_t) * static_cast<std::size_t>(labels.size()));
}

namespace {

constexpr const char* kSplitNames[] = {"id_train", "id_val", "id_test", "ood_test", "open_world"};

LabeledSplit load_split(const json& entry, const fs::path& base, const std::string& name) {
  auto path_of = [&](const char* key) -> fs::path {
    if (!entry.contains(key)) fail(ErrorCode::MalformedHeader, name + " is missing '" + key + "'");
    try {
      return base / entry.at(key).get<std::string>();
    } catch (const json::exception& e) {
      fail(ErrorCode::MalformedHeader, name + "." + key + ": " + e.what());
    }
  };
  LabeledSplit s;
  s.features = load_tensor(path_of("features"));
  s.logits = load_tensor(path_of("logits"));
  s.labels = load_label_tensor(path_of("labels"));
  if (entry.contains("predictions")) {
    s.predictions = load_label_tensor(path_of("predictions"));
  } else {
    s.predictions = argmax_rows(s.logits);
  }
  return s;
}

LabeledSplit* split_slot(TaskBundle& b, std::string_view name) {
  if (name == "id_train") return &b.id_train;
  if (name == "id_val") return &b.id_val;
  if (name == "id_test") return &b.id_test;
  if (name == "ood_test") return &b.ood_test;
  return nullptr;
}

}  // namespace

void validate_bundle(const TaskBundle& bundle, const LoadOptions& options) {
  const auto d = bundle.head.weight.rows();
  const auto c = bundle.head.weight.cols();
  if (c != bundle.num_classes || bundle.head.bias.size() != c) {
    fail(ErrorCode::InconsistentDimensions,
         "classifier head is " + std::to_string(d) + "x" + std::to_string(c) + " with bias of length " +
             std::to_string(bundle.head.bias.size()) + " but num_classes is " +
             std::to_string(bundle.num_classes));
  }
  struct Named {
    const LabeledSplit* split;
    const char* name;
    bool id;
  };
  std::vector<Named> splits = {{&bundle.id_train, "id_train", true},
                               {&bundle.id_val, "id_val", true},
                               {&bundle.id_test, "id_test", true},
                               {&bundle.ood_test, "ood_test", false}};
  if (bundle.open_world) splits.push_back({&*bundle.open_world, "open_world", false});
  for (const auto& [split, name, id] : splits) {
    if (split->feature_dim() != d) {
      fail(ErrorCode::InconsistentDimensions,
           std::string(name) + " has feature dimension " + std::to_string(split->feature_dim()) +
               " but the head expects " + std::to_string(d));
    }
    validate_split(*split, bundle.num_classes, name, !id);
  }
  if (!options.check_head) return;
  const Eigen::MatrixXd w = bundle.head.weight.cast<double>();
  const Eigen::RowVectorXd b = bundle.head.bias.cast<double>().transpose();
  for (const auto& [split, name, id] : splits) {
    if (!id) continue;
    const Eigen::MatrixXd recomputed = (split->features.cast<double>() * w).rowwise() + b;
    const double worst = split->size() == 0
                             ? 0.0
                             : (recomputed - split->logits.cast<double>()).cwiseAbs().maxCoeff();
    if (worst > options.head_tolerance) {
      fail(ErrorCode::HeadMismatch, std::string(name) + ": logits differ from features*weight+bias by " +
                                        std::to_string(worst));
    }
  }
}

TaskBundle load_task_bundle(const fs::path& manifest_path, const LoadOptions& options) {
  const json manifest = read_json(manifest_path);
  const fs::path base = manifest_path.parent_path();
  TaskBundle bundle;
  try {
    const json& splits = manifest.at("splits");
    for (const char* name : kSplitNames) {
      const bool present = splits.contains(name);
      if (std::string_view(name) == "open_world") {
        if (present) bundle.open_world = load_split(splits.at(name), base, name);
        continue;
      }
      if (!present) fail(ErrorCode::MalformedHeader, std::string("manifest lacks split ") + name);
      *split_slot(bundle, name) = load_split(splits.at(name), base, name);
    }
    const json& head = manifest.at("head");
    bundle.head.weight = load_tensor(base / head.at("weight").get<std::string>());
    const Tensor2 bias = load_tensor(base / head.at("bias").get<std::string>());
    if (bias.rows() != 1 && bias.cols() != 1) {
      fail(ErrorCode::ShapeMismatch, "head bias must be a vector");
    }
    bundle.head.bias = Eigen::Map<const Eigen::VectorXf>(bias.data(), bias.size());
    bundle.num_classes = manifest.contains("num_classes")
                             ? manifest.at("num_classes").get<std::int32_t>()
                             : static_cast<std::int32_t>(bundle.head.weight.cols());
    if (manifest.contains("meta")) {
      for (const auto& [key, value] : manifest.at("meta").items()) {
        bundle.meta[key] = value.is_string() ? value.get<std::string>() : value.dump();
      }
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::MalformedHeader, manifest_path.string() + ": " + e.what());
  }
  validate_bundle(bundle, options);
  return bundle;
}

fs::path save_task_bundle(const TaskBundle& bundle, const fs::path& dir) {
  fs::create_directories(dir);
  json splits = json::object();
  auto write_split = [&](const LabeledSplit& s, const std::string& name) {
    save_tensor(dir / (name + "_features.json"), s.features);
    save_tensor(dir / (name + "_logits.json"), s.logits);
    save_label_tensor(dir / (name + "_labels.json"), s.labels);
    save_label_tensor(dir / (name + "_predictions.json"), s.predictions);
    splits[name] = {{"features", name + "_features.json"},
                    {"logits", name + "_logits.json"},
                    {"labels", name + "_labels.json"},
                    {"predictions", name + "_predictions.json"}};
  };
  write_split(bundle.id_train, "id_train");
  write_split(bundle.id_val, "id_val");
  write_split(bundle.id_test, "id_test");
  write_split(bundle.ood_test, "ood_test");
  if (bundle.open_world) write_split(*bundle.open_world, "open_world");

  save_tensor(dir / "head_weight.json", bundle.head.weight);
  Tensor2 bias = bundle.head.bias.transpose();
  save_tensor(dir / "head_bias.json", bias);

  json meta = json::object();
  for (const auto& [k, v] : bundle.meta) meta[k] = v;
  const json manifest = {{"num_classes", bundle.num_classes},
                         {"meta", meta},
                         {"head", {{"weight", "head_weight.json"}, {"bias", "head_bias.json"}}},
                         {"splits", splits}};
  const fs::path path = dir / "manifest.json";
  std::ofstream out(path);
  if (!out) fail(ErrorCode::Io, "cannot write " + path.string());
  out << manifest.dump(2) << '\n';
  return path;
}

}  // namespace competence
