#pragma once

#include <filesystem>

#include "competence/types.hpp"

namespace competence {

// A tensor on disk is a JSON header {"rows", "cols", "dtype", "data"} next to
// a raw little-endian payload. "data" is the payload path relative to the
// header; when absent it defaults to the header path with a ".bin" extension.
// dtype is "f32le" for real tensors and "i32le" for label vectors.

Tensor2 load_tensor(const std::filesystem::path& header_path);
LabelVector load_label_tensor(const std::filesystem::path& header_path);

void save_tensor(const std::filesystem::path& header_path, const Tensor2& tensor);
void save_label_tensor(const std::filesystem::path& header_path, const LabelVector& labels);

struct LoadOptions {
  bool check_head = true;
  double head_tolerance = 1e-3;
};

TaskBundle load_task_bundle(const std::filesystem::path& manifest_path,
                            const LoadOptions& options = {});

/// Writes manifest.json plus one header/payload pair per array under `dir`.
/// Returns the manifest path.
std::filesystem::path save_task_bundle(const TaskBundle& bundle,
                                       const std::filesystem::path& dir);

/// Cross-split checks shared by the loader and the synthetic generator.
void validate_bundle(const TaskBundle& bundle, const LoadOptions& options = {});

}  // namespace competence
