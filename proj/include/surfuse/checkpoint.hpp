#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "surfuse/data.hpp"
#include "surfuse/features.hpp"
#include "surfuse/model.hpp"

namespace surfuse {

template <typename Scalar>
struct Checkpoint {
  SurformerModel<Scalar> model;
  FeatureNormalizer normalizer;
  PreprocessConfig preprocess;
  FeatureOptions features;
  std::vector<std::string> classes;
  nlohmann::json metadata;
};

/// Writes `path` (JSON manifest: configs, normaliser, classes, parameter table with
/// name, shape, byte offset and size) and `path` + ".bin" (little-endian values in
/// registration order). Output bytes depend only on the inputs.
template <typename Scalar>
void save_checkpoint(const std::filesystem::path& path, const SurformerModel<Scalar>& model,
                     const FeatureNormalizer& normalizer, const PreprocessConfig& preprocess,
                     const FeatureOptions& features, const std::vector<std::string>& classes,
                     const nlohmann::json& metadata = nlohmann::json::object());

/// NotFoundError when either file is missing, FormatError for a malformed manifest,
/// IntegrityError when the blob disagrees with the manifest. Values stored at the other
/// precision are converted.
template <typename Scalar>
Checkpoint<Scalar> load_checkpoint(const std::filesystem::path& path);

/// dtype recorded in a manifest, "float32" or "float64".
std::string checkpoint_dtype(const std::filesystem::path& path);

std::filesystem::path blob_path(const std::filesystem::path& manifest);

}  // namespace surfuse
