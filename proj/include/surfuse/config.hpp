#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"
#include "surfuse/data.hpp"
#include "surfuse/features.hpp"
#include "surfuse/model.hpp"
#include "surfuse/training.hpp"

namespace surfuse {

struct BenchConfig {
  Index warmup = 20;
  Index iters = 200;
  Index samples = 8;  ///< distinct test samples cycled through the timed calls
};

/// Everything a CLI run depends on. One master seed drives model initialisation, the
/// train/test split, normaliser sampling and the training shuffles. Class counts come
/// from the data, and the vision input size follows preprocess.size.
struct RunConfig {
  std::uint64_t seed = 7;
  std::string dtype = "float32";
  std::string data;
  std::string out;
  double train_ratio = 0.8;
  PreprocessConfig preprocess;
  FeatureOptions features;
  std::size_t normalizer_cap = kNormalizerCap;
  VisionBranchConfig vision;
  TactileBranchConfig tactile;
  TrainConfig train;
  BenchConfig bench;

  void validate() const;
  nlohmann::json to_json() const;
};

/// Strict parse: unknown keys and ill-typed values raise ConfigError naming the key path.
/// Keys absent from the document keep their value in `base`.
RunConfig run_config_from_json(const nlohmann::json& doc, RunConfig base = {});
RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = {});

// Component (de)serialisers shared with the checkpoint manifest. With `full`, the
// vision entry also carries input_size and n_classes, and the tactile entry n_classes.
nlohmann::json to_json(const VisionBranchConfig& config, bool full);
nlohmann::json to_json(const TactileBranchConfig& config, bool full);
nlohmann::json to_json(const PreprocessConfig& config);
nlohmann::json to_json(const FeatureNormalizer& normalizer);
VisionBranchConfig vision_config_from_json(const nlohmann::json& doc, VisionBranchConfig base, bool full);
TactileBranchConfig tactile_config_from_json(const nlohmann::json& doc, TactileBranchConfig base, bool full);
PreprocessConfig preprocess_config_from_json(const nlohmann::json& doc, PreprocessConfig base);
FeatureNormalizer normalizer_from_json(const nlohmann::json& doc);

}  // namespace surfuse
