#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "surfuse/features.hpp"
#include "surfuse/image.hpp"
#include "surfuse/rng.hpp"

namespace surfuse {

/// One (vision, tactile, label) triple. Pixels are either held in memory or read from
/// the paths on demand.
struct PairedSample {
  std::string id;
  int label = 0;
  std::string class_name;
  std::filesystem::path vision_path;
  std::filesystem::path tactile_path;
  std::shared_ptr<const Image8> vision;
  std::shared_ptr<const Image8> tactile;

  Image8 load_vision() const;
  Image8 load_tactile() const;
};

struct DatasetManifest {
  std::vector<std::string> classes;  ///< index is the label
  std::vector<PairedSample> samples;
  nlohmann::json source;

  Index n_classes() const { return static_cast<Index>(classes.size()); }
  std::vector<int> labels() const;
  std::vector<std::size_t> class_counts() const;
};

/// root/<class>/{vision,tactile}/<id>.<png|jpg|jpeg>, paired by stem. Classes sort
/// lexicographically. Unpaired and non-image files are skipped with a warning.
DatasetManifest load_directory(const std::filesystem::path& root);

enum class NoiseModality { None, Vision, Tactile };

struct SynthSpec {
  Index n_classes = 5;
  Index per_class = 100;
  std::uint64_t seed = 7;
  Index image_size = 224;
  /// Replace one modality by i.i.d. uniform pixels, carrying no label information.
  NoiseModality noise = NoiseModality::None;

  void validate() const;
  nlohmann::json to_json() const;
};

std::string_view to_string(NoiseModality noise);
NoiseModality parse_noise_modality(std::string_view text);

/// Procedural paired textures. Vision: oriented band-limited gratings with a class
/// tint. Tactile: Gaussian bump fields whose density, size and height depend on the class.
DatasetManifest synth_generate(const SynthSpec& spec);

/// Write PNGs in the load_directory layout plus manifest.json; fills in the paths.
void write_dataset(DatasetManifest& manifest, const std::filesystem::path& root);

struct PreprocessConfig {
  Index size = 224;
  std::array<double, 3> mean{0.5, 0.5, 0.5};
  std::array<double, 3> stddev{0.5, 0.5, 0.5};

  void validate() const;
};

/// Resize, scale to [0, 1] and standardise per channel; returns CHW values.
std::vector<float> preprocess_image(const Image8& image, const PreprocessConfig& config);
/// As above from a file; FormatError names the path when it cannot be decoded.
std::vector<float> preprocess_file(const std::filesystem::path& path, const PreprocessConfig& config);

/// Per-class seeded shuffle, then the first round_half_up(ratio * n_c) indices of each class
/// go to the first part, clamped so both parts keep at least one sample. Both parts come
/// back in ascending order.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_indices(std::span<const int> labels,
                                                                                Index n_classes, double ratio,
                                                                                std::uint64_t seed);

std::pair<DatasetManifest, DatasetManifest> stratified_split(const DatasetManifest& manifest,
                                                              double train_ratio = 0.8, std::uint64_t seed = 0);

/// Model-ready view of a manifest: preprocessed vision pixels and raw tactile features.
struct PreparedSet {
  Index image_size = 0;
  std::vector<std::string> classes;
  std::vector<std::vector<float>> vision;  ///< CHW, standardised
  std::vector<TactileFeatures> tactile;    ///< raw, un-normalised
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  Index n_classes() const { return static_cast<Index>(classes.size()); }
  PreparedSet subset(std::span<const std::size_t> indices) const;
};

/// Decodes and preprocesses every sample; per-sample work runs on parallel_for.
PreparedSet prepare(const DatasetManifest& manifest, const PreprocessConfig& config,
                    const FeatureOptions& features = {});

template <typename Scalar>
Tensor<Scalar> vision_batch(const PreparedSet& set, std::span<const std::size_t> indices);

template <typename Scalar>
Tensor<Scalar> tactile_batch(const PreparedSet& set, std::span<const std::size_t> indices,
                             const FeatureNormalizer& normalizer);

}  // namespace surfuse
