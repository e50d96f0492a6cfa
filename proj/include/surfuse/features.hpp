#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "surfuse/image.hpp"

namespace surfuse {

inline constexpr std::size_t kTactileFeatureCount = 7;
/// Lower bound applied to fitted standard deviations.
inline constexpr double kStdFloor = 1e-6;
inline constexpr std::size_t kNormalizerCap = 1000;

/// Single-channel image with intensities in [0, 1], row-major.
struct GrayImage {
  Index height = 0;
  Index width = 0;
  std::vector<double> pixels;

  double at(Index y, Index x) const { return pixels[static_cast<std::size_t>(y * width + x)]; }
};

/// Handcrafted tactile descriptor in fixed order:
/// mean, std, skewness, excess kurtosis, histogram entropy (bits),
/// Sobel edge density, mean Sobel magnitude.
struct TactileFeatures {
  std::array<double, kTactileFeatureCount> values{};

  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }
  bool operator==(const TactileFeatures&) const = default;
};

std::span<const std::string_view, kTactileFeatureCount> tactile_feature_names();

struct FeatureOptions {
  double edge_threshold = 0.1;  ///< on unnormalised Sobel magnitude of [0, 1] intensities
};

/// 0.299 R + 0.587 G + 0.114 B. Throws FormatError unless the image has three channels in [0, 1].
GrayImage to_grayscale(const FloatImage& rgb);

/// Throws SizeError for images smaller than 3x3. Sobel statistics use interior pixels only.
TactileFeatures extract_features(const GrayImage& image, const FeatureOptions& options = {});

/// Dataset statistics used to standardise raw features.
struct FeatureNormalizer {
  TactileFeatures mean;
  TactileFeatures stddev;
  std::size_t n_fitted = 0;
  std::size_t cap = kNormalizerCap;
  std::uint64_t seed = 0;
};

/// Uniform sample of min(cap, N) items without replacement; population mean and std per
/// feature, std floored at kStdFloor.
FeatureNormalizer fit_normalizer(std::span<const TactileFeatures> raw, std::size_t cap = kNormalizerCap,
                                 std::uint64_t seed = 0);
FeatureNormalizer fit_normalizer(std::span<const GrayImage> images, std::size_t cap = kNormalizerCap,
                                 std::uint64_t seed = 0, const FeatureOptions& options = {});

TactileFeatures normalize(const TactileFeatures& raw, const FeatureNormalizer& norm);

/// Full tactile preprocessing of a decoded image: resize to size x size, scale to [0, 1],
/// grayscale, extract.
TactileFeatures tactile_features(const Image8& image, Index size, const FeatureOptions& options = {});

}  // namespace surfuse
