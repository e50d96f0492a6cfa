#include "surfuse/features.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "surfuse/rng.hpp"

namespace surfuse {

namespace {

constexpr std::array<std::string_view, kTactileFeatureCount> kNames = {
    "mean", "std", "skewness", "kurtosis", "entropy", "edge_density", "gradient_mean"};

std::vector<std::size_t> sample_indices(std::size_t n, std::size_t cap, std::uint64_t seed) {
  if (n < 2) throw InsufficientDataError("fit_normalizer needs at least 2 samples, got " + std::to_string(n));
  if (cap < 2 || cap > kNormalizerCap) {
    throw ConfigError("fit_normalizer: cap must lie in [2, " + std::to_string(kNormalizerCap) + "]");
  }
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed, 0x6e6f726dULL);
  shuffle(std::span(idx), rng);
  idx.resize(std::min(n, cap));
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

std::span<const std::string_view, kTactileFeatureCount> tactile_feature_names() { return kNames; }

GrayImage to_grayscale(const FloatImage& rgb) {
  if (rgb.channels != 3) {
    throw FormatError("to_grayscale: expected 3 channels, got " + std::to_string(rgb.channels));
  }
  GrayImage gray{rgb.height, rgb.width, {}};
  gray.pixels.resize(static_cast<std::size_t>(rgb.height * rgb.width));
  for (std::size_t i = 0; i < gray.pixels.size(); ++i) {
    const double r = rgb.pixels[3 * i], g = rgb.pixels[3 * i + 1], b = rgb.pixels[3 * i + 2];
    if (!(r >= 0 && r <= 1 && g >= 0 && g <= 1 && b >= 0 && b <= 1)) {
      throw FormatError("to_grayscale: channel values must lie in [0, 1]");
    }
    gray.pixels[i] = 0.299 * r + 0.587 * g + 0.114 * b;
  }
  return gray;
}

TactileFeatures extract_features(const GrayImage& image, const FeatureOptions& options) {
  if (image.height < 3 || image.width < 3) {
    throw SizeError("extract_features: image must be at least 3x3, got " + std::to_string(image.height) + "x" +
                    std::to_string(image.width));
  }
  const auto& px = image.pixels;
  const double n = static_cast<double>(px.size());
  const double mean = std::accumulate(px.begin(), px.end(), 0.0) / n;
  double m2 = 0, m3 = 0, m4 = 0;
  for (double v : px) {
    const double d = v - mean;
    const double d2 = d * d;
    m2 += d2;
    m3 += d2 * d;
    m4 += d2 * d2;
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;
  // Flat frames have no shape. Test for them exactly: the mean of n equal values is
  // not always that value, and the residue would otherwise read as skew and kurtosis.
  const auto [lo, hi] = std::minmax_element(px.begin(), px.end());
  const bool flat = *lo == *hi;
  if (flat) m2 = 0.0;
  const double stddev = std::sqrt(m2);
  const double skew = flat ? 0.0 : m3 / (m2 * stddev);
  const double kurt = flat ? 0.0 : m4 / (m2 * m2) - 3.0;

  std::array<std::size_t, 256> hist{};
  for (double v : px) {
    const auto bin = static_cast<std::size_t>(std::clamp(std::floor(v * 256.0), 0.0, 255.0));
    ++hist[bin];
  }
  double entropy = 0;
  for (std::size_t count : hist) {
    if (count == 0) continue;
    const double p = static_cast<double>(count) / n;
    entropy -= p * std::log2(p);
  }

  std::size_t edges = 0;
  double grad_sum = 0;
  for (Index y = 1; y + 1 < image.height; ++y) {
    for (Index x = 1; x + 1 < image.width; ++x) {
      const double gx = (image.at(y - 1, x + 1) + 2 * image.at(y, x + 1) + image.at(y + 1, x + 1)) -
                        (image.at(y - 1, x - 1) + 2 * image.at(y, x - 1) + image.at(y + 1, x - 1));
      const double gy = (image.at(y + 1, x - 1) + 2 * image.at(y + 1, x) + image.at(y + 1, x + 1)) -
                        (image.at(y - 1, x - 1) + 2 * image.at(y - 1, x) + image.at(y - 1, x + 1));
      const double mag = std::sqrt(gx * gx + gy * gy);
      grad_sum += mag;
      if (mag > options.edge_threshold) ++edges;
    }
  }
  const double interior = static_cast<double>((image.height - 2) * (image.width - 2));
  return TactileFeatures{{mean, stddev, skew, kurt, entropy, static_cast<double>(edges) / interior,
                          grad_sum / interior}};
}

FeatureNormalizer fit_normalizer(std::span<const TactileFeatures> raw, std::size_t cap, std::uint64_t seed) {
  const auto idx = sample_indices(raw.size(), cap, seed);
  FeatureNormalizer norm;
  norm.n_fitted = idx.size();
  norm.cap = cap;
  norm.seed = seed;
  const double count = static_cast<double>(idx.size());
  for (std::size_t f = 0; f < kTactileFeatureCount; ++f) {
    double mean = 0;
    for (std::size_t i : idx) mean += raw[i][f];
    mean /= count;
    double var = 0;
    for (std::size_t i : idx) var += (raw[i][f] - mean) * (raw[i][f] - mean);
    norm.mean[f] = mean;
    norm.stddev[f] = std::max(std::sqrt(var / count), kStdFloor);
  }
  return norm;
}

FeatureNormalizer fit_normalizer(std::span<const GrayImage> images, std::size_t cap, std::uint64_t seed,
                                 const FeatureOptions& options) {
  const auto idx = sample_indices(images.size(), cap, seed);
  std::vector<TactileFeatures> raw(images.size());
  for (std::size_t i : idx) raw[i] = extract_features(images[i], options);
  return fit_normalizer(raw, cap, seed);
}

TactileFeatures normalize(const TactileFeatures& raw, const FeatureNormalizer& norm) {
  TactileFeatures out;
  for (std::size_t f = 0; f < kTactileFeatureCount; ++f) out[f] = (raw[f] - norm.mean[f]) / norm.stddev[f];
  return out;
}

TactileFeatures tactile_features(const Image8& image, Index size, const FeatureOptions& options) {
  return extract_features(to_grayscale(resize_bilinear(to_unit_range(image), size, size)), options);
}

}  // namespace surfuse
