#include "surfuse/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>

#include "surfuse/parallel.hpp"

namespace surfuse {

namespace fs = std::filesystem;

Image8 PairedSample::load_vision() const { return vision ? *vision : decode_image(vision_path); }
Image8 PairedSample::load_tactile() const { return tactile ? *tactile : decode_image(tactile_path); }

std::vector<int> DatasetManifest::labels() const {
  std::vector<int> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.label);
  return out;
}

std::vector<std::size_t> DatasetManifest::class_counts() const {
  std::vector<std::size_t> counts(classes.size(), 0);
  for (const auto& s : samples) ++counts[static_cast<std::size_t>(s.label)];
  return counts;
}

namespace {

std::map<std::string, fs::path> collect_images(const fs::path& dir) {
  std::map<std::string, fs::path> out;
  if (!fs::is_directory(dir)) return out;
  std::vector<fs::path> entries;
  for (const auto& e : fs::directory_iterator(dir)) entries.push_back(e.path());
  std::sort(entries.begin(), entries.end());
  for (const auto& p : entries) {
    if (!fs::is_regular_file(p) || !is_image_file(p)) {
      warn("skipping non-image entry " + p.string());
      continue;
    }
    const std::string stem = p.stem().string();
    if (!out.emplace(stem, p).second) warn("duplicate image id " + stem + " in " + dir.string() + "; keeping the first");
  }
  return out;
}

}  // namespace

DatasetManifest load_directory(const fs::path& root) {
  if (!fs::exists(root)) throw NotFoundError("dataset root " + root.string() + " does not exist");
  if (!fs::is_directory(root)) throw DatasetError("dataset root " + root.string() + " is not a directory");
  std::vector<fs::path> class_dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) class_dirs.push_back(e.path());
  std::sort(class_dirs.begin(), class_dirs.end());

  DatasetManifest manifest;
  for (const auto& dir : class_dirs) {
    const std::string name = dir.filename().string();
    const auto vision = collect_images(dir / "vision");
    const auto tactile = collect_images(dir / "tactile");
    std::vector<PairedSample> pairs;
    for (const auto& [id, vpath] : vision) {
      const auto it = tactile.find(id);
      if (it == tactile.end()) {
        warn("vision image " + vpath.string() + " has no tactile pair");
        continue;
      }
      PairedSample s;
      s.id = id;
      s.class_name = name;
      s.vision_path = vpath;
      s.tactile_path = it->second;
      pairs.push_back(std::move(s));
    }
    for (const auto& [id, tpath] : tactile)
      if (!vision.count(id)) warn("tactile image " + tpath.string() + " has no vision pair");
    if (pairs.empty()) {
      warn("class directory " + dir.string() + " holds no complete pair; ignored");
      continue;
    }
    const int label = static_cast<int>(manifest.classes.size());
    manifest.classes.push_back(name);
    for (auto& s : pairs) {
      s.label = label;
      manifest.samples.push_back(std::move(s));
    }
  }
  if (manifest.samples.empty()) throw DatasetError("no complete vision/tactile pair under " + root.string());
  manifest.source = {{"kind", "directory"}, {"root", root.string()}};
  return manifest;
}

void SynthSpec::validate() const {
  if (n_classes < 2) throw ConfigError("synthetic data needs at least 2 classes");
  if (per_class < 10) throw ConfigError("synthetic data needs at least 10 samples per class");
  if (image_size < 16) throw ConfigError("synthetic image_size must be at least 16");
}

std::string_view to_string(NoiseModality noise) {
  switch (noise) {
    case NoiseModality::None:
      return "none";
    case NoiseModality::Vision:
      return "vision";
    case NoiseModality::Tactile:
      return "tactile";
  }
  return "none";
}

NoiseModality parse_noise_modality(std::string_view text) {
  if (text == "none") return NoiseModality::None;
  if (text == "vision") return NoiseModality::Vision;
  if (text == "tactile") return NoiseModality::Tactile;
  throw ConfigError("noise modality must be none, vision or tactile, got " + std::string(text));
}

nlohmann::json SynthSpec::to_json() const {
  return {{"kind", "synthetic"},   {"n_classes", n_classes},   {"per_class", per_class},
          {"seed", seed},          {"image_size", image_size}, {"noise", std::string(to_string(noise))}};
}

namespace {

std::uint8_t to_u8(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

// Evenly spread hues so neighbouring classes differ in tint.
std::array<double, 3> class_tint(Index c, Index n_classes) {
  const double h = static_cast<double>(c) / static_cast<double>(n_classes);
  std::array<double, 3> rgb{};
  for (int k = 0; k < 3; ++k) {
    const double phase = 2.0 * std::numbers::pi * (h + k / 3.0);
    rgb[static_cast<std::size_t>(k)] = 0.6 + 0.4 * std::cos(phase);
  }
  return rgb;
}

Image8 noise_image(Index size, Rng& rng) {
  Image8 img{size, size, 3, std::vector<std::uint8_t>(static_cast<std::size_t>(size * size * 3))};
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.below(256));
  return img;
}

Image8 vision_image(Index c, Index n_classes, Index size, Rng& rng) {
  const double theta_c = std::numbers::pi * static_cast<double>(c) / static_cast<double>(n_classes);
  const double cycles_c = 4.0 + 2.5 * static_cast<double>(c % 4);
  struct Wave {
    double kx, ky, phase, amp;
  };
  std::array<Wave, 3> waves{};
  for (auto& w : waves) {
    const double theta = theta_c + rng.normal(0.0, 0.12);
    const double cycles = cycles_c * (1.0 + rng.normal(0.0, 0.08));
    const double k = 2.0 * std::numbers::pi * cycles / static_cast<double>(size);
    w = {k * std::cos(theta), k * std::sin(theta), rng.uniform(0.0, 2.0 * std::numbers::pi), rng.uniform(0.6, 1.0)};
  }
  const auto tint = class_tint(c, n_classes);
  std::array<double, 3> jitter{};
  for (auto& j : jitter) j = rng.normal(0.0, 0.05);
  const double brightness = rng.uniform(0.85, 1.1);

  Image8 img{size, size, 3, std::vector<std::uint8_t>(static_cast<std::size_t>(size * size * 3))};
  for (Index y = 0; y < size; ++y) {
    for (Index x = 0; x < size; ++x) {
      double g = 0;
      for (const auto& w : waves) g += w.amp * std::cos(w.kx * static_cast<double>(x) + w.ky * static_cast<double>(y) + w.phase);
      const double v = 0.5 + 0.16 * g;
      for (Index ch = 0; ch < 3; ++ch) {
        const auto k = static_cast<std::size_t>(ch);
        const double value = brightness * v * (tint[k] + jitter[k]) + rng.normal(0.0, 0.04);
        img.pixels[static_cast<std::size_t>((y * size + x) * 3 + ch)] = to_u8(value);
      }
    }
  }
  return img;
}

Image8 tactile_image(Index c, Index size, Rng& rng) {
  const double area_scale = static_cast<double>(size * size) / (224.0 * 224.0);
  const double density = (18.0 + 26.0 * static_cast<double>(c)) * area_scale;
  const auto count = static_cast<Index>(std::max(1.0, std::round(density * (1.0 + rng.normal(0.0, 0.1)))));
  const double sigma = static_cast<double>(size) * (0.010 + 0.004 * static_cast<double>(c % 3)) *
                       (1.0 + rng.normal(0.0, 0.05));
  const double height = (0.16 + 0.05 * static_cast<double>(c)) * (1.0 + rng.normal(0.0, 0.08));
  const double background = 0.35 + rng.normal(0.0, 0.02);

  std::vector<double> field(static_cast<std::size_t>(size * size), background);
  const Index radius = static_cast<Index>(std::ceil(3.0 * sigma));
  for (Index b = 0; b < count; ++b) {
    const double cx = rng.uniform(0.0, static_cast<double>(size));
    const double cy = rng.uniform(0.0, static_cast<double>(size));
    const double amp = height * rng.uniform(0.7, 1.3);
    const Index x0 = std::max<Index>(0, static_cast<Index>(cx) - radius);
    const Index x1 = std::min<Index>(size - 1, static_cast<Index>(cx) + radius);
    const Index y0 = std::max<Index>(0, static_cast<Index>(cy) - radius);
    const Index y1 = std::min<Index>(size - 1, static_cast<Index>(cy) + radius);
    for (Index y = y0; y <= y1; ++y) {
      for (Index x = x0; x <= x1; ++x) {
        const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
        field[static_cast<std::size_t>(y * size + x)] += amp * std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      }
    }
  }
  // Elastomer frames are near-grey with a faint warm cast.
  Image8 img{size, size, 3, std::vector<std::uint8_t>(static_cast<std::size_t>(size * size * 3))};
  constexpr std::array<double, 3> cast{1.04, 1.0, 0.95};
  for (Index i = 0; i < size * size; ++i) {
    const double v = field[static_cast<std::size_t>(i)] + rng.normal(0.0, 0.02);
    for (std::size_t ch = 0; ch < 3; ++ch) img.pixels[static_cast<std::size_t>(i * 3) + ch] = to_u8(v * cast[ch]);
  }
  return img;
}

std::string class_name(Index c) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "class_%02lld", static_cast<long long>(c));
  return buf;
}

}  // namespace

DatasetManifest synth_generate(const SynthSpec& spec) {
  spec.validate();
  DatasetManifest m;
  for (Index c = 0; c < spec.n_classes; ++c) m.classes.push_back(class_name(c));
  const auto total = static_cast<std::size_t>(spec.n_classes * spec.per_class);
  m.samples.resize(total);
  const Rng root(spec.seed);
  parallel_for(total, [&](std::size_t i) {
    const auto c = static_cast<Index>(i) / spec.per_class;
    Rng rng = root.split(i);
    Rng vrng = rng.split(1);
    Rng trng = rng.split(2);
    auto& s = m.samples[i];
    char id[32];
    std::snprintf(id, sizeof id, "%06zu", i);
    s.id = id;
    s.label = static_cast<int>(c);
    s.class_name = m.classes[static_cast<std::size_t>(c)];
    s.vision = std::make_shared<const Image8>(spec.noise == NoiseModality::Vision
                                                  ? noise_image(spec.image_size, vrng)
                                                  : vision_image(c, spec.n_classes, spec.image_size, vrng));
    s.tactile = std::make_shared<const Image8>(spec.noise == NoiseModality::Tactile ? noise_image(spec.image_size, trng)
                                                                                    : tactile_image(c, spec.image_size, trng));
  });
  m.source = spec.to_json();
  return m;
}

void write_dataset(DatasetManifest& manifest, const fs::path& root) {
  for (const auto& name : manifest.classes) {
    fs::create_directories(root / name / "vision");
    fs::create_directories(root / name / "tactile");
  }
  parallel_for(manifest.samples.size(), [&](std::size_t i) {
    auto& s = manifest.samples[i];
    const fs::path dir = root / s.class_name;
    const fs::path vpath = dir / "vision" / (s.id + ".png");
    const fs::path tpath = dir / "tactile" / (s.id + ".png");
    write_png(vpath, s.load_vision());
    write_png(tpath, s.load_tactile());
    s.vision_path = vpath;
    s.tactile_path = tpath;
  });
  nlohmann::json j;
  j["classes"] = manifest.classes;
  j["source"] = manifest.source;
  j["n_samples"] = manifest.samples.size();
  j["class_counts"] = manifest.class_counts();
  std::ofstream out(root / "manifest.json");
  out << j.dump(2) << '\n';
  if (!out) throw Error("failed to write " + (root / "manifest.json").string());
}

void PreprocessConfig::validate() const {
  if (size < 3) throw ConfigError("preprocess.size must be at least 3");
  for (double s : stddev)
    if (!(s > 0.0)) throw ConfigError("preprocess.std entries must be positive");
}

std::vector<float> preprocess_image(const Image8& image, const PreprocessConfig& config) {
  const FloatImage img = resize_bilinear(to_unit_range(image), config.size, config.size);
  const Index plane = config.size * config.size;
  std::vector<float> out(static_cast<std::size_t>(3 * plane));
  for (Index c = 0; c < 3; ++c) {
    const double mean = config.mean[static_cast<std::size_t>(c)];
    const double inv = 1.0 / config.stddev[static_cast<std::size_t>(c)];
    for (Index i = 0; i < plane; ++i) {
      out[static_cast<std::size_t>(c * plane + i)] =
          static_cast<float>((img.pixels[static_cast<std::size_t>(i * 3 + c)] - mean) * inv);
    }
  }
  return out;
}

std::vector<float> preprocess_file(const fs::path& path, const PreprocessConfig& config) {
  return preprocess_image(decode_image(path), config);
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_indices(std::span<const int> labels,
                                                                                Index n_classes, double ratio,
                                                                                std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("split ratio must lie in (0, 1)");
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(n_classes));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= n_classes) throw IndexError("label out of range in split");
    by_class[static_cast<std::size_t>(labels[i])].push_back(i);
  }
  const Rng root(seed);
  std::vector<std::size_t> first, second;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& idx = by_class[c];
    if (idx.size() < 2) {
      throw StratificationError("class " + std::to_string(c) + " has " + std::to_string(idx.size()) +
                                " samples; stratified splitting needs at least 2");
    }
    Rng rng = root.split(c);
    shuffle(std::span<std::size_t>(idx), rng);
    const auto n = static_cast<double>(idx.size());
    auto k = static_cast<std::size_t>(std::floor(ratio * n + 0.5));
    k = std::clamp<std::size_t>(k, 1, idx.size() - 1);
    first.insert(first.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
    second.insert(second.end(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end());
  }
  std::sort(first.begin(), first.end());
  std::sort(second.begin(), second.end());
  return {first, second};
}

std::pair<DatasetManifest, DatasetManifest> stratified_split(const DatasetManifest& manifest, double train_ratio,
                                                              std::uint64_t seed) {
  const auto labels = manifest.labels();
  const auto [train_idx, test_idx] = stratified_indices(labels, manifest.n_classes(), train_ratio, seed);
  auto pick = [&](const std::vector<std::size_t>& idx) {
    DatasetManifest out;
    out.classes = manifest.classes;
    out.source = manifest.source;
    for (std::size_t i : idx) out.samples.push_back(manifest.samples[i]);
    return out;
  };
  return {pick(train_idx), pick(test_idx)};
}

PreparedSet PreparedSet::subset(std::span<const std::size_t> indices) const {
  PreparedSet out;
  out.image_size = image_size;
  out.classes = classes;
  for (std::size_t i : indices) {
    out.vision.push_back(vision[i]);
    out.tactile.push_back(tactile[i]);
    out.labels.push_back(labels[i]);
  }
  return out;
}

PreparedSet prepare(const DatasetManifest& manifest, const PreprocessConfig& config, const FeatureOptions& features) {
  config.validate();
  PreparedSet set;
  set.image_size = config.size;
  set.classes = manifest.classes;
  const std::size_t n = manifest.samples.size();
  set.vision.resize(n);
  set.tactile.resize(n);
  set.labels.resize(n);
  parallel_for(n, [&](std::size_t i) {
    const auto& s = manifest.samples[i];
    set.vision[i] = preprocess_image(s.load_vision(), config);
    set.tactile[i] = tactile_features(s.load_tactile(), config.size, features);
    set.labels[i] = s.label;
  });
  return set;
}

template <typename S>
Tensor<S> vision_batch(const PreparedSet& set, std::span<const std::size_t> indices) {
  const Index size = set.image_size;
  const auto per = static_cast<std::size_t>(3 * size * size);
  Tensor<S> t({static_cast<Index>(indices.size()), 3, size, size});
  S* dst = t.ptr();
  for (std::size_t i : indices) {
    const auto& src = set.vision.at(i);
    std::copy(src.begin(), src.end(), dst);
    dst += per;
  }
  return t;
}

template <typename S>
Tensor<S> tactile_batch(const PreparedSet& set, std::span<const std::size_t> indices,
                        const FeatureNormalizer& normalizer) {
  const auto k = static_cast<Index>(kTactileFeatureCount);
  Tensor<S> t({static_cast<Index>(indices.size()), k});
  S* dst = t.ptr();
  for (std::size_t i : indices) {
    const auto v = normalize(set.tactile.at(i), normalizer);
    for (double x : v.values) *dst++ = static_cast<S>(x);
  }
  return t;
}

template Tensor<float> vision_batch<float>(const PreparedSet&, std::span<const std::size_t>);
template Tensor<double> vision_batch<double>(const PreparedSet&, std::span<const std::size_t>);
template Tensor<float> tactile_batch<float>(const PreparedSet&, std::span<const std::size_t>, const FeatureNormalizer&);
template Tensor<double> tactile_batch<double>(const PreparedSet&, std::span<const std::size_t>,
                                              const FeatureNormalizer&);

}  // namespace surfuse
