#include "surfuse/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>

namespace surfuse {

std::string_view to_string(BenchScope scope) { return scope == BenchScope::Full ? "full" : "model"; }

LatencyStats summarize_latency(std::vector<double> ms) {
  if (ms.empty()) throw ConfigError("no timings to summarise");
  std::sort(ms.begin(), ms.end());
  const std::size_t n = ms.size();
  LatencyStats s;
  s.timed_iters = static_cast<Index>(n);
  s.mean_ms = std::accumulate(ms.begin(), ms.end(), 0.0) / static_cast<double>(n);
  s.median_ms = n % 2 ? ms[n / 2] : 0.5 * (ms[n / 2 - 1] + ms[n / 2]);
  const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n)));
  s.p95_ms = ms[std::max<std::size_t>(rank, 1) - 1];
  s.min_ms = ms.front();
  return s;
}

namespace {

nlohmann::json stats_json(const LatencyStats& s) {
  return {{"mean_ms", s.mean_ms},
          {"median_ms", s.median_ms},
          {"p95_ms", s.p95_ms},
          {"min_ms", s.min_ms},
          {"timed_iters", s.timed_iters}};
}

// Keeps results observable so the timed work cannot be optimised away.
volatile double g_sink = 0;

template <typename S>
void consume(const Tensor<S>& t) {
  g_sink = g_sink + static_cast<double>(t[0]);
}

LatencyStats time_calls(Index warmup, Index iters, std::size_t n_samples, const std::function<void(std::size_t)>& call) {
  using clock = std::chrono::steady_clock;
  for (Index i = 0; i < warmup; ++i) call(static_cast<std::size_t>(i) % n_samples);
  std::vector<double> ms;
  ms.reserve(static_cast<std::size_t>(iters));
  for (Index i = 0; i < iters; ++i) {
    const auto t0 = clock::now();
    call(static_cast<std::size_t>(i) % n_samples);
    const auto t1 = clock::now();
    ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return summarize_latency(std::move(ms));
}

}  // namespace

nlohmann::json LatencyReport::to_json() const {
  return {{"scope", std::string(to_string(scope))},
          {"batch_size", 1},
          {"warmup_iters", warmup_iters},
          {"timed_iters", timed_iters},
          {"vision", stats_json(vision)},
          {"tactile", stats_json(tactile)},
          {"fused", stats_json(fused)}};
}

template <typename S>
LatencyReport bench_inference(const SurformerModel<S>& model, std::span<const BenchSample> samples,
                              const FeatureNormalizer& normalizer, const PreprocessConfig& preprocess,
                              const FeatureOptions& features, Index warmup, Index iters, BenchScope scope) {
  if (iters < 10) throw ConfigError("bench needs at least 10 timed iterations, got " + std::to_string(iters));
  if (warmup < 0) throw ConfigError("bench warmup must be non-negative");
  if (samples.empty()) throw ConfigError("bench needs at least one sample");
  if (model.mode() != Mode::Eval) throw UsageError("bench_inference needs a model in eval mode");
  if (preprocess.size != model.vision_config().input_size) {
    throw DimensionError("preprocess size " + std::to_string(preprocess.size) + " differs from the model input size");
  }
  const Index size = preprocess.size;
  const auto k = static_cast<Index>(kTactileFeatureCount);

  auto image_tensor = [&](const Image8& img) {
    const auto px = preprocess_image(img, preprocess);
    return Tensor<S>({1, 3, size, size}, std::vector<S>(px.begin(), px.end()));
  };
  auto feature_tensor = [&](const Image8& img) {
    const auto v = normalize(tactile_features(img, size, features), normalizer);
    return Tensor<S>({1, k}, std::vector<S>(v.values.begin(), v.values.end()));
  };

  LatencyReport r;
  r.scope = scope;
  r.warmup_iters = warmup;
  r.timed_iters = iters;
  const std::size_t n = samples.size();

  if (scope == BenchScope::Model) {
    std::vector<Tensor<S>> images, feats;
    for (const auto& s : samples) {
      images.push_back(image_tensor(s.vision));
      feats.push_back(feature_tensor(s.tactile));
    }
    r.vision = time_calls(warmup, iters, n, [&](std::size_t i) { consume(model.vision_forward(images[i])); });
    r.tactile = time_calls(warmup, iters, n, [&](std::size_t i) { consume(model.tactile_forward(feats[i])); });
    r.fused = time_calls(warmup, iters, n, [&](std::size_t i) {
      consume(model.forward(images[i], feats[i]).prediction.probabilities);
    });
  } else {
    r.vision = time_calls(warmup, iters, n,
                          [&](std::size_t i) { consume(model.vision_forward(image_tensor(samples[i].vision))); });
    r.tactile = time_calls(warmup, iters, n,
                           [&](std::size_t i) { consume(model.tactile_forward(feature_tensor(samples[i].tactile))); });
    r.fused = time_calls(warmup, iters, n, [&](std::size_t i) {
      consume(model.forward(image_tensor(samples[i].vision), feature_tensor(samples[i].tactile))
                  .prediction.probabilities);
    });
  }
  return r;
}

template LatencyReport bench_inference<float>(const SurformerModel<float>&, std::span<const BenchSample>,
                                              const FeatureNormalizer&, const PreprocessConfig&,
                                              const FeatureOptions&, Index, Index, BenchScope);
template LatencyReport bench_inference<double>(const SurformerModel<double>&, std::span<const BenchSample>,
                                               const FeatureNormalizer&, const PreprocessConfig&,
                                               const FeatureOptions&, Index, Index, BenchScope);

}  // namespace surfuse
