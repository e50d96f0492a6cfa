#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "surfuse/data.hpp"
#include "surfuse/model.hpp"

namespace surfuse {

/// Full starts from decoded 8-bit pixels and includes preprocessing and tactile feature
/// extraction; Model starts from ready tensors.
enum class BenchScope { Full, Model };

std::string_view to_string(BenchScope scope);

/// Per-sample milliseconds over the timed iterations.
struct LatencyStats {
  double mean_ms = 0, median_ms = 0, p95_ms = 0, min_ms = 0;
  Index timed_iters = 0;
};

/// Mean, median, nearest-rank p95 and minimum.
LatencyStats summarize_latency(std::vector<double> samples_ms);

struct LatencyReport {
  BenchScope scope = BenchScope::Full;
  Index warmup_iters = 0;
  Index timed_iters = 0;
  LatencyStats vision, tactile, fused;

  nlohmann::json to_json() const;
};

struct BenchSample {
  Image8 vision;
  Image8 tactile;
};

/// Batch-1 timing of the vision branch, the tactile branch and the fused model, each
/// cycling through `samples`. The model must be in eval mode; iters below 10 is a
/// ConfigError. Run it on one thread.
template <typename Scalar>
LatencyReport bench_inference(const SurformerModel<Scalar>& model, std::span<const BenchSample> samples,
                              const FeatureNormalizer& normalizer, const PreprocessConfig& preprocess,
                              const FeatureOptions& features, Index warmup, Index iters, BenchScope scope);

}  // namespace surfuse
