#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "surfuse/model.hpp"

namespace surfuse {

/// Rows are true classes, columns predicted classes.
struct ConfusionMatrix {
  Index n_classes = 0;
  std::vector<std::int64_t> counts;  ///< row-major C x C

  std::int64_t at(Index truth, Index predicted) const {
    return counts[static_cast<std::size_t>(truth * n_classes + predicted)];
  }
  std::int64_t total() const;
  std::int64_t trace() const;
  double accuracy() const;
};

/// Throws IndexError for labels outside [0, C).
ConfusionMatrix confusion(std::span<const int> y_true, std::span<const int> y_pred, Index n_classes);

struct ClassMetrics {
  double precision = 0, recall = 0, f1 = 0;
  /// Set when the matching denominator was zero and the value defaulted to 0.
  bool precision_undefined = false, recall_undefined = false, f1_undefined = false;
};

struct Prf1Report {
  std::vector<ClassMetrics> per_class;
  double macro_precision = 0, macro_recall = 0, macro_f1 = 0;
  double accuracy = 0;
};

Prf1Report prf1(const ConfusionMatrix& cm);

struct RocCurve {
  std::vector<double> fpr, tpr, thresholds;  ///< thresholds[0] is +infinity
  double auc = 0;
  bool defined = false;  ///< false when the class has no positives or no negatives
};

struct RocReport {
  std::vector<RocCurve> per_class;
  double macro_auc = 0;
  bool macro_defined = false;
};

/// One-vs-rest curves over score column c, sweeping distinct scores from high to low,
/// with trapezoidal area. Classes without positives (or negatives) are left out of the
/// macro mean with a warning.
RocReport roc_auc(std::span<const std::vector<double>> scores, std::span<const int> y_true, Index n_classes);

/// Everything eval writes except timings, so a replay of the same checkpoint is
/// byte-identical.
struct EvalReport {
  std::vector<std::string> classes;
  std::int64_t n_samples = 0;
  ConfusionMatrix confusion;
  Prf1Report prf1;
  RocReport roc;
  double accuracy_vision = 0, accuracy_tactile = 0;
  double alpha_vision = 0, alpha_tactile = 0;
  ParameterCounts parameters;

  nlohmann::json to_json() const;
};

EvalReport make_eval_report(std::vector<std::string> classes, std::span<const int> y_true,
                            std::span<const int> y_fused, std::span<const int> y_vision,
                            std::span<const int> y_tactile, std::span<const std::vector<double>> fused_scores,
                            std::pair<double, double> alphas, const ParameterCounts& counts);

std::string confusion_csv(const ConfusionMatrix& cm, std::span<const std::string> classes);
std::string roc_csv(const RocCurve& curve);

/// eval.json, confusion.csv and one roc_<class>.csv per class.
void write_eval_outputs(const EvalReport& report, const std::filesystem::path& dir);

}  // namespace surfuse
