#include "surfuse/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

namespace surfuse {

std::int64_t ConfusionMatrix::total() const { return std::accumulate(counts.begin(), counts.end(), std::int64_t{0}); }

std::int64_t ConfusionMatrix::trace() const {
  std::int64_t t = 0;
  for (Index c = 0; c < n_classes; ++c) t += at(c, c);
  return t;
}

double ConfusionMatrix::accuracy() const {
  const auto n = total();
  return n ? static_cast<double>(trace()) / static_cast<double>(n) : 0.0;
}

ConfusionMatrix confusion(std::span<const int> y_true, std::span<const int> y_pred, Index n_classes) {
  if (y_true.size() != y_pred.size()) throw DimensionError("confusion: label vectors differ in length");
  if (n_classes < 1) throw ConfigError("confusion: n_classes must be positive");
  ConfusionMatrix cm{n_classes, std::vector<std::int64_t>(static_cast<std::size_t>(n_classes * n_classes), 0)};
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const int t = y_true[i], p = y_pred[i];
    if (t < 0 || t >= n_classes || p < 0 || p >= n_classes) {
      throw IndexError("confusion: label pair (" + std::to_string(t) + ", " + std::to_string(p) + ") outside [0, " +
                       std::to_string(n_classes) + ")");
    }
    ++cm.counts[static_cast<std::size_t>(t * n_classes + p)];
  }
  return cm;
}

Prf1Report prf1(const ConfusionMatrix& cm) {
  const Index C = cm.n_classes;
  if (C < 1) throw DimensionError("prf1: empty confusion matrix");
  Prf1Report r;
  for (Index c = 0; c < C; ++c) {
    std::int64_t row = 0, col = 0;
    for (Index k = 0; k < C; ++k) {
      row += cm.at(c, k);
      col += cm.at(k, c);
    }
    const auto tp = static_cast<double>(cm.at(c, c));
    ClassMetrics m;
    if (col > 0) {
      m.precision = tp / static_cast<double>(col);
    } else {
      m.precision_undefined = true;
    }
    if (row > 0) {
      m.recall = tp / static_cast<double>(row);
    } else {
      m.recall_undefined = true;
    }
    if (m.precision + m.recall > 0) {
      m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
    } else {
      m.f1_undefined = true;
    }
    r.per_class.push_back(m);
    r.macro_precision += m.precision;
    r.macro_recall += m.recall;
    r.macro_f1 += m.f1;
  }
  r.macro_precision /= static_cast<double>(C);
  r.macro_recall /= static_cast<double>(C);
  r.macro_f1 /= static_cast<double>(C);
  r.accuracy = cm.accuracy();
  return r;
}

RocReport roc_auc(std::span<const std::vector<double>> scores, std::span<const int> y_true, Index n_classes) {
  if (scores.size() != y_true.size()) throw DimensionError("roc_auc: scores and labels differ in length");
  for (const auto& row : scores) {
    if (static_cast<Index>(row.size()) != n_classes) throw DimensionError("roc_auc: score row has wrong width");
  }
  for (int t : y_true)
    if (t < 0 || t >= n_classes) throw IndexError("roc_auc: label " + std::to_string(t) + " out of range");

  RocReport report;
  const std::size_t n = y_true.size();
  std::vector<std::size_t> order(n);
  double auc_sum = 0;
  Index n_defined = 0;
  for (Index c = 0; c < n_classes; ++c) {
    RocCurve curve;
    const auto col = static_cast<std::size_t>(c);
    std::int64_t pos = 0;
    for (int t : y_true) pos += t == c;
    const std::int64_t neg = static_cast<std::int64_t>(n) - pos;
    if (pos == 0 || neg == 0) {
      warn("class " + std::to_string(c) + (pos == 0 ? " has no positive" : " has no negative") +
           " samples; its AUC is undefined and excluded from the macro mean");
      report.per_class.push_back(std::move(curve));
      continue;
    }
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a][col] > scores[b][col]; });
    curve.fpr.push_back(0.0);
    curve.tpr.push_back(0.0);
    curve.thresholds.push_back(std::numeric_limits<double>::infinity());
    std::int64_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < n;) {
      const double threshold = scores[order[i]][col];
      while (i < n && scores[order[i]][col] == threshold) {
        if (y_true[order[i]] == c) {
          ++tp;
        } else {
          ++fp;
        }
        ++i;
      }
      curve.fpr.push_back(static_cast<double>(fp) / static_cast<double>(neg));
      curve.tpr.push_back(static_cast<double>(tp) / static_cast<double>(pos));
      curve.thresholds.push_back(threshold);
    }
    double area = 0;
    for (std::size_t k = 1; k < curve.fpr.size(); ++k) {
      area += (curve.fpr[k] - curve.fpr[k - 1]) * (curve.tpr[k] + curve.tpr[k - 1]) * 0.5;
    }
    curve.auc = area;
    curve.defined = true;
    auc_sum += area;
    ++n_defined;
    report.per_class.push_back(std::move(curve));
  }
  if (n_defined > 0) {
    report.macro_auc = auc_sum / static_cast<double>(n_defined);
    report.macro_defined = true;
  }
  return report;
}

EvalReport make_eval_report(std::vector<std::string> classes, std::span<const int> y_true,
                            std::span<const int> y_fused, std::span<const int> y_vision,
                            std::span<const int> y_tactile, std::span<const std::vector<double>> fused_scores,
                            std::pair<double, double> alphas, const ParameterCounts& counts) {
  const auto C = static_cast<Index>(classes.size());
  EvalReport r;
  r.classes = std::move(classes);
  r.n_samples = static_cast<std::int64_t>(y_true.size());
  r.confusion = confusion(y_true, y_fused, C);
  r.prf1 = prf1(r.confusion);
  r.roc = roc_auc(fused_scores, y_true, C);
  r.accuracy_vision = confusion(y_true, y_vision, C).accuracy();
  r.accuracy_tactile = confusion(y_true, y_tactile, C).accuracy();
  r.alpha_vision = alphas.first;
  r.alpha_tactile = alphas.second;
  r.parameters = counts;
  return r;
}

nlohmann::json EvalReport::to_json() const {
  using nlohmann::json;
  json per_class = json::array();
  for (std::size_t c = 0; c < classes.size(); ++c) {
    const auto& m = prf1.per_class[c];
    const auto& roc_c = roc.per_class[c];
    std::int64_t support = 0;
    for (Index k = 0; k < confusion.n_classes; ++k) support += confusion.at(static_cast<Index>(c), k);
    per_class.push_back({{"class", classes[c]},
                         {"support", support},
                         {"precision", m.precision},
                         {"recall", m.recall},
                         {"f1", m.f1},
                         {"precision_undefined", m.precision_undefined},
                         {"recall_undefined", m.recall_undefined},
                         {"f1_undefined", m.f1_undefined},
                         {"auc", roc_c.defined ? json(roc_c.auc) : json(nullptr)}});
  }
  json matrix = json::array();
  for (Index t = 0; t < confusion.n_classes; ++t) {
    json row = json::array();
    for (Index p = 0; p < confusion.n_classes; ++p) row.push_back(confusion.at(t, p));
    matrix.push_back(row);
  }
  return {{"classes", classes},
          {"n_samples", n_samples},
          {"accuracy", prf1.accuracy},
          {"accuracy_vision", accuracy_vision},
          {"accuracy_tactile", accuracy_tactile},
          {"macro", {{"precision", prf1.macro_precision},
                     {"recall", prf1.macro_recall},
                     {"f1", prf1.macro_f1},
                     {"auc", roc.macro_defined ? json(roc.macro_auc) : json(nullptr)}}},
          {"per_class", per_class},
          {"confusion", matrix},
          {"fusion_weights", {{"alpha_vision", alpha_vision}, {"alpha_tactile", alpha_tactile}}},
          {"parameters", {{"vision_total", parameters.vision_total},
                          {"vision_trainable", parameters.vision_trainable},
                          {"tactile_total", parameters.tactile_total},
                          {"fusion_total", parameters.fusion_total},
                          {"grand_total", parameters.grand_total}}}};
}

std::string confusion_csv(const ConfusionMatrix& cm, std::span<const std::string> classes) {
  std::string out = "true\\predicted";
  for (const auto& c : classes) out += ',' + c;
  out += '\n';
  for (Index t = 0; t < cm.n_classes; ++t) {
    out += classes[static_cast<std::size_t>(t)];
    for (Index p = 0; p < cm.n_classes; ++p) out += ',' + std::to_string(cm.at(t, p));
    out += '\n';
  }
  return out;
}

std::string roc_csv(const RocCurve& curve) {
  std::string out = "threshold,fpr,tpr\n";
  char buf[96];
  for (std::size_t i = 0; i < curve.fpr.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", curve.thresholds[i], curve.fpr[i], curve.tpr[i]);
    out += buf;
  }
  return out;
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw Error("failed to write " + path.string());
}

}  // namespace

void write_eval_outputs(const EvalReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_text(dir / "eval.json", report.to_json().dump(2) + "\n");
  write_text(dir / "confusion.csv", confusion_csv(report.confusion, report.classes));
  for (std::size_t c = 0; c < report.classes.size(); ++c) {
    write_text(dir / ("roc_" + report.classes[c] + ".csv"), roc_csv(report.roc.per_class[c]));
  }
}

}  // namespace surfuse
