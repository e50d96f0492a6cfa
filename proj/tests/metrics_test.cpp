#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <sstream>
#include <vector>

#include "surfuse/bench.hpp"
#include "surfuse/metrics.hpp"
#include "test_util.hpp"

namespace surfuse {
namespace {

TEST(Confusion, HandCount) {
  const std::vector<int> t{0, 0, 1, 1}, p{0, 1, 1, 1};
  const auto cm = confusion(t, p, 2);
  EXPECT_EQ(cm.counts, (std::vector<std::int64_t>{1, 1, 0, 2}));
  EXPECT_EQ(cm.total(), 4);
  EXPECT_EQ(cm.trace(), 3);
  EXPECT_DOUBLE_EQ(cm.accuracy(), 0.75);
  const std::vector<int> bad{2, 0, 0, 0};
  EXPECT_THROW(confusion(bad, p, 2), IndexError);
}

TEST(Prf1, HandArithmetic) {
  const std::vector<int> t{0, 0, 1, 1}, p{0, 1, 1, 1};
  const auto r = prf1(confusion(t, p, 2));
  EXPECT_DOUBLE_EQ(r.per_class[0].precision, 1.0);
  EXPECT_DOUBLE_EQ(r.per_class[1].precision, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.per_class[0].recall, 0.5);
  EXPECT_DOUBLE_EQ(r.per_class[1].recall, 1.0);
  EXPECT_DOUBLE_EQ(r.per_class[0].f1, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.per_class[1].f1, 0.8);
  EXPECT_DOUBLE_EQ(r.macro_f1, (2.0 / 3.0 + 0.8) / 2);
}

TEST(Prf1, BrickMisreadAsConcrete) {
  // Classes: 0 concrete, 1 wood, 2 brick, 3 fabric, 4 grass; 200 test samples each.
  std::vector<int> t, p;
  for (int c = 0; c < 5; ++c)
    for (int i = 0; i < 200; ++i) {
      t.push_back(c);
      p.push_back(c == 2 && i < 12 ? 0 : c);
    }
  const auto cm = confusion(t, p, 5);
  EXPECT_EQ(cm.at(2, 0), 12);
  EXPECT_DOUBLE_EQ(prf1(cm).per_class[2].recall, 0.94);
}

TEST(Prf1, NeverPredictedClassIsFlagged) {
  const std::vector<int> t{0, 1, 2}, p{0, 0, 0};
  const auto r = prf1(confusion(t, p, 3));
  EXPECT_EQ(r.per_class[1].precision, 0.0);
  EXPECT_TRUE(r.per_class[1].precision_undefined);
  EXPECT_FALSE(r.per_class[0].precision_undefined);
  const auto perfect = prf1(confusion(t, t, 3));
  EXPECT_EQ(perfect.macro_precision, 1.0);
  EXPECT_EQ(perfect.macro_recall, 1.0);
  EXPECT_EQ(perfect.macro_f1, 1.0);
}

double mann_whitney(const std::vector<double>& s, const std::vector<int>& positive) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (positive[i] && !positive[j]) {
        wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
        pairs += 1;
      }
  return wins / pairs;
}

TEST(Roc, TwoClassPairCounting) {
  const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
  const std::vector<int> y{0, 0, 1, 1};
  std::vector<std::vector<double>> scores;
  for (double v : s) scores.push_back({1 - v, v});
  const auto r = roc_auc(scores, y, 2);
  EXPECT_NEAR(r.per_class[1].auc, 0.75, 1e-12);
  EXPECT_NEAR(r.per_class[1].auc, mann_whitney(s, {0, 0, 1, 1}), 1e-12);
  EXPECT_TRUE(std::isinf(r.per_class[1].thresholds[0]));
  EXPECT_EQ(r.per_class[1].fpr.front(), 0.0);
  EXPECT_EQ(r.per_class[1].tpr.back(), 1.0);
}

TEST(Roc, MonotoneTransformInvariance) {
  Rng rng(17);
  const int n = 200, c = 4;
  std::vector<int> y(n);
  std::vector<std::vector<double>> s(n, std::vector<double>(c)), cubed = s;
  for (int i = 0; i < n; ++i) {
    y[i] = static_cast<int>(rng.below(c));
    for (int k = 0; k < c; ++k) {
      s[i][k] = rng.uniform() + (k == y[i] ? 0.3 : 0.0);
      cubed[i][k] = std::pow(s[i][k], 3);
    }
  }
  const auto a = roc_auc(s, y, c), b = roc_auc(cubed, y, c);
  for (int k = 0; k < c; ++k) EXPECT_NEAR(a.per_class[k].auc, b.per_class[k].auc, 1e-12);
}

TEST(Roc, RandomScoresGiveHalf) {
  Rng rng(5);
  const int n = 10000, c = 3;
  std::vector<int> y(n);
  std::vector<std::vector<double>> s(n, std::vector<double>(c));
  for (int i = 0; i < n; ++i) {
    y[i] = static_cast<int>(rng.below(c));
    for (auto& v : s[i]) v = rng.uniform();
  }
  const auto r = roc_auc(s, y, c);
  for (const auto& curve : r.per_class) EXPECT_NEAR(curve.auc, 0.5, 0.03);
}

TEST(Roc, CurvesAreMonotoneFromOriginToOne) {
  Rng rng(6);
  const int n = 300, c = 3;
  std::vector<int> y(n);
  std::vector<std::vector<double>> s(n, std::vector<double>(c));
  for (int i = 0; i < n; ++i) {
    y[i] = static_cast<int>(rng.below(c));
    // Coarse scores force ties.
    for (auto& v : s[i]) v = std::round(rng.uniform() * 10) / 10;
  }
  for (const auto& curve : roc_auc(s, y, c).per_class) {
    EXPECT_EQ(curve.fpr.front(), 0.0);
    EXPECT_EQ(curve.tpr.front(), 0.0);
    EXPECT_EQ(curve.fpr.back(), 1.0);
    EXPECT_EQ(curve.tpr.back(), 1.0);
    double area = 0;
    for (std::size_t i = 1; i < curve.fpr.size(); ++i) {
      EXPECT_GE(curve.fpr[i], curve.fpr[i - 1]);
      EXPECT_GE(curve.tpr[i], curve.tpr[i - 1]);
      area += (curve.fpr[i] - curve.fpr[i - 1]) * (curve.tpr[i] + curve.tpr[i - 1]) / 2;
    }
    EXPECT_NEAR(curve.auc, area, 1e-12);
  }
}

TEST(Roc, AbsentClassExcludedFromMacro) {
  std::vector<std::string> warnings;
  static std::vector<std::string>* sink = nullptr;
  sink = &warnings;
  set_warning_handler([](const std::string& m) { sink->push_back(m); });
  const std::vector<int> y{0, 0, 1, 1};
  const std::vector<std::vector<double>> s{{0.9, 0.1, 0}, {0.6, 0.4, 0}, {0.3, 0.7, 0}, {0.2, 0.8, 0}};
  const auto r = roc_auc(s, y, 3);
  set_warning_handler(nullptr);
  EXPECT_FALSE(r.per_class[2].defined);
  EXPECT_TRUE(r.macro_defined);
  EXPECT_DOUBLE_EQ(r.macro_auc, 1.0);
  EXPECT_EQ(warnings.size(), 1u);
}

TEST(EvalReport, JsonAndCsvOutputs) {
  const std::vector<int> y{0, 1, 1, 0}, pf{0, 1, 0, 0}, pv{0, 1, 1, 1}, pt{1, 1, 0, 0};
  const std::vector<std::vector<double>> s{{0.8, 0.2}, {0.3, 0.7}, {0.6, 0.4}, {0.9, 0.1}};
  const auto rep = make_eval_report({"a", "b"}, y, pf, pv, pt, s, {0.6, 0.4}, ParameterCounts{});
  EXPECT_DOUBLE_EQ(rep.prf1.accuracy, 0.75);
  EXPECT_DOUBLE_EQ(rep.accuracy_vision, 0.75);
  EXPECT_DOUBLE_EQ(rep.accuracy_tactile, 0.5);
  EXPECT_EQ(rep.n_samples, 4);
  const auto j = rep.to_json();
  EXPECT_FALSE(j.contains("latency"));
  EXPECT_EQ(j.dump(), make_eval_report({"a", "b"}, y, pf, pv, pt, s, {0.6, 0.4}, ParameterCounts{}).to_json().dump());

  test::TempDir dir("evalout");
  write_eval_outputs(rep, dir.path());
  for (const char* f : {"eval.json", "confusion.csv", "roc_a.csv", "roc_b.csv"})
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  std::ifstream in(dir / "confusion.csv");
  std::stringstream ss;
  ss << in.rdbuf();
  EXPECT_EQ(ss.str(), confusion_csv(rep.confusion, rep.classes));
}

TEST(Latency, SummaryStatistics) {
  const auto s = summarize_latency({5, 1, 3, 2, 4, 6, 7, 8, 9, 10});
  EXPECT_DOUBLE_EQ(s.mean_ms, 5.5);
  EXPECT_DOUBLE_EQ(s.median_ms, 5.5);
  EXPECT_DOUBLE_EQ(s.p95_ms, 10.0);
  EXPECT_DOUBLE_EQ(s.min_ms, 1.0);
  EXPECT_EQ(s.timed_iters, 10);
  std::vector<double> many(100);
  for (int i = 0; i < 100; ++i) many[i] = 100 - i;
  EXPECT_DOUBLE_EQ(summarize_latency(many).p95_ms, 95.0);
  EXPECT_DOUBLE_EQ(summarize_latency({2, 9, 4}).median_ms, 4.0);
  EXPECT_THROW(summarize_latency({}), ConfigError);
}

}  // namespace
}  // namespace surfuse
