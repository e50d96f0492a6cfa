#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "surfuse/parallel.hpp"
#include "surfuse/training.hpp"
#include "test_util.hpp"

namespace surfuse {
namespace {

using test::random_tensor;

template <typename S>
void check_loss_identity(double tol) {
  Rng rng(31);
  for (int trial = 0; trial < 1000; ++trial) {
    const Index B = 1 + static_cast<Index>(rng.below(16)), C = 2 + static_cast<Index>(rng.below(6));
    const auto zf = random_tensor<S>({B, C}, rng, -6, 6), zv = random_tensor<S>({B, C}, rng, -6, 6),
               zt = random_tensor<S>({B, C}, rng, -6, 6);
    std::vector<int> y(static_cast<std::size_t>(B));
    for (auto& v : y) v = static_cast<int>(rng.below(static_cast<std::uint64_t>(C)));
    const auto l = composite_loss(zf, zv, zt, y, 0.3);
    const double expected = static_cast<double>(l.main.item()) + 0.3 * static_cast<double>(l.aux_v.item()) +
                            0.3 * static_cast<double>(l.aux_t.item());
    ASSERT_NEAR(static_cast<double>(l.total.item()), expected, tol) << "trial " << trial;
  }
}

TEST(CompositeLoss, TotalIsMainPlusWeightedAuxDouble) { check_loss_identity<double>(1e-12); }
TEST(CompositeLoss, TotalIsMainPlusWeightedAuxFloat) { check_loss_identity<float>(1e-6); }

TEST(CompositeLoss, ZeroWeightIsMainOnly) {
  Rng rng(2);
  const auto z = random_tensor({4, 3}, rng);
  const std::vector<int> y{0, 1, 2, 1};
  const auto l = composite_loss(z, random_tensor({4, 3}, rng), random_tensor({4, 3}, rng), y, 0.0);
  EXPECT_EQ(l.total.item(), l.main.item());
}

TEST(Scheduler, SevenEqualValuesHalveOnce) {
  SchedulerConfig cfg;
  SchedulerState s;
  s.current_lrs = {1e-3, 1.5e-4, 5e-7};
  int reductions = 0;
  for (int e = 0; e < 7; ++e) {
    const auto before = s.current_lrs;
    s = plateau_step(s, 0.8, cfg);
    if (s.current_lrs != before) {
      ++reductions;
      EXPECT_EQ(e, 6);
      for (std::size_t g = 0; g < 3; ++g) EXPECT_EQ(s.current_lrs[g], before[g] * 0.5);
    }
  }
  EXPECT_EQ(reductions, 1);
}

TEST(Scheduler, ImprovementResetsPatience) {
  SchedulerConfig cfg;
  SchedulerState s;
  s.current_lrs = {1.0};
  const std::vector<double> metric{0.1, 0.1, 0.1, 0.1, 0.2, 0.2, 0.2, 0.2, 0.2, 0.2};
  for (double m : metric) s = plateau_step(s, m, cfg);
  EXPECT_EQ(s.current_lrs[0], 1.0);
  s = plateau_step(s, 0.2, cfg);
  EXPECT_EQ(s.current_lrs[0], 0.5);
}

TEST(Scheduler, LossModeMinimises) {
  SchedulerConfig cfg;
  cfg.monitor = Monitor::ValLoss;
  cfg.patience = 0;
  SchedulerState s;
  s.current_lrs = {1.0};
  s = plateau_step(s, 2.0, cfg);
  s = plateau_step(s, 1.0, cfg);
  EXPECT_EQ(s.current_lrs[0], 1.0);
  s = plateau_step(s, 1.5, cfg);
  EXPECT_EQ(s.current_lrs[0], 0.5);
}

TEST(Scheduler, NeverBelowMinLr) {
  SchedulerConfig cfg;
  cfg.patience = 0;
  cfg.min_lr = 1e-4;
  SchedulerState s;
  s.current_lrs = {1e-3, 5e-5};
  for (int e = 0; e < 50; ++e) {
    s = plateau_step(s, 0.5, cfg);
    EXPECT_GE(s.current_lrs[0], 1e-4);
    EXPECT_EQ(s.current_lrs[1], 5e-5);  // already below the floor: left alone
  }
  EXPECT_EQ(s.current_lrs[0], 1e-4);
  EXPECT_THROW(plateau_step(s, std::nan(""), cfg), NumericError);
}

TEST(Adam, FirstStepMovesByLearningRateTimesSign) {
  SurformerModel<double> model(
      [] {
        VisionBranchConfig v;
        v.input_size = 8;
        v.backbone_channels = {2};
        v.feature_dim = 4;
        v.head_hidden = 3;
        v.n_classes = 2;
        return v;
      }(),
      [] {
        TactileBranchConfig t;
        t.d_model = 4;
        t.heads = 1;
        t.d_ffn = 4;
        t.head_hidden = 2;
        t.n_classes = 2;
        return t;
      }(),
      0);
  TrainConfig cfg;
  cfg.lr_fusion = 0.01;
  Adam<double> opt(make_param_groups(model, cfg));
  auto& w = model.parameter("fusion.logits").tensor;
  model.zero_grad();
  w.grad()[0] = 3.0;
  w.grad()[1] = -0.25;
  opt.step();
  EXPECT_NEAR(w[0], -0.01 * 3.0 / (3.0 + 1e-8), 1e-15);
  EXPECT_NEAR(w[1], 0.01 * 0.25 / (0.25 + 1e-8), 1e-15);
  EXPECT_EQ(opt.steps(), 1);
}

TEST(TrainConfig, RejectsBadValues) {
  TrainConfig c;
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.lr_tactile = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.val_fraction = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

struct TinyRun {
  PreparedSet set;
  FeatureNormalizer normalizer;
  VisionBranchConfig vision;
  TactileBranchConfig tactile;
};

TinyRun tiny_run() {
  SynthSpec spec;
  spec.n_classes = 3;
  spec.per_class = 12;
  spec.image_size = 32;
  spec.seed = 5;
  PreprocessConfig pre;
  pre.size = 32;
  TinyRun r{prepare(synth_generate(spec), pre), {}, {}, {}};
  r.normalizer = fit_normalizer(r.set.tactile, 1000, 5);
  r.vision.input_size = 32;
  r.vision.backbone_channels = {4, 8};
  r.vision.feature_dim = 16;
  r.vision.head_hidden = 8;
  r.vision.n_classes = 3;
  r.vision.n_unfrozen_tensors = 10;
  r.tactile.n_classes = 3;
  return r;
}

TEST(Fit, SeedDeterministicLogAndBestSnapshot) {
  const TinyRun r = tiny_run();
  TrainConfig cfg;
  cfg.max_epochs = 3;
  cfg.batch_size = 8;
  cfg.lr_vision = 1e-3;
  cfg.lr_fusion = 1e-2;
  cfg.val_fraction = 0.25;
  cfg.seed = 11;

  SurformerModel<float> a(r.vision, r.tactile, 11), b(r.vision, r.tactile, 11);
  Index callbacks = 0;
  const TrainLog la = fit(a, r.set, r.normalizer, cfg, [&](const EpochRecord&) { ++callbacks; });
  const TrainLog lb = fit(b, r.set, r.normalizer, cfg);
  EXPECT_EQ(callbacks, 3);
  EXPECT_EQ(la.to_csv(), lb.to_csv());
  EXPECT_EQ(a.state(), b.state());
  EXPECT_EQ(a.mode(), Mode::Eval);

  ASSERT_EQ(la.epochs.size(), 3u);
  const auto best = std::max_element(la.epochs.begin(), la.epochs.end(),
                                     [](const EpochRecord& x, const EpochRecord& y) { return x.acc_fused < y.acc_fused; });
  EXPECT_EQ(la.best_epoch, best->epoch);
  EXPECT_EQ(la.best_val_accuracy, best->acc_fused);
  for (const auto& e : la.epochs) {
    // The model is 32-bit; the log widens each alpha, so the sum is exact only in float.
    EXPECT_EQ(static_cast<float>(e.alpha_v) + static_cast<float>(e.alpha_t), 1.0f);
    EXPECT_NEAR(e.total, e.main + 0.3 * e.aux_v + 0.3 * e.aux_t, 1e-5);
  }
  EXPECT_EQ(la.to_csv().substr(0, la.to_csv().find('\n')),
            "epoch,total,main,aux_v,aux_t,acc_fused,acc_v,acc_t,alpha_v,alpha_t,lr_v,lr_t,lr_f");
}

TEST(Fit, FrozenTensorsUntouched) {
  const TinyRun r = tiny_run();
  TrainConfig cfg;
  cfg.max_epochs = 1;
  cfg.batch_size = 6;
  cfg.lr_vision = 1e-2;
  cfg.val_fraction = 0.25;
  SurformerModel<double> m(r.vision, r.tactile, 3);
  const auto before = m.state();
  fit(m, r.set, r.normalizer, cfg);
  const auto after = m.state();
  for (std::size_t i = 0; i < before.size(); ++i)
    if (!m.parameters()[i].trainable) EXPECT_EQ(before[i], after[i]) << m.parameters()[i].name;
}

TEST(PredictSet, ThreadCountDoesNotChangeResults) {
  const TinyRun r = tiny_run();
  SurformerModel<float> m(r.vision, r.tactile, 1);
  const int old = max_threads();
  set_max_threads(1);
  const auto p1 = predict_set(m, r.set, r.normalizer, 5);
  set_max_threads(4);
  const auto p4 = predict_set(m, r.set, r.normalizer, 5);
  set_max_threads(old);
  EXPECT_EQ(p1.fused, p4.fused);
  EXPECT_EQ(p1.probabilities, p4.probabilities);
  EXPECT_EQ(p1.main_loss, p4.main_loss);
}

}  // namespace
}  // namespace surfuse
