#include <gtest/gtest.h>

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "surfuse/checkpoint.hpp"
#include "surfuse/cli.hpp"
#include "surfuse/config.hpp"
#include "surfuse/gradcheck.hpp"
#include "test_util.hpp"

namespace surfuse {
namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

VisionBranchConfig small_vision() {
  VisionBranchConfig v;
  v.input_size = 16;
  v.backbone_channels = {4, 8};
  v.feature_dim = 12;
  v.head_hidden = 6;
  v.n_classes = 3;
  v.n_unfrozen_tensors = 9;
  return v;
}

TactileBranchConfig small_tactile() {
  TactileBranchConfig t;
  t.d_model = 8;
  t.heads = 2;
  t.d_ffn = 16;
  t.head_hidden = 4;
  t.n_classes = 3;
  return t;
}

FeatureNormalizer some_normalizer() {
  FeatureNormalizer n;
  for (std::size_t k = 0; k < kTactileFeatureCount; ++k) {
    n.mean[k] = 0.1 * k;
    n.stddev[k] = 1.0 + k;
  }
  n.n_fitted = 42;
  n.seed = 3;
  return n;
}

class CheckpointTest : public ::testing::Test {
 protected:
  test::TempDir dir{"ckpt"};
  std::vector<std::string> classes{"a", "b", "c"};
  PreprocessConfig pre = [] {
    PreprocessConfig p;
    p.size = 16;
    p.mean = {0.4, 0.5, 0.6};
    return p;
  }();
};

TEST_F(CheckpointTest, RoundTripIsExact) {
  SurformerModel<float> m(small_vision(), small_tactile(), 4);
  m.parameter("fusion.logits").tensor[0] = 0.75f;
  save_checkpoint(dir / "best.ckpt", m, some_normalizer(), pre, FeatureOptions{0.2}, classes, {{"seed", 4}});
  EXPECT_EQ(checkpoint_dtype(dir / "best.ckpt"), "float32");
  EXPECT_TRUE(fs::exists(dir / "best.ckpt.bin"));
  auto ck = load_checkpoint<float>(dir / "best.ckpt");
  EXPECT_EQ(ck.model.state(), m.state());
  EXPECT_EQ(ck.classes, classes);
  EXPECT_EQ(ck.normalizer.mean, some_normalizer().mean);
  EXPECT_EQ(ck.normalizer.stddev, some_normalizer().stddev);
  EXPECT_EQ(ck.normalizer.n_fitted, 42u);
  EXPECT_EQ(ck.preprocess.mean, pre.mean);
  EXPECT_EQ(ck.features.edge_threshold, 0.2);
  EXPECT_EQ(ck.metadata.at("seed"), 4);
  EXPECT_EQ(ck.model.mode(), Mode::Eval);
  for (std::size_t i = 0; i < m.parameters().size(); ++i)
    EXPECT_EQ(ck.model.parameters()[i].trainable, m.parameters()[i].trainable);
}

TEST_F(CheckpointTest, CrossPrecisionLoad) {
  SurformerModel<double> m(small_vision(), small_tactile(), 4);
  save_checkpoint(dir / "d.ckpt", m, some_normalizer(), pre, FeatureOptions{}, classes);
  EXPECT_EQ(checkpoint_dtype(dir / "d.ckpt"), "float64");
  const auto f = load_checkpoint<float>(dir / "d.ckpt");
  const auto back = load_checkpoint<double>(dir / "d.ckpt");
  EXPECT_EQ(back.model.state(), m.state());
  const auto s = m.state();
  const auto fs32 = f.model.state();
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s[i].size(); ++j) ASSERT_EQ(fs32[i][j], static_cast<float>(s[i][j]));
}

TEST_F(CheckpointTest, TruncatedBlobIsIntegrityError) {
  SurformerModel<float> m(small_vision(), small_tactile(), 4);
  save_checkpoint(dir / "t.ckpt", m, some_normalizer(), pre, FeatureOptions{}, classes);
  const auto blob = dir / "t.ckpt.bin";
  fs::resize_file(blob, fs::file_size(blob) - 4);
  EXPECT_THROW(load_checkpoint<float>(dir / "t.ckpt"), IntegrityError);
}

TEST_F(CheckpointTest, MissingAndMalformed) {
  EXPECT_THROW(load_checkpoint<float>(dir / "none.ckpt"), NotFoundError);
  std::ofstream(dir / "bad.ckpt") << "{ not json";
  std::ofstream(dir / "bad.ckpt.bin") << "";
  EXPECT_THROW(load_checkpoint<float>(dir / "bad.ckpt"), FormatError);
}

TEST_F(CheckpointTest, TamperedShapeIsIntegrityError) {
  SurformerModel<float> m(small_vision(), small_tactile(), 4);
  save_checkpoint(dir / "s.ckpt", m, some_normalizer(), pre, FeatureOptions{}, classes);
  auto doc = nlohmann::json::parse(slurp(dir / "s.ckpt"));
  doc["vision"]["head_hidden"] = 7;
  std::ofstream(dir / "s.ckpt") << doc.dump();
  EXPECT_THROW(load_checkpoint<float>(dir / "s.ckpt"), IntegrityError);
}

TEST(Config, DefaultsSerialiseAndReload) {
  RunConfig c;
  c.seed = 99;
  c.train.lr_vision = 1e-3;
  c.vision.backbone_channels = {8, 16};
  const RunConfig back = run_config_from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_EQ(back.seed, 99u);
  EXPECT_EQ(back.train.lr_vision, 1e-3);
}

TEST(Config, UnknownKeysAreRejected) {
  EXPECT_THROW(run_config_from_json(nlohmann::json::parse(R"({"bogus": 1})")), ConfigError);
  EXPECT_THROW(run_config_from_json(nlohmann::json::parse(R"({"train": {"lr": 1}})")), ConfigError);
  EXPECT_THROW(run_config_from_json(nlohmann::json::parse(R"({"train": {"batch_size": "big"}})")), ConfigError);
  EXPECT_THROW(run_config_from_json(nlohmann::json::parse(R"({"dtype": "float16"})")), ConfigError);
  EXPECT_THROW(run_config_from_json(nlohmann::json::parse(R"({"tactile": {"d_model": 10, "heads": 4}})")),
               ConfigError);
}

TEST(Config, FileOverridesBase) {
  test::TempDir dir("cfg");
  std::ofstream(dir / "run.json") << R"({"seed": 5, "train": {"max_epochs": 3, "scheduler": {"monitor": "val_loss"}}})";
  RunConfig base;
  base.train.batch_size = 4;
  const auto c = load_run_config(dir / "run.json", base);
  EXPECT_EQ(c.seed, 5u);
  EXPECT_EQ(c.train.max_epochs, 3);
  EXPECT_EQ(c.train.batch_size, 4);
  EXPECT_EQ(c.train.scheduler.monitor, Monitor::ValLoss);
  EXPECT_THROW(load_run_config(dir / "absent.json"), NotFoundError);
}

int run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "surfuse");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return cli::run(static_cast<int>(argv.size()), argv.data());
}

class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new test::TempDir("cli");
    ASSERT_EQ(run_cli({"gen-data", "--classes", "3", "--per-class", "10", "--size", "32", "--seed", "3", "--out",
                       (*dir_ / "data").string()}),
              0);
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }
  static std::string path(const std::string& leaf) { return (*dir_ / leaf).string(); }
  static int train(const std::string& out) {
    return run_cli({"train", "--data", path("data"), "--out", path(out), "--size", "32", "--epochs", "2",
                    "--batch-size", "8", "--lr-vision", "1e-3", "--seed", "7"});
  }
  static test::TempDir* dir_;
};

test::TempDir* CliTest::dir_ = nullptr;

TEST_F(CliTest, TrainEvalBenchEndToEnd) {
  ASSERT_EQ(train("run1"), 0);
  for (const char* f : {"best.ckpt", "best.ckpt.bin", "trainlog.csv", "trainlog.json", "config.resolved.json"})
    EXPECT_TRUE(fs::exists(fs::path(path("run1")) / f)) << f;
  ASSERT_EQ(run_cli({"eval", "--ckpt", path("run1/best.ckpt"), "--out", path("eval1")}), 0);
  ASSERT_EQ(run_cli({"eval", "--ckpt", path("run1/best.ckpt"), "--out", path("eval2")}), 0);
  EXPECT_EQ(slurp(path("eval1/eval.json")), slurp(path("eval2/eval.json")));
  const auto report = nlohmann::json::parse(slurp(path("eval1/eval.json")));
  EXPECT_EQ(report.at("n_samples"), 6);
  ASSERT_EQ(run_cli({"bench", "--ckpt", path("run1/best.ckpt"), "--out", path("bench"), "--warmup", "1", "--iters",
                     "10", "--samples", "2"}),
            0);
  const auto bench = nlohmann::json::parse(slurp(path("bench/bench.json")));
  EXPECT_TRUE(bench.contains("full"));
  EXPECT_TRUE(bench.contains("model"));
}

TEST_F(CliTest, TrainingIsSeedDeterministic) {
  ASSERT_EQ(train("det_a"), 0);
  ASSERT_EQ(train("det_b"), 0);
  EXPECT_EQ(slurp(path("det_a/trainlog.csv")), slurp(path("det_b/trainlog.csv")));
  EXPECT_EQ(slurp(path("det_a/best.ckpt.bin")), slurp(path("det_b/best.ckpt.bin")));
}

TEST_F(CliTest, ResolvedConfigReplaysTheRun) {
  ASSERT_EQ(train("first"), 0);
  ASSERT_EQ(run_cli({"train", "--config", path("first/config.resolved.json"), "--out", path("again")}), 0);
  EXPECT_EQ(slurp(path("first/trainlog.csv")), slurp(path("again/trainlog.csv")));
}

TEST_F(CliTest, ExitCodes) {
  EXPECT_EQ(run_cli({"eval", "--ckpt", path("missing/best.ckpt"), "--out", path("never")}), cli::kMissingPath);
  EXPECT_FALSE(fs::exists(path("never")));
  EXPECT_EQ(run_cli({"train", "--data", path("no_such_dir"), "--out", path("x")}), cli::kMissingPath);
  EXPECT_EQ(run_cli({"train", "--frobnicate"}), cli::kBadConfig);
  EXPECT_EQ(run_cli({"train", "--data", path("data"), "--out", path("x"), "--batch-size", "0"}), cli::kBadConfig);
  EXPECT_EQ(run_cli({"gen-data", "--classes", "1", "--out", path("y")}), cli::kBadConfig);
  EXPECT_EQ(run_cli({"bench", "--ckpt", path("missing.ckpt"), "--iters", "5"}), cli::kMissingPath);
  std::ofstream(path("bad.json")) << R"({"unknown": true})";
  EXPECT_EQ(run_cli({"train", "--config", path("bad.json"), "--data", path("data"), "--out", path("x")}),
            cli::kBadConfig);
  EXPECT_EQ(run_cli({}), cli::kBadConfig);
}

TEST(Gradcheck, SuiteCoversPrimitivesAndComposite) {
  const auto results = run_gradcheck_suite(2, 1);
  bool composite = false;
  for (const auto& r : results) {
    EXPECT_TRUE(r.passed()) << r.name << " " << r.max_rel_error;
    EXPECT_EQ(r.trials, 2);
    composite = composite || r.name == "surformer_composite_loss";
  }
  EXPECT_TRUE(composite);
  EXPECT_GE(results.size(), 15u);
}

}  // namespace
}  // namespace surfuse
