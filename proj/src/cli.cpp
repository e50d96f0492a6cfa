#include "surfuse/cli.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "surfuse/bench.hpp"
#include "surfuse/checkpoint.hpp"
#include "surfuse/config.hpp"
#include "surfuse/gradcheck.hpp"
#include "surfuse/metrics.hpp"
#include "surfuse/parallel.hpp"

namespace surfuse::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Overrides {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> dtype, data, out;
  std::optional<Index> epochs, batch_size, size;
  std::optional<double> lr_vision, lr_tactile, lr_fusion;
};

RunConfig resolve(const Overrides& o) {
  RunConfig c;
  if (!o.config_path.empty()) c = load_run_config(o.config_path, c);
  if (o.seed) c.seed = *o.seed;
  if (o.dtype) c.dtype = *o.dtype;
  if (o.data) c.data = *o.data;
  if (o.out) c.out = *o.out;
  if (o.epochs) c.train.max_epochs = *o.epochs;
  if (o.batch_size) c.train.batch_size = *o.batch_size;
  if (o.size) c.preprocess.size = *o.size;
  if (o.lr_vision) c.train.lr_vision = *o.lr_vision;
  if (o.lr_tactile) c.train.lr_tactile = *o.lr_tactile;
  if (o.lr_fusion) c.train.lr_fusion = *o.lr_fusion;
  c.validate();
  return c;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw Error("failed to write " + path.string());
}

void write_json(const fs::path& path, const json& doc) { write_text(path, doc.dump(2) + "\n"); }

void require_exists(const fs::path& path, const char* what) {
  if (path.empty()) throw ConfigError(std::string(what) + " path is required");
  if (!fs::exists(path)) throw NotFoundError(std::string(what) + " " + path.string() + " not found");
}

// Test part of the split recorded at training time, or the whole set.
DatasetManifest evaluation_manifest(const fs::path& data, const json& metadata, bool test_only) {
  DatasetManifest m = load_directory(data);
  if (!test_only) return m;
  const double ratio = metadata.value("train_ratio", 0.8);
  const auto seed = metadata.value("seed", std::uint64_t{0});
  return stratified_split(m, ratio, seed).second;
}

void check_classes(const DatasetManifest& m, const std::vector<std::string>& classes) {
  if (m.classes != classes) throw DatasetError("dataset classes do not match the checkpoint's classes");
}

int gen_data(const SynthSpec& spec, const std::string& out) {
  if (out.empty()) throw ConfigError("--out is required");
  spec.validate();
  DatasetManifest m = synth_generate(spec);
  write_dataset(m, out);
  write_json(fs::path(out) / "config.resolved.json", {{"command", "gen-data"}, {"synthetic", spec.to_json()}});
  std::printf("wrote %zu pairs in %lld classes to %s\n", m.samples.size(), static_cast<long long>(m.n_classes()),
              out.c_str());
  return kOk;
}

template <typename S>
int train(const RunConfig& cfg) {
  require_exists(cfg.data, "data directory");
  if (cfg.out.empty()) throw ConfigError("--out is required");
  const DatasetManifest all = load_directory(cfg.data);
  const auto [train_m, test_m] = stratified_split(all, cfg.train_ratio, cfg.seed);
  const PreparedSet train_set = prepare(train_m, cfg.preprocess, cfg.features);
  const FeatureNormalizer normalizer = fit_normalizer(train_set.tactile, cfg.normalizer_cap, cfg.seed);

  VisionBranchConfig vision = cfg.vision;
  vision.input_size = cfg.preprocess.size;
  vision.n_classes = all.n_classes();
  TactileBranchConfig tactile = cfg.tactile;
  tactile.n_classes = all.n_classes();
  SurformerModel<S> model(vision, tactile, cfg.seed);
  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;

  const TrainLog log = fit(model, train_set, normalizer, tc, [](const EpochRecord& e) {
    std::fprintf(stderr, "epoch %3lld  loss %.4f  val acc %.4f (v %.4f t %.4f)  alpha_v %.4f\n",
                 static_cast<long long>(e.epoch), e.total, e.acc_fused, e.acc_v, e.acc_t, e.alpha_v);
  });

  const fs::path out(cfg.out);
  fs::create_directories(out);
  const json metadata = {{"data", cfg.data},
                         {"seed", cfg.seed},
                         {"train_ratio", cfg.train_ratio},
                         {"best_epoch", log.best_epoch},
                         {"best_val_accuracy", log.best_val_accuracy}};
  save_checkpoint(out / "best.ckpt", model, normalizer, cfg.preprocess, cfg.features, all.classes, metadata);
  write_text(out / "trainlog.csv", log.to_csv());
  write_json(out / "trainlog.json", log.to_json());
  // Exactly the run config, so it can be passed back with --config.
  write_json(out / "config.resolved.json", cfg.to_json());

  const PreparedSet test_set = prepare(test_m, cfg.preprocess, cfg.features);
  const auto pred = predict_set(model, test_set, normalizer);
  std::printf("best epoch %lld, val accuracy %.4f, test accuracy %.4f (vision %.4f, tactile %.4f)\n",
              static_cast<long long>(log.best_epoch), log.best_val_accuracy, pred.accuracy_fused(),
              pred.accuracy_vision(), pred.accuracy_tactile());
  return kOk;
}

template <typename S>
int eval(const fs::path& ckpt_path, std::string data, std::string out, bool test_only) {
  require_exists(ckpt_path, "checkpoint");
  auto ck = load_checkpoint<S>(ckpt_path);
  if (data.empty()) data = ck.metadata.value("data", "");
  require_exists(data, "data directory");
  const DatasetManifest m = evaluation_manifest(data, ck.metadata, test_only);
  check_classes(m, ck.classes);
  const PreparedSet set = prepare(m, ck.preprocess, ck.features);
  const auto pred = predict_set(ck.model, set, ck.normalizer);
  const auto [av, at] = fusion_alphas(ck.model.fusion_logits());
  const EvalReport report =
      make_eval_report(ck.classes, pred.labels, pred.fused, pred.vision, pred.tactile, pred.probabilities,
                       {static_cast<double>(av), static_cast<double>(at)}, count_parameters(ck.model));
  const fs::path dir = out.empty() ? ckpt_path.parent_path() : fs::path(out);
  write_eval_outputs(report, dir);
  write_json(dir / "config.resolved.json", {{"command", "eval"},
                                            {"ckpt", ckpt_path.string()},
                                            {"data", data},
                                            {"split", test_only ? "test" : "all"},
                                            {"out", dir.string()}});
  std::printf("accuracy %.4f  macro F1 %.4f  macro AUC %.4f  on %lld samples\n", report.prf1.accuracy,
              report.prf1.macro_f1, report.roc.macro_auc, static_cast<long long>(report.n_samples));
  return kOk;
}

template <typename S>
int bench(const fs::path& ckpt_path, std::string data, std::string out, const BenchConfig& bc,
          const std::string& scope) {
  require_exists(ckpt_path, "checkpoint");
  if (bc.iters < 10) throw ConfigError("--iters must be at least 10");
  if (scope != "full" && scope != "model" && scope != "both") throw ConfigError("--scope must be full, model or both");
  auto ck = load_checkpoint<S>(ckpt_path);
  if (data.empty()) data = ck.metadata.value("data", "");
  require_exists(data, "data directory");
  const DatasetManifest m = evaluation_manifest(data, ck.metadata, true);
  check_classes(m, ck.classes);
  std::vector<BenchSample> samples;
  for (std::size_t i = 0; i < m.samples.size() && static_cast<Index>(i) < bc.samples; ++i) {
    samples.push_back({m.samples[i].load_vision(), m.samples[i].load_tactile()});
  }
  ck.model.set_mode(Mode::Eval);
  const auto counts = count_parameters(ck.model);
  json doc = {{"parameters",
               {{"vision_total", counts.vision_total},
                {"vision_trainable", counts.vision_trainable},
                {"tactile_total", counts.tactile_total},
                {"fusion_total", counts.fusion_total},
                {"grand_total", counts.grand_total}}}};
  for (BenchScope s : {BenchScope::Full, BenchScope::Model}) {
    if (scope != "both" && scope != to_string(s)) continue;
    const auto r = bench_inference(ck.model, samples, ck.normalizer, ck.preprocess, ck.features, bc.warmup,
                                   bc.iters, s);
    doc[std::string(to_string(s))] = r.to_json();
    std::printf("%-5s  vision %.3f ms  tactile %.3f ms  fused %.3f ms (median, batch 1)\n",
                std::string(to_string(s)).c_str(), r.vision.median_ms, r.tactile.median_ms, r.fused.median_ms);
  }
  const fs::path dir = out.empty() ? ckpt_path.parent_path() : fs::path(out);
  fs::create_directories(dir);
  write_json(dir / "bench.json", doc);
  write_json(dir / "config.resolved.json", {{"command", "bench"},
                                            {"ckpt", ckpt_path.string()},
                                            {"data", data},
                                            {"scope", scope},
                                            {"warmup", bc.warmup},
                                            {"iters", bc.iters},
                                            {"samples", bc.samples},
                                            {"out", dir.string()}});
  return kOk;
}

int gradcheck(Index trials, std::uint64_t seed, const std::string& out) {
  const auto results = run_gradcheck_suite(trials, seed);
  bool ok = true;
  json rows = json::array();
  for (const auto& r : results) {
    std::printf("%-26s max rel err %.3e  (tol %.0e, %lld trials)  %s\n", r.name.c_str(), r.max_rel_error,
                r.tolerance, static_cast<long long>(r.trials), r.passed() ? "ok" : "FAIL");
    ok = ok && r.passed();
    rows.push_back({{"name", r.name}, {"max_rel_error", r.max_rel_error}, {"tolerance", r.tolerance},
                    {"trials", r.trials}, {"passed", r.passed()}});
  }
  if (!out.empty()) {
    fs::create_directories(out);
    write_json(fs::path(out) / "gradcheck.json", rows);
    write_json(fs::path(out) / "config.resolved.json", {{"command", "gradcheck"}, {"trials", trials}, {"seed", seed}});
  }
  if (!ok) throw NumericError("gradient check failed");
  return kOk;
}

template <typename Fn>
int with_dtype(const std::string& dtype, Fn&& fn) {
  if (dtype == "float32") return fn(float{});
  if (dtype == "float64") return fn(double{});
  throw ConfigError("dtype must be float32 or float64, got " + dtype);
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"Vision and tactile late-fusion surface classifier"};
  app.require_subcommand(1);

  SynthSpec spec;
  std::string gen_out, noise = "none";
  auto* gen = app.add_subcommand("gen-data", "Write a synthetic paired-texture dataset");
  gen->add_option("--classes", spec.n_classes, "Number of classes")->capture_default_str();
  gen->add_option("--per-class", spec.per_class, "Pairs per class")->capture_default_str();
  gen->add_option("--seed", spec.seed, "Generator seed")->capture_default_str();
  gen->add_option("--size", spec.image_size, "Image side in pixels")->capture_default_str();
  gen->add_option("--noise", noise, "Modality replaced by pure noise: none, vision, tactile")->capture_default_str();
  gen->add_option("--out", gen_out, "Output directory")->required();

  Overrides ov;
  auto* tr = app.add_subcommand("train", "Fit a model and write best.ckpt and the training log");
  tr->add_option("--config", ov.config_path, "JSON run configuration");
  tr->add_option("--data", ov.data, "Dataset root");
  tr->add_option("--out", ov.out, "Output directory");
  tr->add_option("--seed", ov.seed, "Master seed");
  tr->add_option("--dtype", ov.dtype, "float32 or float64");
  tr->add_option("--epochs", ov.epochs, "Maximum epochs");
  tr->add_option("--batch-size", ov.batch_size, "Minibatch size");
  tr->add_option("--size", ov.size, "Image side after resizing");
  tr->add_option("--lr-vision", ov.lr_vision, "Vision learning rate");
  tr->add_option("--lr-tactile", ov.lr_tactile, "Tactile learning rate");
  tr->add_option("--lr-fusion", ov.lr_fusion, "Fusion learning rate");

  std::string ckpt, data, out, split = "test";
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint and write eval.json and CSVs");
  ev->add_option("--ckpt", ckpt, "Checkpoint manifest")->required();
  ev->add_option("--data", data, "Dataset root (defaults to the training data)");
  ev->add_option("--out", out, "Output directory (defaults to the checkpoint directory)");
  ev->add_option("--split", split, "test or all")->check(CLI::IsMember({"test", "all"}))->capture_default_str();

  BenchConfig bc;
  std::string scope = "both";
  auto* be = app.add_subcommand("bench", "Time batch-1 inference and write bench.json");
  be->add_option("--ckpt", ckpt, "Checkpoint manifest")->required();
  be->add_option("--data", data, "Dataset root (defaults to the training data)");
  be->add_option("--out", out, "Output directory (defaults to the checkpoint directory)");
  be->add_option("--warmup", bc.warmup, "Untimed iterations")->capture_default_str();
  be->add_option("--iters", bc.iters, "Timed iterations")->capture_default_str();
  be->add_option("--samples", bc.samples, "Distinct test samples to cycle through")->capture_default_str();
  be->add_option("--scope", scope, "full, model or both")->capture_default_str();

  Index trials = 10;
  std::uint64_t gc_seed = 0;
  std::string gc_out;
  auto* gc = app.add_subcommand("gradcheck", "Compare analytic gradients with central differences");
  gc->add_option("--trials", trials, "Random instances per check")->capture_default_str();
  gc->add_option("--seed", gc_seed, "Seed")->capture_default_str();
  gc->add_option("--out", gc_out, "Optional output directory for gradcheck.json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kBadConfig;
  }

  try {
    if (gen->parsed()) {
      spec.noise = parse_noise_modality(noise);
      return gen_data(spec, gen_out);
    }
    if (tr->parsed()) {
      const RunConfig cfg = resolve(ov);
      return with_dtype(cfg.dtype, [&](auto tag) { return train<decltype(tag)>(cfg); });
    }
    if (ev->parsed()) {
      require_exists(ckpt, "checkpoint");
      return with_dtype(checkpoint_dtype(ckpt), [&](auto tag) { return eval<decltype(tag)>(ckpt, data, out, split == "test"); });
    }
    if (be->parsed()) {
      require_exists(ckpt, "checkpoint");
      return with_dtype(checkpoint_dtype(ckpt),
                        [&](auto tag) { return bench<decltype(tag)>(ckpt, data, out, bc, scope); });
    }
    if (gc->parsed()) return gradcheck(trials, gc_seed, gc_out);
  } catch (const NotFoundError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kMissingPath;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kBadConfig;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kNumericFailure;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFailure;
  }
  return kFailure;
}

}  // namespace surfuse::cli
