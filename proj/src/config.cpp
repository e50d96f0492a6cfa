#include "surfuse/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>

namespace surfuse {

using nlohmann::json;

namespace {

// Tracks which keys of one JSON object were consumed so leftovers can be rejected.
class Reader {
 public:
  Reader(const json& doc, std::string path) : doc_(doc), path_(std::move(path)) {
    if (!doc_.is_object()) throw ConfigError(where() + " must be a JSON object");
  }

  bool has(const std::string& key) const { return doc_.contains(key); }

  template <typename T>
  void get(const std::string& key, T& dst) {
    seen_.insert(key);
    if (!doc_.contains(key)) return;
    try {
      dst = doc_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(where(key) + " has the wrong type");
    }
  }

  Reader child(const std::string& key) {
    seen_.insert(key);
    return Reader(doc_.at(key), where(key));
  }

  void finish() const {
    for (const auto& item : doc_.items()) {
      if (!seen_.count(item.key())) throw ConfigError("unknown key " + where(item.key()));
    }
  }

  std::string where(const std::string& key = "") const {
    if (key.empty()) return path_.empty() ? "config" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

 private:
  const json& doc_;
  std::string path_;
  std::set<std::string> seen_;
};

const char* monitor_name(Monitor m) { return m == Monitor::ValAccuracy ? "val_accuracy" : "val_loss"; }

Monitor parse_monitor(const std::string& s) {
  if (s == "val_accuracy") return Monitor::ValAccuracy;
  if (s == "val_loss") return Monitor::ValLoss;
  throw ConfigError("train.scheduler.monitor must be val_accuracy or val_loss, got " + s);
}

}  // namespace

json to_json(const VisionBranchConfig& c, bool full) {
  json j = {{"backbone_channels", c.backbone_channels},
            {"squeeze_excitation", c.squeeze_excitation},
            {"se_reduction", c.se_reduction},
            {"feature_dim", c.feature_dim},
            {"head_hidden", c.head_hidden},
            {"dropout", c.dropout},
            {"n_unfrozen_tensors", c.n_unfrozen_tensors}};
  if (full) {
    j["input_size"] = c.input_size;
    j["n_classes"] = c.n_classes;
  }
  return j;
}

json to_json(const TactileBranchConfig& c, bool full) {
  json j = {{"d_model", c.d_model},
            {"heads", c.heads},
            {"d_ffn", c.d_ffn},
            {"dropout", c.dropout},
            {"head_hidden", c.head_hidden}};
  if (full) j["n_classes"] = c.n_classes;
  return j;
}

json to_json(const PreprocessConfig& c) { return {{"size", c.size}, {"mean", c.mean}, {"std", c.stddev}}; }

json to_json(const FeatureNormalizer& n) {
  json names = json::array();
  for (auto name : tactile_feature_names()) names.push_back(std::string(name));
  return {{"features", names}, {"mean", n.mean.values}, {"std", n.stddev.values},
          {"n_fitted", n.n_fitted}, {"cap", n.cap},           {"seed", n.seed}};
}

namespace {

VisionBranchConfig read_vision(Reader r, VisionBranchConfig c, bool full) {
  r.get("backbone_channels", c.backbone_channels);
  r.get("squeeze_excitation", c.squeeze_excitation);
  r.get("se_reduction", c.se_reduction);
  r.get("feature_dim", c.feature_dim);
  r.get("head_hidden", c.head_hidden);
  r.get("dropout", c.dropout);
  r.get("n_unfrozen_tensors", c.n_unfrozen_tensors);
  if (full) {
    r.get("input_size", c.input_size);
    r.get("n_classes", c.n_classes);
  }
  r.finish();
  return c;
}

TactileBranchConfig read_tactile(Reader r, TactileBranchConfig c, bool full) {
  r.get("d_model", c.d_model);
  r.get("heads", c.heads);
  r.get("d_ffn", c.d_ffn);
  r.get("dropout", c.dropout);
  r.get("head_hidden", c.head_hidden);
  if (full) r.get("n_classes", c.n_classes);
  r.finish();
  return c;
}

PreprocessConfig read_preprocess(Reader r, PreprocessConfig c) {
  r.get("size", c.size);
  r.get("mean", c.mean);
  r.get("std", c.stddev);
  r.finish();
  return c;
}

}  // namespace

VisionBranchConfig vision_config_from_json(const json& doc, VisionBranchConfig base, bool full) {
  return read_vision(Reader(doc, "vision"), std::move(base), full);
}

TactileBranchConfig tactile_config_from_json(const json& doc, TactileBranchConfig base, bool full) {
  return read_tactile(Reader(doc, "tactile"), base, full);
}

PreprocessConfig preprocess_config_from_json(const json& doc, PreprocessConfig base) {
  return read_preprocess(Reader(doc, "preprocess"), base);
}

FeatureNormalizer normalizer_from_json(const json& doc) {
  Reader r(doc, "normalizer");
  FeatureNormalizer n;
  std::vector<std::string> names;
  r.get("features", names);
  const auto expected = tactile_feature_names();
  if (names.size() != expected.size() || !std::equal(names.begin(), names.end(), expected.begin())) {
    throw FormatError("normalizer feature order does not match this build");
  }
  r.get("mean", n.mean.values);
  r.get("std", n.stddev.values);
  r.get("n_fitted", n.n_fitted);
  r.get("cap", n.cap);
  r.get("seed", n.seed);
  r.finish();
  return n;
}

void RunConfig::validate() const {
  if (dtype != "float32" && dtype != "float64") throw ConfigError("dtype must be float32 or float64, got " + dtype);
  if (!(train_ratio > 0.0 && train_ratio < 1.0)) throw ConfigError("split.train_ratio must lie in (0, 1)");
  if (normalizer_cap < 2 || normalizer_cap > kNormalizerCap) throw ConfigError("normalizer.cap must lie in [2, 1000]");
  if (!(features.edge_threshold >= 0.0)) throw ConfigError("features.edge_threshold must be non-negative");
  if (bench.warmup < 0) throw ConfigError("bench.warmup must be non-negative");
  if (bench.iters < 10) throw ConfigError("bench.iters must be at least 10");
  if (bench.samples < 1) throw ConfigError("bench.samples must be at least 1");
  preprocess.validate();
  train.validate();
  VisionBranchConfig v = vision;
  v.input_size = preprocess.size;
  v.validate();
  tactile.validate();
}

json RunConfig::to_json() const {
  return {{"seed", seed},
          {"dtype", dtype},
          {"data", data},
          {"out", out},
          {"split", {{"train_ratio", train_ratio}}},
          {"preprocess", surfuse::to_json(preprocess)},
          {"features", {{"edge_threshold", features.edge_threshold}}},
          {"normalizer", {{"cap", normalizer_cap}}},
          {"vision", surfuse::to_json(vision, false)},
          {"tactile", surfuse::to_json(tactile, false)},
          {"train",
           {{"lr_vision", train.lr_vision},
            {"lr_tactile", train.lr_tactile},
            {"lr_fusion", train.lr_fusion},
            {"aux_weight", train.aux_weight},
            {"batch_size", train.batch_size},
            {"max_epochs", train.max_epochs},
            {"val_fraction", train.val_fraction},
            {"scheduler",
             {{"patience", train.scheduler.patience},
              {"factor", train.scheduler.factor},
              {"min_lr", train.scheduler.min_lr},
              {"threshold", train.scheduler.threshold},
              {"monitor", monitor_name(train.scheduler.monitor)}}},
            {"adam", {{"beta1", train.beta1}, {"beta2", train.beta2}, {"eps", train.adam_eps}}}}},
          {"bench", {{"warmup", bench.warmup}, {"iters", bench.iters}, {"samples", bench.samples}}}};
}

RunConfig run_config_from_json(const json& doc, RunConfig c) {
  Reader r(doc, "");
  r.get("seed", c.seed);
  r.get("dtype", c.dtype);
  r.get("data", c.data);
  r.get("out", c.out);
  if (r.has("split")) {
    Reader s = r.child("split");
    s.get("train_ratio", c.train_ratio);
    s.finish();
  }
  if (r.has("preprocess")) c.preprocess = read_preprocess(r.child("preprocess"), c.preprocess);
  if (r.has("features")) {
    Reader f = r.child("features");
    f.get("edge_threshold", c.features.edge_threshold);
    f.finish();
  }
  if (r.has("normalizer")) {
    Reader n = r.child("normalizer");
    n.get("cap", c.normalizer_cap);
    n.finish();
  }
  if (r.has("vision")) c.vision = read_vision(r.child("vision"), c.vision, false);
  if (r.has("tactile")) c.tactile = read_tactile(r.child("tactile"), c.tactile, false);
  if (r.has("train")) {
    Reader t = r.child("train");
    t.get("lr_vision", c.train.lr_vision);
    t.get("lr_tactile", c.train.lr_tactile);
    t.get("lr_fusion", c.train.lr_fusion);
    t.get("aux_weight", c.train.aux_weight);
    t.get("batch_size", c.train.batch_size);
    t.get("max_epochs", c.train.max_epochs);
    t.get("val_fraction", c.train.val_fraction);
    if (t.has("scheduler")) {
      Reader s = t.child("scheduler");
      s.get("patience", c.train.scheduler.patience);
      s.get("factor", c.train.scheduler.factor);
      s.get("min_lr", c.train.scheduler.min_lr);
      s.get("threshold", c.train.scheduler.threshold);
      std::string monitor = monitor_name(c.train.scheduler.monitor);
      s.get("monitor", monitor);
      c.train.scheduler.monitor = parse_monitor(monitor);
      s.finish();
    }
    if (t.has("adam")) {
      Reader a = t.child("adam");
      a.get("beta1", c.train.beta1);
      a.get("beta2", c.train.beta2);
      a.get("eps", c.train.adam_eps);
      a.finish();
    }
    t.finish();
  }
  if (r.has("bench")) {
    Reader b = r.child("bench");
    b.get("warmup", c.bench.warmup);
    b.get("iters", c.bench.iters);
    b.get("samples", c.bench.samples);
    b.finish();
  }
  r.finish();
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("config file " + path.string() + " not found");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(doc, std::move(base));
}

}  // namespace surfuse
