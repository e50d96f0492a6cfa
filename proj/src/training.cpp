#include "surfuse/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "surfuse/parallel.hpp"

namespace surfuse {

void TrainConfig::validate() const {
  for (double lr : {lr_vision, lr_tactile, lr_fusion})
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("learning rates must be finite and non-negative");
  if (!(aux_weight >= 0.0)) throw ConfigError("aux_weight must be non-negative");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (max_epochs < 1) throw ConfigError("max_epochs must be at least 1");
  if (scheduler.patience < 1) throw ConfigError("scheduler.patience must be at least 1");
  if (!(scheduler.factor > 0.0 && scheduler.factor < 1.0)) throw ConfigError("scheduler.factor must lie in (0, 1)");
  if (!(scheduler.min_lr >= 0.0)) throw ConfigError("scheduler.min_lr must be non-negative");
  if (!(scheduler.threshold >= 0.0)) throw ConfigError("scheduler.threshold must be non-negative");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("val_fraction must lie in (0, 1)");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
}

template <typename S>
CompositeLoss<S> composite_loss(const Tensor<S>& fused, const Tensor<S>& vision, const Tensor<S>& tactile,
                                std::span<const int> targets, double lambda) {
  if (!(lambda >= 0.0)) throw ConfigError("auxiliary weight must be non-negative");
  if (fused.shape() != vision.shape() || fused.shape() != tactile.shape()) {
    throw DimensionError("composite_loss: logit shapes " + to_string(fused.shape()) + ", " +
                         to_string(vision.shape()) + ", " + to_string(tactile.shape()) + " differ");
  }
  CompositeLoss<S> out;
  out.main = cross_entropy(fused, targets);
  out.aux_v = cross_entropy(vision, targets);
  out.aux_t = cross_entropy(tactile, targets);
  const auto l = static_cast<S>(lambda);
  out.total = add(add(out.main, scale(out.aux_v, l)), scale(out.aux_t, l));
  // In 32 bits the graph's value is rounded three times and uses float(0.3). Form it in
  // double and round once; the backward of a linear combination never reads it.
  out.total[0] = static_cast<S>(static_cast<double>(out.main.item()) + lambda * static_cast<double>(out.aux_v.item()) +
                                lambda * static_cast<double>(out.aux_t.item()));
  return out;
}

template <typename S>
std::vector<ParamGroupRef<S>> make_param_groups(SurformerModel<S>& model, const TrainConfig& config) {
  std::vector<ParamGroupRef<S>> groups{{ParamGroup::Vision, config.lr_vision, {}},
                                       {ParamGroup::Tactile, config.lr_tactile, {}},
                                       {ParamGroup::Fusion, config.lr_fusion, {}}};
  std::size_t trainable = 0;
  for (auto& p : model.parameters()) {
    if (!p.trainable) continue;
    ++trainable;
    groups[static_cast<std::size_t>(p.group)].params.push_back(&p);
  }
  std::size_t grouped = 0;
  for (const auto& g : groups) grouped += g.params.size();
  if (grouped != trainable) throw Error("parameter groups do not partition the trainable parameters");
  return groups;
}

template <typename S>
Adam<S>::Adam(std::vector<ParamGroupRef<S>> groups, double beta1, double beta2, double eps)
    : groups_(std::move(groups)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& g : groups_) {
    auto& m = m_.emplace_back();
    auto& v = v_.emplace_back();
    for (const auto* p : g.params) {
      m.emplace_back(static_cast<std::size_t>(p->tensor.size()), S(0));
      v.emplace_back(static_cast<std::size_t>(p->tensor.size()), S(0));
    }
  }
}

template <typename S>
void Adam<S>::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const auto b1 = static_cast<S>(beta1_), b2 = static_cast<S>(beta2_);
  for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
    const auto& group = groups_[gi];
    const auto step = static_cast<S>(group.lr / c1);
    const auto inv_c2 = static_cast<S>(1.0 / c2);
    const auto eps = static_cast<S>(eps_);
    for (std::size_t pi = 0; pi < group.params.size(); ++pi) {
      auto& tensor = group.params[pi]->tensor;
      auto w = tensor.data();
      const auto g = tensor.grad();
      auto& m = m_[gi][pi];
      auto& v = v_[gi][pi];
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = b1 * m[i] + (S(1) - b1) * g[i];
        v[i] = b2 * v[i] + (S(1) - b2) * g[i] * g[i];
        w[i] -= step * m[i] / (std::sqrt(v[i] * inv_c2) + eps);
      }
    }
  }
}

SchedulerState plateau_step(SchedulerState state, double metric, const SchedulerConfig& config) {
  if (!std::isfinite(metric)) throw NumericError("scheduler metric is not finite");
  const double sign = config.monitor == Monitor::ValAccuracy ? 1.0 : -1.0;
  if (!state.has_best || sign * metric > sign * state.best_metric + config.threshold) {
    state.best_metric = metric;
    state.has_best = true;
    state.epochs_since_improvement = 0;
    return state;
  }
  if (++state.epochs_since_improvement > config.patience) {
    for (double& lr : state.current_lrs) lr = std::max(lr * config.factor, std::min(lr, config.min_lr));
    state.epochs_since_improvement = 0;
  }
  return state;
}

namespace {

std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

double accuracy(const std::vector<int>& pred, const std::vector<int>& truth) {
  if (truth.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += pred[i] == truth[i];
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

}  // namespace

std::string TrainLog::to_csv() const {
  std::string out = "epoch,total,main,aux_v,aux_t,acc_fused,acc_v,acc_t,alpha_v,alpha_t,lr_v,lr_t,lr_f\n";
  for (const auto& e : epochs) {
    out += std::to_string(e.epoch);
    for (double v : {e.total, e.main, e.aux_v, e.aux_t, e.acc_fused, e.acc_v, e.acc_t, e.alpha_v, e.alpha_t, e.lr_v,
                     e.lr_t, e.lr_f}) {
      out += ',';
      out += format_number(v);
    }
    out += '\n';
  }
  return out;
}

nlohmann::json TrainLog::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& e : epochs) {
    rows.push_back({{"epoch", e.epoch},     {"total", e.total},     {"main", e.main},       {"aux_v", e.aux_v},
                    {"aux_t", e.aux_t},     {"acc_fused", e.acc_fused}, {"acc_v", e.acc_v}, {"acc_t", e.acc_t},
                    {"alpha_v", e.alpha_v}, {"alpha_t", e.alpha_t}, {"lr_v", e.lr_v},       {"lr_t", e.lr_t},
                    {"lr_f", e.lr_f},       {"val_loss", e.val_loss}});
  }
  return {{"epochs", rows}, {"best_epoch", best_epoch}, {"best_val_accuracy", best_val_accuracy}};
}

template <typename S>
double Predictions<S>::accuracy_fused() const {
  return accuracy(fused, labels);
}
template <typename S>
double Predictions<S>::accuracy_vision() const {
  return accuracy(vision, labels);
}
template <typename S>
double Predictions<S>::accuracy_tactile() const {
  return accuracy(tactile, labels);
}

template <typename S>
Predictions<S> predict_set(SurformerModel<S>& model, const PreparedSet& set, const FeatureNormalizer& normalizer,
                           Index batch_size) {
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (set.n_classes() != model.n_classes()) {
    throw ConfigError("dataset has " + std::to_string(set.n_classes()) + " classes, model expects " +
                      std::to_string(model.n_classes()));
  }
  const Mode saved = model.mode();
  model.set_mode(Mode::Eval);
  const std::size_t n = set.size();
  const auto bs = static_cast<std::size_t>(batch_size);
  const std::size_t n_batches = (n + bs - 1) / bs;
  Predictions<S> out;
  out.labels = set.labels;
  out.fused.resize(n);
  out.vision.resize(n);
  out.tactile.resize(n);
  out.probabilities.resize(n);
  std::vector<double> batch_loss(n_batches, 0.0);
  const SurformerModel<S>& m = model;
  parallel_for(n_batches, [&](std::size_t b) {
    const std::size_t lo = b * bs, hi = std::min(n, lo + bs);
    std::vector<std::size_t> idx(hi - lo);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = lo + i;
    const auto res = m.forward(vision_batch<S>(set, idx), tactile_batch<S>(set, idx, normalizer));
    const auto vis = predict(res.vision_logits);
    const auto tac = predict(res.tactile_logits);
    const Index classes = m.n_classes();
    const auto probs = res.prediction.probabilities.matrix(classes);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      out.fused[lo + i] = res.prediction.predicted[i];
      out.vision[lo + i] = vis.predicted[i];
      out.tactile[lo + i] = tac.predicted[i];
      auto& row = out.probabilities[lo + i];
      row.resize(static_cast<std::size_t>(classes));
      for (Index c = 0; c < classes; ++c) row[static_cast<std::size_t>(c)] = probs(static_cast<Index>(i), c);
    }
    const std::span<const int> targets(set.labels.data() + lo, hi - lo);
    batch_loss[b] = static_cast<double>(cross_entropy(res.fused_logits, targets).item()) * static_cast<double>(hi - lo);
  });
  double total = 0;
  for (double l : batch_loss) total += l;
  out.main_loss = n ? total / static_cast<double>(n) : 0.0;
  model.set_mode(saved);
  return out;
}

template <typename S>
TrainLog fit(SurformerModel<S>& model, const PreparedSet& train, const FeatureNormalizer& normalizer,
             const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  if (train.size() == 0) throw DatasetError("training set is empty");
  if (train.n_classes() != model.n_classes()) {
    throw ConfigError("dataset has " + std::to_string(train.n_classes()) + " classes, model expects " +
                      std::to_string(model.n_classes()));
  }
  if (train.image_size != model.vision_config().input_size) {
    throw DimensionError("prepared images are " + std::to_string(train.image_size) + " px, model expects " +
                         std::to_string(model.vision_config().input_size));
  }
  std::vector<std::size_t> counts(static_cast<std::size_t>(train.n_classes()), 0);
  for (int l : train.labels) ++counts[static_cast<std::size_t>(l)];
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] == 0) throw StratificationError("class " + train.classes[c] + " is absent from the training split");
  }

  const Rng root(config.seed, 0x66697421);
  const auto [fit_idx, val_idx] =
      stratified_indices(train.labels, train.n_classes(), 1.0 - config.val_fraction, config.seed ^ 0x76616cULL);
  const PreparedSet val = train.subset(val_idx);

  Adam<S> adam(make_param_groups(model, config), config.beta1, config.beta2, config.adam_eps);
  SchedulerState sched;
  sched.current_lrs = {config.lr_vision, config.lr_tactile, config.lr_fusion};

  TrainLog log;
  std::vector<std::vector<S>> best_state;
  const auto bs = static_cast<std::size_t>(config.batch_size);
  model.zero_grad();

  for (Index epoch = 1; epoch <= config.max_epochs; ++epoch) {
    Rng epoch_rng = root.split(static_cast<std::uint64_t>(epoch));
    Rng order_rng = epoch_rng.split(0);
    Rng dropout_rng = epoch_rng.split(1);
    std::vector<std::size_t> order = fit_idx;
    shuffle(std::span<std::size_t>(order), order_rng);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr_v = adam.lr(0);
    rec.lr_t = adam.lr(1);
    rec.lr_f = adam.lr(2);
    model.set_mode(Mode::Training);
    for (std::size_t lo = 0; lo < order.size(); lo += bs) {
      const std::span<const std::size_t> idx(order.data() + lo, std::min(bs, order.size() - lo));
      std::vector<int> targets;
      targets.reserve(idx.size());
      for (std::size_t i : idx) targets.push_back(train.labels[i]);
      Tape<S> tape;
      const auto out = model.forward(vision_batch<S>(train, idx), tactile_batch<S>(train, idx, normalizer), &dropout_rng);
      const auto loss = composite_loss(out.fused_logits, out.vision_logits, out.tactile_logits,
                                       std::span<const int>(targets), config.aux_weight);
      const double total = static_cast<double>(loss.total.item());
      if (!std::isfinite(total)) throw NumericError("training loss became non-finite at epoch " + std::to_string(epoch));
      backward(loss.total, tape);
      adam.step();
      model.zero_grad();
      const auto w = static_cast<double>(idx.size());
      rec.total += total * w;
      rec.main += static_cast<double>(loss.main.item()) * w;
      rec.aux_v += static_cast<double>(loss.aux_v.item()) * w;
      rec.aux_t += static_cast<double>(loss.aux_t.item()) * w;
    }
    const auto n_fit = static_cast<double>(order.size());
    rec.total /= n_fit;
    rec.main /= n_fit;
    rec.aux_v /= n_fit;
    rec.aux_t /= n_fit;

    model.set_mode(Mode::Eval);
    const auto pred = predict_set(model, val, normalizer, std::max<Index>(config.batch_size, 64));
    rec.acc_fused = pred.accuracy_fused();
    rec.acc_v = pred.accuracy_vision();
    rec.acc_t = pred.accuracy_tactile();
    rec.val_loss = pred.main_loss;
    const auto [av, at] = fusion_alphas(model.fusion_logits());
    rec.alpha_v = static_cast<double>(av);
    rec.alpha_t = static_cast<double>(at);

    if (log.epochs.empty() || rec.acc_fused > log.best_val_accuracy) {
      log.best_val_accuracy = rec.acc_fused;
      log.best_epoch = epoch;
      best_state = model.state();
    }
    const double metric = config.scheduler.monitor == Monitor::ValAccuracy ? rec.acc_fused : rec.val_loss;
    sched = plateau_step(std::move(sched), metric, config.scheduler);
    for (std::size_t g = 0; g < 3; ++g) adam.set_lr(g, sched.current_lrs[g]);

    log.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  model.load_state(best_state);
  model.set_mode(Mode::Eval);
  return log;
}

template class Adam<float>;
template class Adam<double>;

#define SURFUSE_INSTANTIATE_TRAINING(S)                                                                           \
  template CompositeLoss<S> composite_loss(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&,                  \
                                           std::span<const int>, double);                                         \
  template std::vector<ParamGroupRef<S>> make_param_groups(SurformerModel<S>&, const TrainConfig&);               \
  template struct Predictions<S>;                                                                                 \
  template Predictions<S> predict_set(SurformerModel<S>&, const PreparedSet&, const FeatureNormalizer&, Index);   \
  template TrainLog fit(SurformerModel<S>&, const PreparedSet&, const FeatureNormalizer&, const TrainConfig&,     \
                        const EpochCallback&);

SURFUSE_INSTANTIATE_TRAINING(float)
SURFUSE_INSTANTIATE_TRAINING(double)

}  // namespace surfuse
