#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "surfuse/data.hpp"
#include "surfuse/model.hpp"

namespace surfuse {

enum class Monitor { ValAccuracy, ValLoss };

struct SchedulerConfig {
  Index patience = 5;
  double factor = 0.5;
  double min_lr = 1e-9;
  double threshold = 1e-8;
  Monitor monitor = Monitor::ValAccuracy;  ///< accuracy is maximised, loss minimised
};

struct TrainConfig {
  double lr_vision = 5e-7;
  double lr_tactile = 1.5e-4;
  double lr_fusion = 5e-7;
  double aux_weight = 0.3;
  Index batch_size = 32;
  Index max_epochs = 50;
  SchedulerConfig scheduler;
  double val_fraction = 0.1;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
};

template <typename Scalar>
struct CompositeLoss {
  Tensor<Scalar> total, main, aux_v, aux_t;
};

/// total = CE(fused) + lambda * CE(vision) + lambda * CE(tactile).
template <typename Scalar>
CompositeLoss<Scalar> composite_loss(const Tensor<Scalar>& fused, const Tensor<Scalar>& vision,
                                     const Tensor<Scalar>& tactile, std::span<const int> targets, double lambda);

template <typename Scalar>
struct ParamGroupRef {
  ParamGroup group;
  double lr = 0;
  std::vector<Parameter<Scalar>*> params;
};

/// Vision, tactile and fusion groups, in that order, holding trainable parameters only.
template <typename Scalar>
std::vector<ParamGroupRef<Scalar>> make_param_groups(SurformerModel<Scalar>& model, const TrainConfig& config);

/// Adam over parameter groups. Parameters outside the groups are never touched.
template <typename Scalar>
class Adam {
 public:
  Adam(std::vector<ParamGroupRef<Scalar>> groups, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void step();
  void set_lr(std::size_t group, double lr) { groups_.at(group).lr = lr; }
  double lr(std::size_t group) const { return groups_.at(group).lr; }
  const std::vector<ParamGroupRef<Scalar>>& groups() const { return groups_; }
  std::int64_t steps() const { return t_; }

 private:
  std::vector<ParamGroupRef<Scalar>> groups_;
  std::vector<std::vector<std::vector<Scalar>>> m_, v_;
  double beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
};

struct SchedulerState {
  double best_metric = 0;
  bool has_best = false;
  Index epochs_since_improvement = 0;
  std::vector<double> current_lrs;
};

SchedulerState plateau_step(SchedulerState state, double metric, const SchedulerConfig& config);

struct EpochRecord {
  Index epoch = 0;
  double total = 0, main = 0, aux_v = 0, aux_t = 0;  ///< mean training losses
  double acc_fused = 0, acc_v = 0, acc_t = 0;        ///< validation accuracies
  double alpha_v = 0, alpha_t = 0;                   ///< after the epoch
  double lr_v = 0, lr_t = 0, lr_f = 0;               ///< used during the epoch
  double val_loss = 0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  Index best_epoch = 0;
  double best_val_accuracy = 0;

  std::string to_csv() const;
  nlohmann::json to_json() const;
};

/// Predictions of all three heads over a prepared set.
template <typename Scalar>
struct Predictions {
  std::vector<int> labels;
  std::vector<int> fused, vision, tactile;
  std::vector<std::vector<double>> probabilities;  ///< fused softmax rows
  double main_loss = 0;                             ///< mean fused cross-entropy

  double accuracy_fused() const;
  double accuracy_vision() const;
  double accuracy_tactile() const;
};

/// Eval-mode inference in batches. Batches run on parallel_for; results do not depend on
/// the thread count.
template <typename Scalar>
Predictions<Scalar> predict_set(SurformerModel<Scalar>& model, const PreparedSet& set,
                                const FeatureNormalizer& normalizer, Index batch_size = 64);

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Carves a stratified validation part off `train`, then runs the epoch loop: seeded
/// shuffle, minibatch composite loss, one backward, Adam, plateau step on the
/// validation metric. Leaves the model at its best-validation state.
template <typename Scalar>
TrainLog fit(SurformerModel<Scalar>& model, const PreparedSet& train, const FeatureNormalizer& normalizer,
             const TrainConfig& config, const EpochCallback& on_epoch = {});

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace surfuse
