#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "surfuse/ops.hpp"

namespace surfuse {

enum class Mode { Training, Eval };
enum class ParamGroup { Vision, Tactile, Fusion };

std::string_view to_string(ParamGroup group);

struct TactileBranchConfig {
  Index d_model = 64;
  Index heads = 4;
  Index d_ffn = 256;
  double dropout = 0.1;
  Index head_hidden = 32;
  Index n_classes = 5;

  void validate() const;
};

/// Compact stand-in for a pretrained backbone: stride-2 3x3 conv -> group norm -> ReLU
/// stages (each optionally followed by squeeze-excitation), a 1x1 projection to
/// feature_dim with ReLU, and global average pooling. The head follows it verbatim.
struct VisionBranchConfig {
  Index input_size = 224;
  std::vector<Index> backbone_channels{16, 32, 64, 128};
  bool squeeze_excitation = true;
  Index se_reduction = 4;
  Index feature_dim = 1280;
  Index head_hidden = 256;
  double dropout = 0.1;
  Index n_unfrozen_tensors = 20;
  Index n_classes = 5;

  void validate() const;
  /// Number of learnable backbone tensors this configuration builds.
  Index backbone_tensor_count() const;
};

template <typename Scalar>
struct Parameter {
  std::string name;
  Tensor<Scalar> tensor;
  ParamGroup group = ParamGroup::Vision;
  bool backbone = false;
  bool trainable = true;
};

template <typename Scalar>
struct Prediction {
  Tensor<Scalar> probabilities;  ///< [B, C]
  std::vector<int> predicted;    ///< argmax per row, ties to the lowest index
  std::vector<Scalar> confidence;
};

template <typename Scalar>
struct ModelOutput {
  Tensor<Scalar> vision_logits;
  Tensor<Scalar> tactile_logits;
  Tensor<Scalar> fused_logits;
  Prediction<Scalar> prediction;
};

struct ParameterCounts {
  std::int64_t vision_total = 0;
  std::int64_t vision_trainable = 0;
  std::int64_t tactile_total = 0;
  std::int64_t fusion_total = 0;
  std::int64_t grand_total = 0;
};

/// Sinusoidal encoding of one sequence position.
std::vector<double> positional_encoding(Index d_model, Index position);

/// Two-branch late-fusion classifier. Parameters are registered in construction order:
/// vision backbone, vision head, tactile branch, fusion logits. In eval mode forward()
/// is read-only and may be called from several threads at once.
template <typename Scalar>
class SurformerModel {
 public:
  SurformerModel(VisionBranchConfig vision, TactileBranchConfig tactile, std::uint64_t seed);
  SurformerModel(const SurformerModel&) = delete;
  SurformerModel& operator=(const SurformerModel&) = delete;
  SurformerModel(SurformerModel&&) noexcept = default;
  SurformerModel& operator=(SurformerModel&&) noexcept = default;

  const VisionBranchConfig& vision_config() const { return vision_cfg_; }
  const TactileBranchConfig& tactile_config() const { return tactile_cfg_; }
  Index n_classes() const { return vision_cfg_.n_classes; }

  Mode mode() const { return mode_; }
  void set_mode(Mode mode) { mode_ = mode; }

  /// images [B, 3, S, S] -> pooled backbone features [B, feature_dim].
  Tensor<Scalar> vision_features(const Tensor<Scalar>& images) const;
  /// features [B, feature_dim] -> vision logits [B, C].
  Tensor<Scalar> vision_head(const Tensor<Scalar>& features, Rng* rng = nullptr) const;
  Tensor<Scalar> vision_forward(const Tensor<Scalar>& images, Rng* rng = nullptr) const;
  /// Normalised tactile features [B, 7] -> tactile logits [B, C].
  Tensor<Scalar> tactile_forward(const Tensor<Scalar>& features, Rng* rng = nullptr) const;
  /// Both branches, fusion and prediction. Training mode needs rng for dropout.
  ModelOutput<Scalar> forward(const Tensor<Scalar>& images, const Tensor<Scalar>& features,
                              Rng* rng = nullptr) const;

  std::vector<Parameter<Scalar>>& parameters() { return params_; }
  const std::vector<Parameter<Scalar>>& parameters() const { return params_; }
  Parameter<Scalar>& parameter(std::string_view name);
  const Tensor<Scalar>& fusion_logits() const { return fusion_; }

  void zero_grad();
  /// Value snapshot of every parameter, in registration order.
  std::vector<std::vector<Scalar>> state() const;
  void load_state(const std::vector<std::vector<Scalar>>& state);

 private:
  struct Stage {
    Tensor<Scalar> conv, norm_gamma, norm_beta;
    Tensor<Scalar> se_reduce_w, se_reduce_b, se_expand_w, se_expand_b;
  };

  Tensor<Scalar> add_param(std::string name, Shape shape, ParamGroup group, bool backbone, Index fan_in, Rng& rng);
  Tensor<Scalar> add_constant_param(std::string name, Shape shape, ParamGroup group, bool backbone, Scalar value);
  bool training() const { return mode_ == Mode::Training; }

  VisionBranchConfig vision_cfg_;
  TactileBranchConfig tactile_cfg_;
  Mode mode_ = Mode::Eval;
  std::vector<Parameter<Scalar>> params_;

  std::vector<Stage> stages_;
  Tensor<Scalar> proj_w_, proj_b_;
  Tensor<Scalar> vhead_w1_, vhead_b1_, vhead_w2_, vhead_b2_;

  Tensor<Scalar> embed_w_, embed_b_, pos_enc_;
  Tensor<Scalar> ln1_g_, ln1_b_, ln2_g_, ln2_b_;
  AttentionParams<Scalar> attn_;
  Tensor<Scalar> ffn_w1_, ffn_b1_, ffn_w2_, ffn_b2_;
  Tensor<Scalar> thead_ln_g_, thead_ln_b_, thead_w1_, thead_b1_, thead_w2_, thead_b2_;

  Tensor<Scalar> fusion_;
};

/// Softmax-normalised modality weights (alpha_vision, alpha_tactile). The smaller weight
/// is computed directly and the larger as its complement, so the pair sums to exactly one.
template <typename Scalar>
std::pair<Scalar, Scalar> fusion_alphas(const Tensor<Scalar>& fusion_logits);

/// alpha_v * vision + alpha_t * tactile, differentiable in all three inputs.
template <typename Scalar>
Tensor<Scalar> fuse(const Tensor<Scalar>& vision_logits, const Tensor<Scalar>& tactile_logits,
                    const Tensor<Scalar>& fusion_logits);

template <typename Scalar>
Prediction<Scalar> predict(const Tensor<Scalar>& fused_logits);

/// Freeze every backbone tensor except the last n in construction order. Heads, the
/// tactile branch and the fusion logits stay trainable. n above the backbone size is
/// clamped with a warning.
template <typename Scalar>
void apply_freeze_policy(SurformerModel<Scalar>& model, Index n_unfrozen);

template <typename Scalar>
ParameterCounts count_parameters(const SurformerModel<Scalar>& model);

extern template class SurformerModel<float>;
extern template class SurformerModel<double>;

}  // namespace surfuse
