#include "surfuse/model.hpp"

#include <algorithm>
#include <cmath>

#include "surfuse/features.hpp"

namespace surfuse {

std::string_view to_string(ParamGroup group) {
  switch (group) {
    case ParamGroup::Vision:
      return "vision";
    case ParamGroup::Tactile:
      return "tactile";
    case ParamGroup::Fusion:
      return "fusion";
  }
  return "unknown";
}

namespace {

void require_rate(const char* what, double p) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError(std::string(what) + " must lie in [0, 1)");
}

void require_positive(const char* what, Index v) {
  if (v <= 0) throw ConfigError(std::string(what) + " must be positive, got " + std::to_string(v));
}

}  // namespace

void TactileBranchConfig::validate() const {
  require_positive("tactile.d_model", d_model);
  require_positive("tactile.heads", heads);
  require_positive("tactile.d_ffn", d_ffn);
  require_positive("tactile.head_hidden", head_hidden);
  if (n_classes < 2) throw ConfigError("tactile.n_classes must be at least 2");
  if (d_model % heads != 0) {
    throw ConfigError("tactile.d_model (" + std::to_string(d_model) + ") is not divisible by heads (" +
                      std::to_string(heads) + ")");
  }
  require_rate("tactile.dropout", dropout);
}

void VisionBranchConfig::validate() const {
  require_positive("vision.input_size", input_size);
  if (backbone_channels.empty()) throw ConfigError("vision.backbone_channels must not be empty");
  for (Index c : backbone_channels) require_positive("vision.backbone_channels entry", c);
  require_positive("vision.se_reduction", se_reduction);
  require_positive("vision.feature_dim", feature_dim);
  require_positive("vision.head_hidden", head_hidden);
  if (n_classes < 2) throw ConfigError("vision.n_classes must be at least 2");
  if (n_unfrozen_tensors < 0) throw ConfigError("vision.n_unfrozen_tensors must be non-negative");
  require_rate("vision.dropout", dropout);
  Index extent = input_size;
  for (std::size_t i = 0; i < backbone_channels.size(); ++i) {
    if (extent + 2 < 3) throw ConfigError("vision.input_size too small for the backbone depth");
    extent = conv_output_extent(extent, 3, 2, 1);
  }
}

Index VisionBranchConfig::backbone_tensor_count() const {
  const Index per_stage = squeeze_excitation ? 7 : 3;
  return per_stage * static_cast<Index>(backbone_channels.size()) + 2;
}

std::vector<double> positional_encoding(Index d_model, Index position) {
  std::vector<double> pe(static_cast<std::size_t>(d_model));
  for (Index i = 0; i < d_model; ++i) {
    const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d_model));
    const double angle = static_cast<double>(position) * freq;
    pe[static_cast<std::size_t>(i)] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
  }
  return pe;
}

template <typename S>
Tensor<S> SurformerModel<S>::add_param(std::string name, Shape shape, ParamGroup group, bool backbone, Index fan_in,
                                       Rng& rng) {
  Tensor<S> t(std::move(shape));
  t.set_requires_grad(true);
  Rng local = rng.split(params_.size());
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  for (S& v : t.data()) v = static_cast<S>(local.uniform(-bound, bound));
  params_.push_back(Parameter<S>{std::move(name), t, group, backbone, true});
  return t;
}

template <typename S>
Tensor<S> SurformerModel<S>::add_constant_param(std::string name, Shape shape, ParamGroup group, bool backbone,
                                                S value) {
  Tensor<S> t = Tensor<S>::full(std::move(shape), value);
  t.set_requires_grad(true);
  params_.push_back(Parameter<S>{std::move(name), t, group, backbone, true});
  return t;
}

template <typename S>
SurformerModel<S>::SurformerModel(VisionBranchConfig vision, TactileBranchConfig tactile, std::uint64_t seed)
    : vision_cfg_(std::move(vision)), tactile_cfg_(tactile) {
  vision_cfg_.validate();
  tactile_cfg_.validate();
  if (vision_cfg_.n_classes != tactile_cfg_.n_classes) {
    throw ConfigError("vision and tactile branches disagree on n_classes");
  }
  Rng rng(seed);
  const Index classes = vision_cfg_.n_classes;

  // Vision backbone, then head.
  Index in_ch = 3;
  for (std::size_t s = 0; s < vision_cfg_.backbone_channels.size(); ++s) {
    const Index out_ch = vision_cfg_.backbone_channels[s];
    const std::string p = "vision.backbone.stage" + std::to_string(s) + ".";
    Stage st;
    st.conv = add_param(p + "conv.weight", {out_ch, in_ch, 3, 3}, ParamGroup::Vision, true, in_ch * 9, rng);
    st.norm_gamma = add_constant_param(p + "norm.weight", {out_ch}, ParamGroup::Vision, true, S(1));
    st.norm_beta = add_constant_param(p + "norm.bias", {out_ch}, ParamGroup::Vision, true, S(0));
    if (vision_cfg_.squeeze_excitation) {
      const Index hidden = std::max<Index>(1, out_ch / vision_cfg_.se_reduction);
      st.se_reduce_w = add_param(p + "se.reduce.weight", {hidden, out_ch}, ParamGroup::Vision, true, out_ch, rng);
      st.se_reduce_b = add_param(p + "se.reduce.bias", {hidden}, ParamGroup::Vision, true, out_ch, rng);
      st.se_expand_w = add_param(p + "se.expand.weight", {out_ch, hidden}, ParamGroup::Vision, true, hidden, rng);
      st.se_expand_b = add_param(p + "se.expand.bias", {out_ch}, ParamGroup::Vision, true, hidden, rng);
    }
    stages_.push_back(std::move(st));
    in_ch = out_ch;
  }
  const Index feat = vision_cfg_.feature_dim;
  proj_w_ = add_param("vision.backbone.projection.weight", {feat, in_ch, 1, 1}, ParamGroup::Vision, true, in_ch, rng);
  proj_b_ = add_param("vision.backbone.projection.bias", {feat}, ParamGroup::Vision, true, in_ch, rng);

  const Index vh = vision_cfg_.head_hidden;
  vhead_w1_ = add_param("vision.head.fc1.weight", {vh, feat}, ParamGroup::Vision, false, feat, rng);
  vhead_b1_ = add_param("vision.head.fc1.bias", {vh}, ParamGroup::Vision, false, feat, rng);
  vhead_w2_ = add_param("vision.head.fc2.weight", {classes, vh}, ParamGroup::Vision, false, vh, rng);
  vhead_b2_ = add_param("vision.head.fc2.bias", {classes}, ParamGroup::Vision, false, vh, rng);

  // Tactile branch.
  const Index d = tactile_cfg_.d_model;
  const Index ffn = tactile_cfg_.d_ffn;
  const Index th = tactile_cfg_.head_hidden;
  const auto T = ParamGroup::Tactile;
  embed_w_ = add_param("tactile.embed.weight", {d, kTactileFeatureCount}, T, false, kTactileFeatureCount, rng);
  embed_b_ = add_param("tactile.embed.bias", {d}, T, false, kTactileFeatureCount, rng);
  {
    const auto pe = positional_encoding(d, 0);
    pos_enc_ = Tensor<S>({d}, std::vector<S>(pe.begin(), pe.end()));
  }
  ln1_g_ = add_constant_param("tactile.encoder.norm1.weight", {d}, T, false, S(1));
  ln1_b_ = add_constant_param("tactile.encoder.norm1.bias", {d}, T, false, S(0));
  attn_.w_q = add_param("tactile.encoder.attn.q.weight", {d, d}, T, false, d, rng);
  attn_.b_q = add_param("tactile.encoder.attn.q.bias", {d}, T, false, d, rng);
  attn_.w_k = add_param("tactile.encoder.attn.k.weight", {d, d}, T, false, d, rng);
  attn_.b_k = add_param("tactile.encoder.attn.k.bias", {d}, T, false, d, rng);
  attn_.w_v = add_param("tactile.encoder.attn.v.weight", {d, d}, T, false, d, rng);
  attn_.b_v = add_param("tactile.encoder.attn.v.bias", {d}, T, false, d, rng);
  attn_.w_o = add_param("tactile.encoder.attn.out.weight", {d, d}, T, false, d, rng);
  attn_.b_o = add_param("tactile.encoder.attn.out.bias", {d}, T, false, d, rng);
  ln2_g_ = add_constant_param("tactile.encoder.norm2.weight", {d}, T, false, S(1));
  ln2_b_ = add_constant_param("tactile.encoder.norm2.bias", {d}, T, false, S(0));
  ffn_w1_ = add_param("tactile.encoder.ffn1.weight", {ffn, d}, T, false, d, rng);
  ffn_b1_ = add_param("tactile.encoder.ffn1.bias", {ffn}, T, false, d, rng);
  ffn_w2_ = add_param("tactile.encoder.ffn2.weight", {d, ffn}, T, false, ffn, rng);
  ffn_b2_ = add_param("tactile.encoder.ffn2.bias", {d}, T, false, ffn, rng);
  thead_ln_g_ = add_constant_param("tactile.head.norm.weight", {d}, T, false, S(1));
  thead_ln_b_ = add_constant_param("tactile.head.norm.bias", {d}, T, false, S(0));
  thead_w1_ = add_param("tactile.head.fc1.weight", {th, d}, T, false, d, rng);
  thead_b1_ = add_param("tactile.head.fc1.bias", {th}, T, false, d, rng);
  thead_w2_ = add_param("tactile.head.fc2.weight", {classes, th}, T, false, th, rng);
  thead_b2_ = add_param("tactile.head.fc2.bias", {classes}, T, false, th, rng);

  fusion_ = add_constant_param("fusion.logits", {2}, ParamGroup::Fusion, false, S(0));

  apply_freeze_policy(*this, vision_cfg_.n_unfrozen_tensors);
}

template <typename S>
Tensor<S> SurformerModel<S>::vision_features(const Tensor<S>& images) const {
  const Index size = vision_cfg_.input_size;
  if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != size || images.dim(3) != size) {
    throw DimensionError("vision input must be [B, 3, " + std::to_string(size) + ", " + std::to_string(size) +
                         "], got " + to_string(images.shape()));
  }
  Tensor<S> x = images;
  const Tensor<S> no_bias;
  for (const Stage& st : stages_) {
    x = conv2d(x, st.conv, no_bias, 2, 1);
    x = relu(group_norm(x, st.norm_gamma, st.norm_beta));
    if (vision_cfg_.squeeze_excitation) {
      Tensor<S> s = global_avg_pool(x);
      s = relu(linear(s, st.se_reduce_w, st.se_reduce_b));
      s = sigmoid(linear(s, st.se_expand_w, st.se_expand_b));
      x = channel_scale(x, s);
    }
  }
  x = relu(conv2d(x, proj_w_, proj_b_, 1, 0));
  return global_avg_pool(x);
}

template <typename S>
Tensor<S> SurformerModel<S>::vision_head(const Tensor<S>& features, Rng* rng) const {
  if (features.rank() != 2 || features.dim(1) != vision_cfg_.feature_dim) {
    throw DimensionError("vision head expects [B, " + std::to_string(vision_cfg_.feature_dim) + "], got " +
                         to_string(features.shape()));
  }
  const double p = vision_cfg_.dropout;
  Tensor<S> h = dropout(features, p, training(), rng);
  h = relu(linear(h, vhead_w1_, vhead_b1_));
  h = dropout(h, p, training(), rng);
  return linear(h, vhead_w2_, vhead_b2_);
}

template <typename S>
Tensor<S> SurformerModel<S>::vision_forward(const Tensor<S>& images, Rng* rng) const {
  return vision_head(vision_features(images), rng);
}

template <typename S>
Tensor<S> SurformerModel<S>::tactile_forward(const Tensor<S>& features, Rng* rng) const {
  if (features.rank() != 2 || features.dim(1) != kTactileFeatureCount) {
    throw DimensionError("tactile input must be [B, 7], got " + to_string(features.shape()));
  }
  const Index batch = features.dim(0);
  const Index d = tactile_cfg_.d_model;
  const double p = tactile_cfg_.dropout;
  const bool train = training();

  Tensor<S> tok = add_rowwise(linear(features, embed_w_, embed_b_), pos_enc_);
  Tensor<S> x = reshape(tok, {batch, 1, d});

  Tensor<S> a = multi_head_attention(layer_norm(x, ln1_g_, ln1_b_), attn_, tactile_cfg_.heads).output;
  x = add(x, dropout(a, p, train, rng));

  Tensor<S> f = relu(linear(layer_norm(x, ln2_g_, ln2_b_), ffn_w1_, ffn_b1_));
  f = linear(dropout(f, p, train, rng), ffn_w2_, ffn_b2_);
  x = add(x, dropout(f, p, train, rng));

  Tensor<S> h = reshape(x, {batch, d});
  h = dropout(layer_norm(h, thead_ln_g_, thead_ln_b_), p, train, rng);
  h = relu(linear(h, thead_w1_, thead_b1_));
  return linear(h, thead_w2_, thead_b2_);
}

template <typename S>
ModelOutput<S> SurformerModel<S>::forward(const Tensor<S>& images, const Tensor<S>& features, Rng* rng) const {
  if (images.rank() >= 1 && features.rank() >= 1 && images.dim(0) != features.dim(0)) {
    throw DimensionError("vision and tactile batches differ: " + to_string(images.shape()) + " vs " +
                         to_string(features.shape()));
  }
  ModelOutput<S> out;
  out.vision_logits = vision_forward(images, rng);
  out.tactile_logits = tactile_forward(features, rng);
  out.fused_logits = fuse(out.vision_logits, out.tactile_logits, fusion_);
  out.prediction = predict(out.fused_logits);
  return out;
}

template <typename S>
Parameter<S>& SurformerModel<S>::parameter(std::string_view name) {
  for (auto& p : params_)
    if (p.name == name) return p;
  throw IndexError("no parameter named " + std::string(name));
}

template <typename S>
void SurformerModel<S>::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

template <typename S>
std::vector<std::vector<S>> SurformerModel<S>::state() const {
  std::vector<std::vector<S>> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  return out;
}

template <typename S>
void SurformerModel<S>::load_state(const std::vector<std::vector<S>>& state) {
  if (state.size() != params_.size()) {
    throw DimensionError("state has " + std::to_string(state.size()) + " tensors, model has " +
                         std::to_string(params_.size()));
  }
  for (std::size_t i = 0; i < state.size(); ++i) {
    auto dst = params_[i].tensor.data();
    if (state[i].size() != dst.size()) throw DimensionError("state size mismatch for " + params_[i].name);
    std::copy(state[i].begin(), state[i].end(), dst.begin());
  }
}

template <typename S>
std::pair<S, S> fusion_alphas(const Tensor<S>& w) {
  if (w.size() != 2) throw DimensionError("fusion logits must hold 2 values, got " + to_string(w.shape()));
  const S gap = w[0] - w[1];
  const S e = std::exp(-std::abs(gap));
  const S small = e / (S(1) + e);
  const S large = S(1) - small;
  return gap >= S(0) ? std::pair<S, S>{large, small} : std::pair<S, S>{small, large};
}

template <typename S>
Tensor<S> fuse(const Tensor<S>& zv, const Tensor<S>& zt, const Tensor<S>& w) {
  if (zv.shape() != zt.shape()) {
    throw DimensionError("fuse: vision logits " + to_string(zv.shape()) + " vs tactile logits " +
                         to_string(zt.shape()));
  }
  const auto [av, at] = fusion_alphas(w);
  Tensor<S> y(zv.shape());
  auto yd = y.data();
  const auto vd = zv.data();
  const auto td = zt.data();
  for (std::size_t i = 0; i < yd.size(); ++i) yd[i] = av * vd[i] + at * td[i];
  if (should_record<S>({&zv, &zt, &w})) {
    Tape<S>::active()->record({zv, zt, w}, y, [zv, zt, w, y, av = av, at = at]() {
      const auto gy = y.grad();
      const auto vd = zv.data();
      const auto td = zt.data();
      S dv = 0, dt = 0;
      for (std::size_t i = 0; i < gy.size(); ++i) {
        dv += gy[i] * vd[i];
        dt += gy[i] * td[i];
      }
      if (zv.requires_grad()) {
        auto g = zv.grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += av * gy[i];
        zv.mark_grad_touched();
      }
      if (zt.requires_grad()) {
        auto g = zt.grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += at * gy[i];
        zt.mark_grad_touched();
      }
      if (w.requires_grad()) {
        const S gw = av * at * (dv - dt);
        w.grad()[0] += gw;
        w.grad()[1] -= gw;
        w.mark_grad_touched();
      }
    });
  }
  return y;
}

template <typename S>
Prediction<S> predict(const Tensor<S>& fused) {
  if (fused.rank() != 2) throw DimensionError("predict expects [B, C], got " + to_string(fused.shape()));
  Prediction<S> out;
  out.probabilities = softmax(fused.detach());
  const Index classes = fused.dim(1);
  const auto probs = out.probabilities.matrix(classes);
  for (Index b = 0; b < probs.rows(); ++b) {
    Index best = 0;
    for (Index c = 1; c < classes; ++c)
      if (probs(b, c) > probs(b, best)) best = c;
    out.predicted.push_back(static_cast<int>(best));
    out.confidence.push_back(probs(b, best));
  }
  return out;
}

template <typename S>
void apply_freeze_policy(SurformerModel<S>& model, Index n_unfrozen) {
  if (n_unfrozen < 0) throw ConfigError("n_unfrozen must be non-negative");
  std::vector<Parameter<S>*> backbone;
  for (auto& p : model.parameters()) {
    if (p.backbone) {
      backbone.push_back(&p);
    } else {
      p.trainable = true;
    }
  }
  const auto total = static_cast<Index>(backbone.size());
  if (n_unfrozen > total) {
    warn("n_unfrozen=" + std::to_string(n_unfrozen) + " exceeds the " + std::to_string(total) +
         " backbone tensors; unfreezing all of them");
    n_unfrozen = total;
  }
  for (Index i = 0; i < total; ++i) backbone[static_cast<std::size_t>(i)]->trainable = i >= total - n_unfrozen;
  // Frozen tensors drop out of the graph, so the frozen prefix is never recorded.
  for (auto& p : model.parameters()) p.tensor.set_requires_grad(p.trainable);
}

template <typename S>
ParameterCounts count_parameters(const SurformerModel<S>& model) {
  ParameterCounts c;
  for (const auto& p : model.parameters()) {
    const auto n = static_cast<std::int64_t>(p.tensor.size());
    switch (p.group) {
      case ParamGroup::Vision:
        c.vision_total += n;
        if (p.trainable) c.vision_trainable += n;
        break;
      case ParamGroup::Tactile:
        c.tactile_total += n;
        break;
      case ParamGroup::Fusion:
        c.fusion_total += n;
        break;
    }
  }
  c.grand_total = c.vision_total + c.tactile_total + c.fusion_total;
  return c;
}

template class SurformerModel<float>;
template class SurformerModel<double>;

#define SURFUSE_INSTANTIATE_MODEL(S)                                                  \
  template std::pair<S, S> fusion_alphas(const Tensor<S>&);                           \
  template Tensor<S> fuse(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);      \
  template Prediction<S> predict(const Tensor<S>&);                                   \
  template void apply_freeze_policy(SurformerModel<S>&, Index);                       \
  template ParameterCounts count_parameters(const SurformerModel<S>&);

SURFUSE_INSTANTIATE_MODEL(float)
SURFUSE_INSTANTIATE_MODEL(double)

}  // namespace surfuse
