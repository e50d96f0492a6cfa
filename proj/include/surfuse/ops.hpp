#pragma once

#include <span>

#include "surfuse/rng.hpp"
#include "surfuse/tensor.hpp"

namespace surfuse {

/// y[..., j] = sum_k x[..., k] * weight[j, k] + bias[j]. Leading axes of x are batch axes.
/// Pass an undefined bias for a bias-free layer.
template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& x, const Tensor<Scalar>& weight, const Tensor<Scalar>& bias);

/// Cross-correlation of x[B, Cin, H, W] with kernel[Cout, Cin, kh, kw], zero padding.
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& kernel, const Tensor<Scalar>& bias,
                      Index stride, Index pad);

/// Output extent of a convolution along one axis.
Index conv_output_extent(Index input, Index kernel, Index stride, Index pad);

template <typename Scalar>
struct AttentionParams {
  Tensor<Scalar> w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o;
};

template <typename Scalar>
struct AttentionResult {
  Tensor<Scalar> output;   ///< [B, L, d]
  Tensor<Scalar> weights;  ///< [B, heads, L, L], rows sum to one; never requires grad
};

/// Scaled dot-product self-attention over x[B, L, d] with `heads` heads of width d / heads.
template <typename Scalar>
AttentionResult<Scalar> multi_head_attention(const Tensor<Scalar>& x, const AttentionParams<Scalar>& params,
                                             Index heads);

/// Standardise over the last axis, then scale by gamma and shift by beta.
template <typename Scalar>
Tensor<Scalar> layer_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma, const Tensor<Scalar>& beta,
                          double eps = 1e-5);

/// Standardise each sample of x[B, C, H, W] over (C, H, W); per-channel affine.
template <typename Scalar>
Tensor<Scalar> group_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma, const Tensor<Scalar>& beta,
                          double eps = 1e-5);

/// Softmax over the last axis. Throws NumericError on non-finite input.
template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& x);

/// Mean negative log-likelihood of targets under softmax(logits[B, C]).
template <typename Scalar>
Tensor<Scalar> cross_entropy(const Tensor<Scalar>& logits, std::span<const int> targets);

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x);

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& x);

/// Inverted dropout: in training mode zero with probability p and scale survivors by
/// 1 / (1 - p); identity otherwise.
template <typename Scalar>
Tensor<Scalar> dropout(const Tensor<Scalar>& x, double p, bool training, Rng* rng);

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& x, Scalar factor);

/// x[..., d] + v[d], v broadcast over the leading axes.
template <typename Scalar>
Tensor<Scalar> add_rowwise(const Tensor<Scalar>& x, const Tensor<Scalar>& v);

/// Elementwise product of equally shaped tensors.
template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

/// Sum of all entries, shape [1].
template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& x);

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& x, Shape shape);

/// Mean over the spatial axes of x[B, C, H, W], giving [B, C].
template <typename Scalar>
Tensor<Scalar> global_avg_pool(const Tensor<Scalar>& x);

/// x[B, C, H, W] * s[B, C] broadcast over space.
template <typename Scalar>
Tensor<Scalar> channel_scale(const Tensor<Scalar>& x, const Tensor<Scalar>& s);

}  // namespace surfuse
