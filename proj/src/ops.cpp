#include "surfuse/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace surfuse {

namespace {

template <typename S>
using Vector = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <typename S>
using RowVector = Eigen::Matrix<S, 1, Eigen::Dynamic>;

template <typename S>
std::vector<Tensor<S>> defined_only(std::initializer_list<Tensor<S>> ts) {
  std::vector<Tensor<S>> out;
  for (const auto& t : ts)
    if (t.defined()) out.push_back(t);
  return out;
}

template <typename S>
bool wants_grad(const Tensor<S>& t) {
  return t.defined() && t.requires_grad();
}

template <typename S>
ConstMatrixMap<S> grad_of(const Tensor<S>& t, Index cols) {
  return ConstMatrixMap<S>(t.grad().data(), t.size() / cols, cols);
}

template <typename S>
void require_same_shape(const char* op, const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + to_string(a.shape()) + " and " + to_string(b.shape()) +
                         " differ");
  }
}

template <typename S>
void require_finite(const char* op, const Tensor<S>& x) {
  for (S v : x.data()) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite input");
  }
}

// Unfold one image [C, H, W] into columns [C*kh*kw, Ho*Wo].
template <typename S>
void im2col(const S* img, Index channels, Index height, Index width, Index kh, Index kw, Index stride, Index pad,
            Index out_h, Index out_w, S* col) {
  const Index plane = out_h * out_w;
  for (Index c = 0; c < channels; ++c) {
    for (Index i = 0; i < kh; ++i) {
      for (Index j = 0; j < kw; ++j) {
        S* row = col + ((c * kh + i) * kw + j) * plane;
        for (Index oy = 0; oy < out_h; ++oy) {
          const Index iy = oy * stride - pad + i;
          S* dst = row + oy * out_w;
          if (iy < 0 || iy >= height) {
            std::fill(dst, dst + out_w, S(0));
            continue;
          }
          const S* src = img + (c * height + iy) * width;
          for (Index ox = 0; ox < out_w; ++ox) {
            const Index ix = ox * stride - pad + j;
            dst[ox] = (ix >= 0 && ix < width) ? src[ix] : S(0);
          }
        }
      }
    }
  }
}

template <typename S>
void col2im(const S* col, Index channels, Index height, Index width, Index kh, Index kw, Index stride, Index pad,
            Index out_h, Index out_w, S* img) {
  const Index plane = out_h * out_w;
  for (Index c = 0; c < channels; ++c) {
    for (Index i = 0; i < kh; ++i) {
      for (Index j = 0; j < kw; ++j) {
        const S* row = col + ((c * kh + i) * kw + j) * plane;
        for (Index oy = 0; oy < out_h; ++oy) {
          const Index iy = oy * stride - pad + i;
          if (iy < 0 || iy >= height) continue;
          S* dst = img + (c * height + iy) * width;
          const S* src = row + oy * out_w;
          for (Index ox = 0; ox < out_w; ++ox) {
            const Index ix = ox * stride - pad + j;
            if (ix >= 0 && ix < width) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Index conv_output_extent(Index input, Index kernel, Index stride, Index pad) {
  return (input + 2 * pad - kernel) / stride + 1;
}

template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias) {
  if (weight.rank() != 2 || x.dim(-1) != weight.dim(1)) {
    throw DimensionError("linear: input " + to_string(x.shape()) + " incompatible with weight " +
                         to_string(weight.shape()));
  }
  const Index n = weight.dim(1);
  const Index m = weight.dim(0);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != m)) {
    throw DimensionError("linear: bias " + to_string(bias.shape()) + " incompatible with weight " +
                         to_string(weight.shape()));
  }
  Shape out_shape = x.shape();
  out_shape.back() = m;
  Tensor<S> y(out_shape);
  auto out = y.matrix(m);
  out.noalias() = x.matrix(n) * weight.matrix(n).transpose();
  if (bias.defined()) out.rowwise() += Eigen::Map<const RowVector<S>>(bias.ptr(), m);

  if (should_record<S>({&x, &weight, &bias})) {
    Tape<S>::active()->record(defined_only<S>({x, weight, bias}), y, [x, weight, bias, y, n, m]() mutable {
      const auto gy = grad_of(y, m);
      if (wants_grad(x)) x.grad_matrix(n).noalias() += gy * weight.matrix(n);
      if (wants_grad(weight)) weight.grad_matrix(n).noalias() += gy.transpose() * x.matrix(n);
      if (wants_grad(bias)) bias.grad_matrix(m) += gy.colwise().sum();
    });
  }
  return y;
}

template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& kernel, const Tensor<S>& bias, Index stride, Index pad) {
  if (x.rank() != 4 || kernel.rank() != 4 || x.dim(1) != kernel.dim(1)) {
    throw DimensionError("conv2d: input " + to_string(x.shape()) + " incompatible with kernel " +
                         to_string(kernel.shape()));
  }
  if (stride < 1 || pad < 0) throw ConfigError("conv2d: stride must be >= 1 and pad >= 0");
  const Index batch = x.dim(0), cin = x.dim(1), height = x.dim(2), width = x.dim(3);
  const Index cout = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  if (kh > height + 2 * pad || kw > width + 2 * pad) {
    throw DimensionError("conv2d: kernel " + to_string(kernel.shape()) + " larger than padded input " +
                         to_string(x.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != cout)) {
    throw DimensionError("conv2d: bias " + to_string(bias.shape()) + " does not match kernel " +
                         to_string(kernel.shape()));
  }
  const Index out_h = conv_output_extent(height, kh, stride, pad);
  const Index out_w = conv_output_extent(width, kw, stride, pad);
  const Index plane = out_h * out_w;
  const Index depth = cin * kh * kw;
  const bool pointwise = kh == 1 && kw == 1 && stride == 1 && pad == 0;

  Tensor<S> y({batch, cout, out_h, out_w});
  const auto weights = kernel.matrix(depth);
  RowMatrix<S> col(pointwise ? 0 : depth, pointwise ? 0 : plane);
  for (Index b = 0; b < batch; ++b) {
    const S* img = x.ptr() + b * cin * height * width;
    MatrixMap<S> out(y.ptr() + b * cout * plane, cout, plane);
    if (pointwise) {
      out.noalias() = weights * ConstMatrixMap<S>(img, depth, plane);
    } else {
      im2col(img, cin, height, width, kh, kw, stride, pad, out_h, out_w, col.data());
      out.noalias() = weights * col;
    }
    if (bias.defined()) out.colwise() += Eigen::Map<const Vector<S>>(bias.ptr(), cout);
  }

  if (should_record<S>({&x, &kernel, &bias})) {
    Tape<S>::active()->record(defined_only<S>({x, kernel, bias}), y, [=]() mutable {
      RowMatrix<S> col(pointwise ? 0 : depth, pointwise ? 0 : plane);
      RowMatrix<S> dcol(depth, plane);
      const auto w = kernel.matrix(depth);
      for (Index b = 0; b < batch; ++b) {
        const S* img = x.ptr() + b * cin * height * width;
        ConstMatrixMap<S> gy(y.grad().data() + b * cout * plane, cout, plane);
        if (wants_grad(kernel)) {
          if (pointwise) {
            kernel.grad_matrix(depth).noalias() += gy * ConstMatrixMap<S>(img, depth, plane).transpose();
          } else {
            im2col(img, cin, height, width, kh, kw, stride, pad, out_h, out_w, col.data());
            kernel.grad_matrix(depth).noalias() += gy * col.transpose();
          }
        }
        if (wants_grad(bias)) bias.grad_matrix(cout) += gy.rowwise().sum().transpose();
        if (wants_grad(x)) {
          S* gimg = x.grad_ptr() + b * cin * height * width;
          x.mark_grad_touched();
          if (pointwise) {
            MatrixMap<S>(gimg, depth, plane).noalias() += w.transpose() * gy;
          } else {
            dcol.noalias() = w.transpose() * gy;
            col2im(dcol.data(), cin, height, width, kh, kw, stride, pad, out_h, out_w, gimg);
          }
        }
      }
    });
  }
  return y;
}

template <typename S>
AttentionResult<S> multi_head_attention(const Tensor<S>& x, const AttentionParams<S>& p, Index heads) {
  if (x.rank() != 3) throw DimensionError("multi_head_attention: expected [B, L, d], got " + to_string(x.shape()));
  const Index batch = x.dim(0), len = x.dim(1), d = x.dim(2);
  if (heads < 1 || d % heads != 0) {
    throw ConfigError("multi_head_attention: model width " + std::to_string(d) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  for (const Tensor<S>* w : {&p.w_q, &p.w_k, &p.w_v, &p.w_o}) {
    if (w->shape() != Shape{d, d}) throw DimensionError("multi_head_attention: projection must be [d, d]");
  }
  for (const Tensor<S>* b : {&p.b_q, &p.b_k, &p.b_v, &p.b_o}) {
    if (b->shape() != Shape{d}) throw DimensionError("multi_head_attention: bias must be [d]");
  }
  const Index dh = d / heads;
  const S inv_scale = S(1) / std::sqrt(static_cast<S>(dh));

  struct Cache {
    RowMatrix<S> q, k, v, ctx;
  };
  auto cache = std::make_shared<Cache>();
  const auto xm = x.matrix(d);
  auto project = [&](const Tensor<S>& w, const Tensor<S>& b) {
    RowMatrix<S> out = xm * w.matrix(d).transpose();
    out.rowwise() += Eigen::Map<const RowVector<S>>(b.ptr(), d);
    return out;
  };
  cache->q = project(p.w_q, p.b_q);
  cache->k = project(p.w_k, p.b_k);
  cache->v = project(p.w_v, p.b_v);
  cache->ctx.resize(batch * len, d);

  Tensor<S> weights({batch, heads, len, len});
  for (Index b = 0; b < batch; ++b) {
    for (Index h = 0; h < heads; ++h) {
      MatrixMap<S> a(weights.ptr() + (b * heads + h) * len * len, len, len);
      a.noalias() = cache->q.block(b * len, h * dh, len, dh) * cache->k.block(b * len, h * dh, len, dh).transpose();
      a *= inv_scale;
      for (Index r = 0; r < len; ++r) {
        const S mx = a.row(r).maxCoeff();
        a.row(r) = (a.row(r).array() - mx).exp();
        a.row(r) /= a.row(r).sum();
      }
      cache->ctx.block(b * len, h * dh, len, dh).noalias() = a * cache->v.block(b * len, h * dh, len, dh);
    }
  }
  Tensor<S> y(x.shape());
  y.matrix(d).noalias() = cache->ctx * p.w_o.matrix(d).transpose();
  y.matrix(d).rowwise() += Eigen::Map<const RowVector<S>>(p.b_o.ptr(), d);

  if (should_record<S>({&x, &p.w_q, &p.b_q, &p.w_k, &p.b_k, &p.w_v, &p.b_v, &p.w_o, &p.b_o})) {
    Tape<S>::active()->record(
        defined_only<S>({x, p.w_q, p.b_q, p.w_k, p.b_k, p.w_v, p.b_v, p.w_o, p.b_o}), y,
        [=]() mutable {
          auto params = p;
          const auto gy = grad_of(y, d);
          if (wants_grad(params.w_o)) params.w_o.grad_matrix(d).noalias() += gy.transpose() * cache->ctx;
          if (wants_grad(params.b_o)) params.b_o.grad_matrix(d) += gy.colwise().sum();
          const RowMatrix<S> gctx = gy * params.w_o.matrix(d);
          RowMatrix<S> gq(batch * len, d), gk(batch * len, d), gv(batch * len, d);
          RowMatrix<S> ga(len, len);
          for (Index b = 0; b < batch; ++b) {
            for (Index h = 0; h < heads; ++h) {
              ConstMatrixMap<S> a(weights.ptr() + (b * heads + h) * len * len, len, len);
              const auto gc = gctx.block(b * len, h * dh, len, dh);
              gv.block(b * len, h * dh, len, dh).noalias() = a.transpose() * gc;
              ga.noalias() = gc * cache->v.block(b * len, h * dh, len, dh).transpose();
              // softmax backward, then the 1/sqrt(dh) scale
              for (Index r = 0; r < len; ++r) {
                const S dot = ga.row(r).dot(a.row(r));
                ga.row(r) = (a.row(r).array() * (ga.row(r).array() - dot)).matrix();
              }
              ga *= inv_scale;
              gq.block(b * len, h * dh, len, dh).noalias() = ga * cache->k.block(b * len, h * dh, len, dh);
              gk.block(b * len, h * dh, len, dh).noalias() = ga.transpose() * cache->q.block(b * len, h * dh, len, dh);
            }
          }
          const auto xm = x.matrix(d);
          auto backprop = [&](Tensor<S>& w, Tensor<S>& bias, const RowMatrix<S>& g) {
            if (wants_grad(w)) w.grad_matrix(d).noalias() += g.transpose() * xm;
            if (wants_grad(bias)) bias.grad_matrix(d) += g.colwise().sum();
            if (wants_grad(x)) x.grad_matrix(d).noalias() += g * w.matrix(d);
          };
          backprop(params.w_q, params.b_q, gq);
          backprop(params.w_k, params.b_k, gk);
          backprop(params.w_v, params.b_v, gv);
        });
  }
  return {y, weights};
}

template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta, double eps) {
  const Index d = x.dim(-1);
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
    throw DimensionError("layer_norm: affine parameters must be [" + std::to_string(d) + "], input " +
                         to_string(x.shape()));
  }
  if (!(eps > 0)) throw ConfigError("layer_norm: eps must be positive");
  const Index rows = x.size() / d;
  auto xhat = std::make_shared<RowMatrix<S>>(rows, d);
  auto rstd = std::make_shared<Vector<S>>(rows);
  const auto xm = x.matrix(d);
  Tensor<S> y(x.shape());
  auto ym = y.matrix(d);
  const Eigen::Map<const RowVector<S>> g(gamma.ptr(), d), bt(beta.ptr(), d);
  for (Index r = 0; r < rows; ++r) {
    const S mean = xm.row(r).mean();
    const S var = (xm.row(r).array() - mean).square().mean();
    (*rstd)(r) = S(1) / std::sqrt(var + static_cast<S>(eps));
    xhat->row(r) = (xm.row(r).array() - mean) * (*rstd)(r);
    ym.row(r) = xhat->row(r).cwiseProduct(g) + bt;
  }
  if (should_record<S>({&x, &gamma, &beta})) {
    Tape<S>::active()->record({x, gamma, beta}, y, [=]() mutable {
      const auto gy = grad_of(y, d);
      if (wants_grad(gamma)) gamma.grad_matrix(d) += gy.cwiseProduct(*xhat).colwise().sum();
      if (wants_grad(beta)) beta.grad_matrix(d) += gy.colwise().sum();
      if (wants_grad(x)) {
        auto gx = x.grad_matrix(d);
        const Eigen::Map<const RowVector<S>> gam(gamma.ptr(), d);
        for (Index r = 0; r < rows; ++r) {
          const RowVector<S> gh = gy.row(r).cwiseProduct(gam);
          const S m1 = gh.mean();
          const S m2 = gh.cwiseProduct(xhat->row(r)).mean();
          gx.row(r).array() += (*rstd)(r) * (gh.array() - m1 - xhat->row(r).array() * m2);
        }
      }
    });
  }
  return y;
}

template <typename S>
Tensor<S> group_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta, double eps) {
  if (x.rank() != 4) throw DimensionError("group_norm: expected [B, C, H, W], got " + to_string(x.shape()));
  const Index batch = x.dim(0), channels = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (gamma.shape() != Shape{channels} || beta.shape() != Shape{channels}) {
    throw DimensionError("group_norm: affine parameters must be [" + std::to_string(channels) + "]");
  }
  if (!(eps > 0)) throw ConfigError("group_norm: eps must be positive");
  const Index n = channels * plane;
  auto xhat = std::make_shared<RowMatrix<S>>(batch, n);
  auto rstd = std::make_shared<Vector<S>>(batch);
  const auto xm = x.matrix(n);
  Tensor<S> y(x.shape());
  for (Index b = 0; b < batch; ++b) {
    const S mean = xm.row(b).mean();
    const S var = (xm.row(b).array() - mean).square().mean();
    (*rstd)(b) = S(1) / std::sqrt(var + static_cast<S>(eps));
    xhat->row(b) = (xm.row(b).array() - mean) * (*rstd)(b);
    for (Index c = 0; c < channels; ++c) {
      MatrixMap<S>(y.ptr() + (b * channels + c) * plane, 1, plane) =
          (xhat->block(b, c * plane, 1, plane).array() * gamma[c] + beta[c]).matrix();
    }
  }
  if (should_record<S>({&x, &gamma, &beta})) {
    Tape<S>::active()->record({x, gamma, beta}, y, [=]() mutable {
      const auto gy = grad_of(y, n);
      for (Index b = 0; b < batch; ++b) {
        for (Index c = 0; c < channels; ++c) {
          const auto gyc = gy.block(b, c * plane, 1, plane);
          if (wants_grad(gamma)) gamma.grad()[c] += gyc.cwiseProduct(xhat->block(b, c * plane, 1, plane)).sum();
          if (wants_grad(beta)) beta.grad()[c] += gyc.sum();
        }
      }
      if (wants_grad(gamma)) gamma.mark_grad_touched();
      if (wants_grad(beta)) beta.mark_grad_touched();
      if (wants_grad(x)) {
        auto gx = x.grad_matrix(n);
        RowVector<S> gh(n);
        for (Index b = 0; b < batch; ++b) {
          for (Index c = 0; c < channels; ++c) gh.segment(c * plane, plane) = gy.block(b, c * plane, 1, plane) * gamma[c];
          const S m1 = gh.mean();
          const S m2 = gh.cwiseProduct(xhat->row(b)).mean();
          gx.row(b).array() += (*rstd)(b) * (gh.array() - m1 - xhat->row(b).array() * m2);
        }
      }
    });
  }
  return y;
}

template <typename S>
Tensor<S> softmax(const Tensor<S>& x) {
  require_finite("softmax", x);
  const Index n = x.dim(-1);
  Tensor<S> y(x.shape());
  auto ym = y.matrix(n);
  const auto xm = x.matrix(n);
  for (Index r = 0; r < ym.rows(); ++r) {
    ym.row(r) = (xm.row(r).array() - xm.row(r).maxCoeff()).exp();
    ym.row(r) /= ym.row(r).sum();
  }
  if (should_record<S>({&x})) {
    Tape<S>::active()->record({x}, y, [x, y, n]() mutable {
      const auto gy = grad_of(y, n);
      const auto ym = y.matrix(n);
      auto gx = x.grad_matrix(n);
      for (Index r = 0; r < ym.rows(); ++r) {
        const S dot = gy.row(r).dot(ym.row(r));
        gx.row(r).array() += ym.row(r).array() * (gy.row(r).array() - dot);
      }
    });
  }
  return y;
}

template <typename S>
Tensor<S> cross_entropy(const Tensor<S>& logits, std::span<const int> targets) {
  if (logits.rank() != 2 || logits.dim(0) != static_cast<Index>(targets.size())) {
    throw DimensionError("cross_entropy: logits " + to_string(logits.shape()) + " vs " +
                         std::to_string(targets.size()) + " targets");
  }
  const Index batch = logits.dim(0), classes = logits.dim(1);
  for (int t : targets) {
    if (t < 0 || t >= classes) {
      throw IndexError("cross_entropy: target " + std::to_string(t) + " outside [0, " + std::to_string(classes) + ")");
    }
  }
  require_finite("cross_entropy", logits);
  auto probs = std::make_shared<RowMatrix<S>>(batch, classes);
  const auto z = logits.matrix(classes);
  S total = 0;
  for (Index b = 0; b < batch; ++b) {
    const S mx = z.row(b).maxCoeff();
    probs->row(b) = (z.row(b).array() - mx).exp();
    const S denom = probs->row(b).sum();
    probs->row(b) /= denom;
    total += mx + std::log(denom) - z(b, targets[static_cast<std::size_t>(b)]);
  }
  Tensor<S> loss = Tensor<S>::scalar(total / static_cast<S>(batch));
  if (should_record<S>({&logits})) {
    std::vector<int> tgt(targets.begin(), targets.end());
    Tape<S>::active()->record({logits}, loss, [logits, loss, probs, tgt, batch, classes]() mutable {
      const S g = loss.grad()[0] / static_cast<S>(batch);
      auto gz = logits.grad_matrix(classes);
      for (Index b = 0; b < batch; ++b) {
        gz.row(b) += g * probs->row(b);
        gz(b, tgt[static_cast<std::size_t>(b)]) -= g;
      }
    });
  }
  return loss;
}

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
  Tensor<S> y(x.shape());
  auto yd = y.data();
  auto xd = x.data();
  for (std::size_t i = 0; i < xd.size(); ++i) yd[i] = xd[i] > S(0) ? xd[i] : S(0);
  if (should_record<S>({&x})) {
    Tape<S>::active()->record({x}, y, [x, y]() mutable {
      auto gx = x.grad();
      auto gy = y.grad();
      auto xd = x.data();
      for (std::size_t i = 0; i < gx.size(); ++i)
        if (xd[i] > S(0)) gx[i] += gy[i];
      x.mark_grad_touched();
    });
  }
  return y;
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  Tensor<S> y(x.shape());
  auto yd = y.data();
  auto xd = x.data();
  for (std::size_t i = 0; i < xd.size(); ++i) {
    const S v = xd[i];
    if (v >= S(0)) {
      yd[i] = S(1) / (S(1) + std::exp(-v));
    } else {
      const S e = std::exp(v);
      yd[i] = e / (S(1) + e);
    }
  }
  if (should_record<S>({&x})) {
    Tape<S>::active()->record({x}, y, [x, y]() mutable {
      auto gx = x.grad();
      auto gy = y.grad();
      auto yd = y.data();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * yd[i] * (S(1) - yd[i]);
      x.mark_grad_touched();
    });
  }
  return y;
}

template <typename S>
Tensor<S> dropout(const Tensor<S>& x, double p, bool training, Rng* rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout: rate must lie in [0, 1), got " + std::to_string(p));
  if (!training || p == 0.0) return x;
  if (rng == nullptr) throw UsageError("dropout: training mode needs a random generator");
  const S keep_scale = static_cast<S>(1.0 / (1.0 - p));
  auto mask = std::make_shared<std::vector<S>>(static_cast<std::size_t>(x.size()));
  for (auto& m : *mask) m = rng->uniform() < p ? S(0) : keep_scale;
  Tensor<S> y(x.shape());
  auto yd = y.data();
  auto xd = x.data();
  for (std::size_t i = 0; i < xd.size(); ++i) yd[i] = xd[i] * (*mask)[i];
  if (should_record<S>({&x})) {
    Tape<S>::active()->record({x}, y, [x, y, mask]() mutable {
      auto gx = x.grad();
      auto gy = y.grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * (*mask)[i];
      x.mark_grad_touched();
    });
  }
  return y;
}

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  require_same_shape("add", a, b);
  Tensor<S> y(a.shape());
  auto yd = y.data();
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < yd.size(); ++i) yd[i] = ad[i] + bd[i];
  if (should_record<S>({&a, &b})) {
    Tape<S>::active()->record({a, b}, y, [a, b, y]() mutable {
      if (wants_grad(a)) a.accumulate_grad(y.grad());
      if (wants_grad(b)) b.accumulate_grad(y.grad());
    });
  }
  return y;
}

template <typename S>
Tensor<S> scale(const Tensor<S>& x, S factor) {
  Tensor<S> y(x.shape());
  auto yd = y.data();
  auto xd = x.data();
  for (std::size_t i = 0; i < yd.size(); ++i) yd[i] = xd[i] * factor;
  if (should_record<S>({&x})) {
    Tape<S>::active()->record({x}, y, [x, y, factor]() mutable {
      auto gx = x.grad();
      auto gy = y.grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * factor;
      x.mark_grad_touched();
    });
  }
  return y;
}

template <typename S>
Tensor<S> add_rowwise(const Tensor<S>& x, const Tensor<S>& v) {
  const Index d = x.dim(-1);
  if (v.shape() != Shape{d}) {
    throw DimensionError("add_rowwise: vector " + to_string(v.shape()) + " vs input " + to_string(x.shape()));
  }
  Tensor<S> y(x.shape());
  y.matrix(d) = x.matrix(d).rowwise() + Eigen::Map<const RowVector<S>>(v.ptr(), d);
  if (should_record<S>({&x, &v})) {
    Tape<S>::active()->record({x, v}, y, [x, v, y, d]() mutable {
      if (wants_grad(x)) x.accumulate_grad(y.grad());
      if (wants_grad(v)) v.grad_matrix(d) += grad_of(y, d).colwise().sum();
    });
  }
  return y;
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  require_same_shape("mul", a, b);
  Tensor<S> y(a.shape());
  auto yd = y.data();
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < yd.size(); ++i) yd[i] = ad[i] * bd[i];
  if (should_record<S>({&a, &b})) {
    Tape<S>::active()->record({a, b}, y, [a, b, y]() mutable {
      auto gy = y.grad();
      if (wants_grad(a)) {
        auto ga = a.grad();
        auto bd = b.data();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i] * bd[i];
        a.mark_grad_touched();
      }
      if (wants_grad(b)) {
        auto gb = b.grad();
        auto ad = a.data();
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gy[i] * ad[i];
        b.mark_grad_touched();
      }
    });
  }
  return y;
}

template <typename S>
Tensor<S> sum(const Tensor<S>& x) {
  S total = 0;
  for (S v : x.data()) total += v;
  Tensor<S> y = Tensor<S>::scalar(total);
  if (should_record<S>({&x})) {
    Tape<S>::active()->record({x}, y, [x, y]() mutable {
      const S g = y.grad()[0];
      for (auto& v : x.grad()) v += g;
      x.mark_grad_touched();
    });
  }
  return y;
}

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw DimensionError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  Tensor<S> y(std::move(shape), std::vector<S>(x.data().begin(), x.data().end()));
  if (should_record<S>({&x})) {
    Tape<S>::active()->record({x}, y, [x, y]() mutable { x.accumulate_grad(y.grad()); });
  }
  return y;
}

template <typename S>
Tensor<S> global_avg_pool(const Tensor<S>& x) {
  if (x.rank() != 4) throw DimensionError("global_avg_pool: expected [B, C, H, W], got " + to_string(x.shape()));
  const Index batch = x.dim(0), channels = x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor<S> y({batch, channels});
  const auto xm = x.matrix(plane);
  for (Index r = 0; r < batch * channels; ++r) y[r] = xm.row(r).sum() / static_cast<S>(plane);
  if (should_record<S>({&x})) {
    Tape<S>::active()->record({x}, y, [x, y, plane]() mutable {
      auto gx = x.grad_matrix(plane);
      auto gy = y.grad();
      const S inv = S(1) / static_cast<S>(plane);
      for (Index r = 0; r < gx.rows(); ++r) gx.row(r).array() += gy[static_cast<std::size_t>(r)] * inv;
    });
  }
  return y;
}

template <typename S>
Tensor<S> channel_scale(const Tensor<S>& x, const Tensor<S>& s) {
  if (x.rank() != 4 || s.shape() != Shape{x.dim(0), x.dim(1)}) {
    throw DimensionError("channel_scale: input " + to_string(x.shape()) + " vs scales " + to_string(s.shape()));
  }
  const Index plane = x.dim(2) * x.dim(3);
  Tensor<S> y(x.shape());
  auto ym = y.matrix(plane);
  const auto xm = x.matrix(plane);
  for (Index r = 0; r < ym.rows(); ++r) ym.row(r) = xm.row(r) * s[r];
  if (should_record<S>({&x, &s})) {
    Tape<S>::active()->record({x, s}, y, [x, s, y, plane]() mutable {
      const auto gy = grad_of(y, plane);
      if (wants_grad(x)) {
        auto gx = x.grad_matrix(plane);
        for (Index r = 0; r < gx.rows(); ++r) gx.row(r) += gy.row(r) * s[r];
      }
      if (wants_grad(s)) {
        const auto xm = x.matrix(plane);
        auto gs = s.grad();
        for (Index r = 0; r < gy.rows(); ++r) gs[static_cast<std::size_t>(r)] += gy.row(r).dot(xm.row(r));
        s.mark_grad_touched();
      }
    });
  }
  return y;
}

#define SURFUSE_INSTANTIATE_OPS(S)                                                                       \
  template Tensor<S> linear(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);                       \
  template Tensor<S> conv2d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, Index, Index);         \
  template AttentionResult<S> multi_head_attention(const Tensor<S>&, const AttentionParams<S>&, Index);  \
  template Tensor<S> layer_norm(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, double);           \
  template Tensor<S> group_norm(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, double);           \
  template Tensor<S> softmax(const Tensor<S>&);                                                          \
  template Tensor<S> cross_entropy(const Tensor<S>&, std::span<const int>);                              \
  template Tensor<S> relu(const Tensor<S>&);                                                             \
  template Tensor<S> sigmoid(const Tensor<S>&);                                                          \
  template Tensor<S> dropout(const Tensor<S>&, double, bool, Rng*);                                      \
  template Tensor<S> add(const Tensor<S>&, const Tensor<S>&);                                            \
  template Tensor<S> scale(const Tensor<S>&, S);                                                         \
  template Tensor<S> add_rowwise(const Tensor<S>&, const Tensor<S>&);                                    \
  template Tensor<S> mul(const Tensor<S>&, const Tensor<S>&);                                            \
  template Tensor<S> sum(const Tensor<S>&);                                                              \
  template Tensor<S> reshape(const Tensor<S>&, Shape);                                                   \
  template Tensor<S> global_avg_pool(const Tensor<S>&);                                                  \
  template Tensor<S> channel_scale(const Tensor<S>&, const Tensor<S>&);

SURFUSE_INSTANTIATE_OPS(float)
SURFUSE_INSTANTIATE_OPS(double)

#undef SURFUSE_INSTANTIATE_OPS

}  // namespace surfuse
