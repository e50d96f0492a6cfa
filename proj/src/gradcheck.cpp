#include "surfuse/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "surfuse/model.hpp"
#include "surfuse/training.hpp"

namespace surfuse {

using T = Tensor<double>;

double gradient_error(std::span<const double> analytic, std::span<const double> numeric, double floor) {
  double diff = 0, scale_a = 0, scale_n = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
    scale_a = std::max(scale_a, std::abs(analytic[i]));
    scale_n = std::max(scale_n, std::abs(numeric[i]));
  }
  return diff / std::max({scale_a, scale_n, floor});
}

double check_gradients(std::span<const T> inputs, const std::function<T()>& loss, double h, Index* n_checked) {
  for (const auto& t : inputs) {
    if (!t.requires_grad()) throw UsageError("gradcheck inputs must require grad");
    t.zero_grad();
  }
  {
    Tape<double> tape;
    const T l = loss();
    backward(l, tape);
  }
  std::vector<std::vector<double>> analytic, numeric;
  Index checked = 0;
  double largest = 0;
  for (auto t : inputs) {
    analytic.emplace_back(t.grad().begin(), t.grad().end());
    for (double g : analytic.back()) largest = std::max(largest, std::abs(g));
    numeric.emplace_back(analytic.back().size());
    for (Index i = 0; i < t.size(); ++i) {
      const double saved = t[i];
      t[i] = saved + h;
      const double up = loss().item();
      t[i] = saved - h;
      const double down = loss().item();
      t[i] = saved;
      numeric.back()[static_cast<std::size_t>(i)] = (up - down) / (2.0 * h);
    }
    checked += t.size();
  }
  const double floor = std::max(1e-8, 1e-6 * largest);
  double worst = 0;
  for (std::size_t k = 0; k < analytic.size(); ++k)
    worst = std::max(worst, gradient_error(analytic[k], numeric[k], floor));
  if (n_checked) *n_checked += checked;
  return worst;
}

namespace {

T random_tensor(Shape shape, Rng& rng, double sd = 1.0) {
  T t(std::move(shape));
  for (double& v : t.data()) v = rng.normal(0.0, sd);
  t.set_requires_grad(true);
  return t;
}

// Reduces any output to a scalar with fixed random weights, so every output entry
// contributes a distinct upstream gradient.
T weighted_sum(const T& y, const T& w) { return sum(mul(y, w)); }

struct Case {
  std::string name;
  double tolerance;
  std::function<double(Rng&, Index*, double)> run;
};

template <typename Build>
Case unary_case(std::string name, Shape in_shape, Build build) {
  return {std::move(name), 1e-4, [in_shape, build](Rng& rng, Index* n, double h) {
            T x = random_tensor(in_shape, rng);
            const T probe = build(x);
            T w = random_tensor(probe.shape(), rng);
            w.set_requires_grad(false);
            const std::vector<T> inputs{x};
            return check_gradients(inputs, [&] { return weighted_sum(build(x), w); }, h, n);
          }};
}

std::vector<Case> primitive_cases() {
  std::vector<Case> cases;
  cases.push_back({"linear", 1e-4, [](Rng& rng, Index* n, double h) {
                     T x = random_tensor({3, 5}, rng), W = random_tensor({4, 5}, rng), b = random_tensor({4}, rng);
                     T w = random_tensor({3, 4}, rng);
                     w.set_requires_grad(false);
                     const std::vector<T> in{x, W, b};
                     return check_gradients(in, [&] { return weighted_sum(linear(x, W, b), w); }, h, n);
                   }});
  cases.push_back({"conv2d", 1e-4, [](Rng& rng, Index* n, double h) {
                     T x = random_tensor({2, 2, 5, 5}, rng), k = random_tensor({3, 2, 3, 3}, rng);
                     T b = random_tensor({3}, rng);
                     T w = random_tensor({2, 3, 3, 3}, rng);
                     w.set_requires_grad(false);
                     const std::vector<T> in{x, k, b};
                     return check_gradients(in, [&] { return weighted_sum(conv2d(x, k, b, 2, 1), w); }, h, n);
                   }});
  cases.push_back({"conv2d_pointwise", 1e-4, [](Rng& rng, Index* n, double h) {
                     T x = random_tensor({2, 3, 3, 3}, rng), k = random_tensor({4, 3, 1, 1}, rng);
                     T b = random_tensor({4}, rng);
                     T w = random_tensor({2, 4, 3, 3}, rng);
                     w.set_requires_grad(false);
                     const std::vector<T> in{x, k, b};
                     return check_gradients(in, [&] { return weighted_sum(conv2d(x, k, b, 1, 0), w); }, h, n);
                   }});
  cases.push_back({"multi_head_attention", 1e-4, [](Rng& rng, Index* n, double h) {
                     const Index d = 8;
                     T x = random_tensor({2, 3, d}, rng);
                     AttentionParams<double> p{random_tensor({d, d}, rng, 0.4), random_tensor({d}, rng, 0.4),
                                               random_tensor({d, d}, rng, 0.4), random_tensor({d}, rng, 0.4),
                                               random_tensor({d, d}, rng, 0.4), random_tensor({d}, rng, 0.4),
                                               random_tensor({d, d}, rng, 0.4), random_tensor({d}, rng, 0.4)};
                     T w = random_tensor({2, 3, d}, rng);
                     w.set_requires_grad(false);
                     const std::vector<T> in{x, p.w_q, p.b_q, p.w_k, p.b_k, p.w_v, p.b_v, p.w_o, p.b_o};
                     return check_gradients(
                         in, [&] { return weighted_sum(multi_head_attention(x, p, 2).output, w); }, h, n);
                   }});
  cases.push_back({"layer_norm", 1e-4, [](Rng& rng, Index* n, double h) {
                     T x = random_tensor({3, 6}, rng), g = random_tensor({6}, rng), b = random_tensor({6}, rng);
                     T w = random_tensor({3, 6}, rng);
                     w.set_requires_grad(false);
                     const std::vector<T> in{x, g, b};
                     return check_gradients(in, [&] { return weighted_sum(layer_norm(x, g, b), w); }, h, n);
                   }});
  cases.push_back({"group_norm", 1e-4, [](Rng& rng, Index* n, double h) {
                     T x = random_tensor({2, 3, 3, 3}, rng), g = random_tensor({3}, rng), b = random_tensor({3}, rng);
                     T w = random_tensor({2, 3, 3, 3}, rng);
                     w.set_requires_grad(false);
                     const std::vector<T> in{x, g, b};
                     return check_gradients(in, [&] { return weighted_sum(group_norm(x, g, b), w); }, h, n);
                   }});
  cases.push_back(unary_case("softmax", {3, 5}, [](const T& x) { return softmax(x); }));
  cases.push_back({"cross_entropy", 1e-4, [](Rng& rng, Index* n, double h) {
                     T z = random_tensor({4, 5}, rng);
                     std::vector<int> targets;
                     for (int i = 0; i < 4; ++i) targets.push_back(static_cast<int>(rng.below(5)));
                     const std::vector<T> in{z};
                     return check_gradients(in, [&] { return cross_entropy(z, std::span<const int>(targets)); }, h, n);
                   }});
  cases.push_back(unary_case("relu", {4, 6}, [](const T& x) { return relu(x); }));
  cases.push_back(unary_case("sigmoid", {4, 6}, [](const T& x) { return sigmoid(x); }));
  cases.push_back({"dropout", 1e-4, [](Rng& rng, Index* n, double h) {
                     T x = random_tensor({4, 6}, rng);
                     T w = random_tensor({4, 6}, rng);
                     w.set_requires_grad(false);
                     const std::uint64_t mask_seed = rng.next_u64();
                     const std::vector<T> in{x};
                     return check_gradients(
                         in,
                         [&] {
                           Rng mask(mask_seed);
                           return weighted_sum(dropout(x, 0.3, true, &mask), w);
                         },
                         h, n);
                   }});
  cases.push_back({"add", 1e-4, [](Rng& rng, Index* n, double h) {
                     T a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng), w = random_tensor({3, 4}, rng);
                     w.set_requires_grad(false);
                     const std::vector<T> in{a, b};
                     return check_gradients(in, [&] { return weighted_sum(add(a, b), w); }, h, n);
                   }});
  cases.push_back(unary_case("scale", {3, 4}, [](const T& x) { return scale(x, 1.7); }));
  cases.push_back({"add_rowwise", 1e-4, [](Rng& rng, Index* n, double h) {
                     T x = random_tensor({2, 3, 4}, rng), v = random_tensor({4}, rng);
                     T w = random_tensor({2, 3, 4}, rng);
                     w.set_requires_grad(false);
                     const std::vector<T> in{x, v};
                     return check_gradients(in, [&] { return weighted_sum(add_rowwise(x, v), w); }, h, n);
                   }});
  cases.push_back({"mul", 1e-4, [](Rng& rng, Index* n, double h) {
                     T a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng), w = random_tensor({3, 4}, rng);
                     w.set_requires_grad(false);
                     const std::vector<T> in{a, b};
                     return check_gradients(in, [&] { return weighted_sum(mul(a, b), w); }, h, n);
                   }});
  cases.push_back(unary_case("sum", {3, 4}, [](const T& x) { return sum(x); }));
  cases.push_back(unary_case("reshape", {2, 6}, [](const T& x) { return reshape(x, {3, 4}); }));
  cases.push_back(unary_case("global_avg_pool", {2, 3, 3, 4}, [](const T& x) { return global_avg_pool(x); }));
  cases.push_back({"channel_scale", 1e-4, [](Rng& rng, Index* n, double h) {
                     T x = random_tensor({2, 3, 2, 2}, rng), s = random_tensor({2, 3}, rng);
                     T w = random_tensor({2, 3, 2, 2}, rng);
                     w.set_requires_grad(false);
                     const std::vector<T> in{x, s};
                     return check_gradients(in, [&] { return weighted_sum(channel_scale(x, s), w); }, h, n);
                   }});
  cases.push_back({"fuse", 1e-4, [](Rng& rng, Index* n, double h) {
                     T zv = random_tensor({3, 4}, rng), zt = random_tensor({3, 4}, rng), fw = random_tensor({2}, rng);
                     T w = random_tensor({3, 4}, rng);
                     w.set_requires_grad(false);
                     const std::vector<T> in{zv, zt, fw};
                     return check_gradients(in, [&] { return weighted_sum(fuse(zv, zt, fw), w); }, h, n);
                   }});
  return cases;
}

Case composed_case() {
  return {"surformer_composite_loss", 1e-3, [](Rng& rng, Index* n, double h) {
            VisionBranchConfig v;
            v.input_size = 8;
            v.backbone_channels = {4, 4};
            v.feature_dim = 6;
            v.head_hidden = 5;
            v.n_unfrozen_tensors = 16;
            v.n_classes = 3;
            TactileBranchConfig t;
            t.d_model = 8;
            t.heads = 2;
            t.d_ffn = 16;
            t.head_hidden = 4;
            t.n_classes = 3;
            SurformerModel<double> model(v, t, rng.next_u64());
            model.set_mode(Mode::Training);
            // Random fusion logits so the gradient is generic rather than symmetric.
            model.parameter("fusion.logits").tensor[0] = rng.normal();
            model.parameter("fusion.logits").tensor[1] = rng.normal();
            T images = random_tensor({2, 3, 8, 8}, rng);
            T features = random_tensor({2, 7}, rng);
            images.set_requires_grad(false);
            features.set_requires_grad(false);
            const std::vector<int> targets{static_cast<int>(rng.below(3)), static_cast<int>(rng.below(3))};
            const std::uint64_t mask_seed = rng.next_u64();
            std::vector<T> in;
            for (const auto& p : model.parameters()) in.push_back(p.tensor);
            return check_gradients(
                in,
                [&] {
                  Rng mask(mask_seed);
                  const auto out = model.forward(images, features, &mask);
                  return composite_loss(out.fused_logits, out.vision_logits, out.tactile_logits,
                                        std::span<const int>(targets), 0.3)
                      .total;
                },
                h, n);
          }};
}

}  // namespace

std::vector<GradcheckResult> run_gradcheck_suite(Index trials, std::uint64_t seed, double h) {
  if (trials < 1) throw ConfigError("gradcheck needs at least one trial");
  auto cases = primitive_cases();
  cases.push_back(composed_case());
  std::vector<GradcheckResult> results;
  const Rng root(seed);
  for (std::size_t c = 0; c < cases.size(); ++c) {
    GradcheckResult r{cases[c].name, 0.0, cases[c].tolerance, trials, 0};
    for (Index trial = 0; trial < trials; ++trial) {
      Rng rng = root.split(c * 1000 + static_cast<std::uint64_t>(trial));
      r.max_rel_error = std::max(r.max_rel_error, cases[c].run(rng, &r.n_checked, h));
    }
    results.push_back(r);
  }
  return results;
}

}  // namespace surfuse
