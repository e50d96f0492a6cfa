#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "surfuse/gradcheck.hpp"
#include "surfuse/ops.hpp"
#include "test_util.hpp"

namespace surfuse {
namespace {

using test::random_tensor;

TEST(Linear, HandMatrixProduct) {
  Tensor<double> x({1, 2}, {1, 1});
  Tensor<double> w({2, 2}, {1, 2, 3, 4});
  Tensor<double> b({2}, {0, 0});
  const auto y = linear(x, w, b);
  EXPECT_EQ(y.shape(), (Shape{1, 2}));
  EXPECT_DOUBLE_EQ(y[0], 3.0);
  EXPECT_DOUBLE_EQ(y[1], 7.0);
}

TEST(Linear, RejectsMismatchedWeight) {
  Tensor<double> x({1, 3});
  Tensor<double> w({2, 2});
  EXPECT_THROW(linear(x, w, Tensor<double>()), DimensionError);
}

TEST(Linear, GradientMatchesFiniteDifferences) {
  Rng rng(11);
  std::vector<Tensor<double>> in{random_tensor({3, 4}, rng, -1, 1, true), random_tensor({5, 4}, rng, -1, 1, true),
                                 random_tensor({5}, rng, -1, 1, true)};
  const double err = check_gradients(in, [&] { return sum(linear(in[0], in[1], in[2])); });
  EXPECT_LT(err, 1e-4);
}

TEST(Conv2d, MatchesNestedLoopCrossCorrelation) {
  Rng rng(3);
  for (Index stride : {1, 2}) {
    for (Index pad : {0, 1}) {
      const auto x = random_tensor({2, 3, 5, 6}, rng);
      const auto k = random_tensor({4, 3, 3, 2}, rng);
      const auto b = random_tensor({4}, rng);
      const auto y = conv2d(x, k, b, stride, pad);
      const Index ho = (5 + 2 * pad - 3) / stride + 1, wo = (6 + 2 * pad - 2) / stride + 1;
      ASSERT_EQ(y.shape(), (Shape{2, 4, ho, wo}));
      for (Index n = 0; n < 2; ++n)
        for (Index o = 0; o < 4; ++o)
          for (Index i = 0; i < ho; ++i)
            for (Index j = 0; j < wo; ++j) {
              double acc = b[o];
              for (Index c = 0; c < 3; ++c)
                for (Index u = 0; u < 3; ++u)
                  for (Index v = 0; v < 2; ++v) {
                    const Index r = i * stride - pad + u, q = j * stride - pad + v;
                    if (r < 0 || r >= 5 || q < 0 || q >= 6) continue;
                    acc += x[((n * 3 + c) * 5 + r) * 6 + q] * k[((o * 3 + c) * 3 + u) * 2 + v];
                  }
              EXPECT_NEAR(y[((n * 4 + o) * ho + i) * wo + j], acc, 1e-12);
            }
    }
  }
}

TEST(Conv2d, SingleChannelFourByFourExact) {
  Rng rng(5);
  // Small integers keep every partial sum exact, whatever order the GEMM adds in.
  const auto integral = [&](Shape s) {
    auto t = random_tensor(std::move(s), rng, -8, 8);
    for (auto& v : t.data()) v = std::round(v);
    return t;
  };
  const auto x = integral({1, 1, 4, 4});
  const auto k = integral({1, 1, 2, 2});
  const auto y = conv2d(x, k, Tensor<double>(), 1, 0);
  for (Index i = 0; i < 3; ++i)
    for (Index j = 0; j < 3; ++j) {
      const double ref = x[i * 4 + j] * k[0] + x[i * 4 + j + 1] * k[1] + x[(i + 1) * 4 + j] * k[2] +
                         x[(i + 1) * 4 + j + 1] * k[3];
      EXPECT_EQ(y[i * 3 + j], ref);
    }
}

TEST(Conv2d, OutputExtent) {
  EXPECT_EQ(conv_output_extent(224, 3, 2, 1), 112);
  EXPECT_EQ(conv_output_extent(7, 3, 2, 1), 4);
  Rng rng(1);
  EXPECT_THROW(conv2d(random_tensor({1, 1, 2, 2}, rng), random_tensor({1, 1, 5, 5}, rng), Tensor<double>(), 1, 0),
               DimensionError);
}

// Independent per-head loop with Eigen.
Eigen::MatrixXd attention_oracle(const Eigen::MatrixXd& x, const AttentionParams<double>& p, Index heads) {
  const Index d = x.cols(), dh = d / heads, L = x.rows();
  auto mat = [](const Tensor<double>& t, Index r, Index c) {
    Eigen::MatrixXd m(r, c);
    for (Index i = 0; i < r; ++i)
      for (Index j = 0; j < c; ++j) m(i, j) = t[i * c + j];
    return m;
  };
  auto vec = [](const Tensor<double>& t, Index n) {
    Eigen::RowVectorXd v(n);
    for (Index i = 0; i < n; ++i) v(i) = t[i];
    return v;
  };
  const Eigen::MatrixXd q = (x * mat(p.w_q, d, d).transpose()).rowwise() + vec(p.b_q, d);
  const Eigen::MatrixXd k = (x * mat(p.w_k, d, d).transpose()).rowwise() + vec(p.b_k, d);
  const Eigen::MatrixXd v = (x * mat(p.w_v, d, d).transpose()).rowwise() + vec(p.b_v, d);
  Eigen::MatrixXd ctx(L, d);
  for (Index h = 0; h < heads; ++h) {
    Eigen::MatrixXd s = q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose() / std::sqrt(double(dh));
    for (Index i = 0; i < L; ++i) {
      const double m = s.row(i).maxCoeff();
      s.row(i) = (s.row(i).array() - m).exp();
      s.row(i) /= s.row(i).sum();
    }
    ctx.middleCols(h * dh, dh) = s * v.middleCols(h * dh, dh);
  }
  return (ctx * mat(p.w_o, d, d).transpose()).rowwise() + vec(p.b_o, d);
}

TEST(MultiHeadAttention, MatchesPerHeadOracle) {
  Rng rng(21);
  const Index B = 2, L = 3, d = 8, heads = 2;
  AttentionParams<double> p{random_tensor({d, d}, rng), random_tensor({d}, rng), random_tensor({d, d}, rng),
                            random_tensor({d}, rng),    random_tensor({d, d}, rng), random_tensor({d}, rng),
                            random_tensor({d, d}, rng), random_tensor({d}, rng)};
  const auto x = random_tensor({B, L, d}, rng);
  const auto r = multi_head_attention(x, p, heads);
  ASSERT_EQ(r.output.shape(), (Shape{B, L, d}));
  ASSERT_EQ(r.weights.shape(), (Shape{B, heads, L, L}));
  for (Index b = 0; b < B; ++b) {
    Eigen::MatrixXd xb(L, d);
    for (Index i = 0; i < L; ++i)
      for (Index j = 0; j < d; ++j) xb(i, j) = x[(b * L + i) * d + j];
    const Eigen::MatrixXd ref = attention_oracle(xb, p, heads);
    for (Index i = 0; i < L; ++i)
      for (Index j = 0; j < d; ++j) EXPECT_NEAR(r.output[(b * L + i) * d + j], ref(i, j), 1e-9);
  }
  for (Index row = 0; row < B * heads * L; ++row) {
    double s = 0;
    for (Index j = 0; j < L; ++j) s += r.weights[row * L + j];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(MultiHeadAttention, SingleTokenWeightsAreOne) {
  Rng rng(2);
  const Index d = 8;
  AttentionParams<double> p{random_tensor({d, d}, rng), random_tensor({d}, rng), random_tensor({d, d}, rng),
                            random_tensor({d}, rng),    random_tensor({d, d}, rng), random_tensor({d}, rng),
                            random_tensor({d, d}, rng), random_tensor({d}, rng)};
  const auto r = multi_head_attention(random_tensor({4, 1, d}, rng), p, 4);
  for (Index i = 0; i < r.weights.size(); ++i) EXPECT_DOUBLE_EQ(r.weights[i], 1.0);
}

TEST(MultiHeadAttention, RejectsIndivisibleWidth) {
  Rng rng(2);
  AttentionParams<double> p{random_tensor({6, 6}, rng), random_tensor({6}, rng), random_tensor({6, 6}, rng),
                            random_tensor({6}, rng),    random_tensor({6, 6}, rng), random_tensor({6}, rng),
                            random_tensor({6, 6}, rng), random_tensor({6}, rng)};
  EXPECT_THROW(multi_head_attention(random_tensor({1, 1, 6}, rng), p, 4), ConfigError);
}

TEST(LayerNorm, RowsAreStandardised) {
  Rng rng(8);
  const Index rows = 6, d = 64;
  const auto x = random_tensor({rows, d}, rng, -5, 5);
  const auto y = layer_norm(x, Tensor<double>::full({d}, 1.0), Tensor<double>::zeros({d}));
  for (Index r = 0; r < rows; ++r) {
    double m = 0, v = 0;
    for (Index j = 0; j < d; ++j) m += y[r * d + j];
    m /= d;
    for (Index j = 0; j < d; ++j) v += (y[r * d + j] - m) * (y[r * d + j] - m);
    v /= d;
    EXPECT_NEAR(m, 0.0, 1e-7);
    EXPECT_NEAR(v, 1.0, 1e-5);
  }
}

TEST(GroupNorm, SampleIsStandardised) {
  Rng rng(9);
  const auto x = random_tensor({2, 4, 5, 5}, rng, -3, 3);
  const auto y = group_norm(x, Tensor<double>::full({4}, 1.0), Tensor<double>::zeros({4}));
  for (Index n = 0; n < 2; ++n) {
    double m = 0, v = 0;
    for (Index i = 0; i < 100; ++i) m += y[n * 100 + i];
    m /= 100;
    for (Index i = 0; i < 100; ++i) v += (y[n * 100 + i] - m) * (y[n * 100 + i] - m);
    EXPECT_NEAR(m, 0.0, 1e-7);
    EXPECT_NEAR(v / 100, 1.0, 1e-4);
  }
}

TEST(Softmax, RowsSumToOneAndRejectNonFinite) {
  Rng rng(4);
  const auto p = softmax(random_tensor({5, 7}, rng, -30, 30));
  for (Index r = 0; r < 5; ++r) {
    double s = 0;
    for (Index j = 0; j < 7; ++j) s += p[r * 7 + j];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  Tensor<double> bad({1, 2}, {0.0, std::nan("")});
  EXPECT_THROW(softmax(bad), NumericError);
}

TEST(CrossEntropy, MatchesNaiveFormula) {
  Rng rng(12);
  const Index B = 9, C = 5;
  const auto z = random_tensor({B, C}, rng, -4, 4);
  std::vector<int> t(B);
  for (auto& v : t) v = static_cast<int>(rng.below(C));
  double ref = 0;
  for (Index b = 0; b < B; ++b) {
    double s = 0;
    for (Index c = 0; c < C; ++c) s += std::exp(z[b * C + c]);
    ref += std::log(s) - z[b * C + t[static_cast<std::size_t>(b)]];
  }
  EXPECT_NEAR(cross_entropy(z, t).item(), ref / B, 1e-9);
}

TEST(CrossEntropy, UniformLogitsGiveLogC) {
  std::vector<int> t{0, 3};
  EXPECT_NEAR(cross_entropy(Tensor<double>::zeros({2, 5}), t).item(), std::log(5.0), 1e-12);
  std::vector<int> bad{5};
  EXPECT_THROW(cross_entropy(Tensor<double>::zeros({1, 5}), bad), IndexError);
}

TEST(Dropout, MonteCarloMeanIsPreserved) {
  Rng rng(99);
  const double x0 = 1.7;
  const Tensor<double> x({1}, {x0});
  double acc = 0;
  const int trials = 100000;
  for (int i = 0; i < trials; ++i) acc += dropout(x, 0.5, true, &rng)[0];
  EXPECT_NEAR(acc / trials, x0, 0.02 * x0);
}

TEST(Dropout, EvalIsIdentityAndTrainingScalesSurvivors) {
  Rng rng(1);
  const auto x = random_tensor({100}, rng, 1, 2);
  const auto e = dropout(x, 0.3, false, nullptr);
  for (Index i = 0; i < 100; ++i) EXPECT_EQ(e[i], x[i]);
  const auto t = dropout(x, 0.3, true, &rng);
  for (Index i = 0; i < 100; ++i) EXPECT_TRUE(t[i] == 0.0 || std::abs(t[i] - x[i] / 0.7) < 1e-12);
  EXPECT_THROW(dropout(x, 0.3, true, nullptr), UsageError);
}

TEST(Backward, AccumulatesThroughSharedInputs) {
  Tape<double> tape;
  Tensor<double> a({2}, {1.5, -2.0}, true);
  const auto loss = sum(mul(a, a));
  backward(loss, tape);
  EXPECT_DOUBLE_EQ(a.grad()[0], 3.0);
  EXPECT_DOUBLE_EQ(a.grad()[1], -4.0);
}

TEST(Backward, NoTapeMeansNoRecording) {
  Tensor<double> a({2}, {1.0, 2.0}, true);
  const auto y = scale(a, 2.0);
  EXPECT_EQ(y.producer_tape(), nullptr);
}

}  // namespace
}  // namespace surfuse
