#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "probekit/errors.hpp"
#include "probekit/gradcheck.hpp"
#include "probekit/ops.hpp"
#include "test_util.hpp"

namespace probekit {
namespace {

using test::random_tensor;

void expect_near(const Tensor& got, const Tensor& want, double tol) {
  ASSERT_EQ(got.shape(), want.shape());
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], tol) << "at " << i;
}

AttentionParamsView view_of(const std::vector<Tensor>& p) {
  return {p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7]};
}

TEST(Tensor, RejectsZeroDimensionAndLengthMismatch) {
  EXPECT_THROW(Tensor({2, 0}), ShapeError);
  EXPECT_THROW(Tensor(Shape{}), ShapeError);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  EXPECT_THROW(Tensor::matrix({{1, 2}, {3}}), ShapeError);
}

TEST(Tensor, ShapeProductEqualsDataLength) {
  const Tensor t({2, 3, 4}, 1.5);
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(t.reshaped({6, 4}).shape(), (Shape{6, 4}));
  EXPECT_THROW(t.reshaped({5, 5}), ShapeError);
}

TEST(Tensor, RequireFiniteRejectsNanAndInf) {
  Tensor t({3});
  EXPECT_NO_THROW(require_finite(t, "t"));
  t[1] = std::nan("");
  EXPECT_THROW(require_finite(t, "t"), NumericError);
  t[1] = INFINITY;
  EXPECT_THROW(require_finite(t, "t"), NumericError);
}

TEST(Rng, MatchesPublishedSplitMix64Sequence) {
  // Reference outputs of SplitMix64 seeded with 0.
  Rng rng(0);
  EXPECT_EQ(rng.next_u64(), 0xE220A8397B1DCDAFull);
  EXPECT_EQ(rng.next_u64(), 0x6E789E6AA1B965F4ull);
  EXPECT_EQ(rng.next_u64(), 0x06C45D188009454Full);
}

TEST(Rng, SameSeedSameDraws) {
  Rng a = Rng::derive(42, 3), b = Rng::derive(42, 3);
  for (int i = 0; i < 100; ++i) {
    EXPECT_EQ(a.uniform(), b.uniform());
    EXPECT_EQ(a.normal(), b.normal());
  }
  EXPECT_NE(Rng::derive(42, 3).next_u64(), Rng::derive(42, 4).next_u64());
}

TEST(Rng, DrawRanges) {
  Rng rng(7);
  double sum = 0.0, sq = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    ASSERT_LT(rng.below(7), 7u);
    const double z = rng.normal();
    sum += z;
    sq += z * z;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.03);
  EXPECT_NEAR(sq / n, 1.0, 0.05);
}

TEST(Matmul, IdentityAndProjector) {
  const Tensor m = Tensor::matrix({{1, 2}, {3, 4}});
  EXPECT_EQ(matmul(Tensor::matrix({{1, 0}, {0, 1}}), m), m);
  EXPECT_EQ(matmul(Tensor::matrix({{1, 0}, {0, 0}}), Tensor::matrix({{5, 6}, {7, 8}})),
            Tensor::matrix({{5, 6}, {0, 0}}));
}

TEST(Matmul, AgreesWithTripleLoop) {
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
    Tensor want({3, 2});
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 2; ++j)
        for (std::size_t k = 0; k < 4; ++k) want(i, j) += a(i, k) * b(k, j);
    expect_near(matmul(a, b), want, 1e-15);
  }
}

TEST(Matmul, InnerDimensionMismatchThrows) {
  EXPECT_THROW(matmul(Tensor({2, 3}), Tensor({2, 3})), ShapeError);
}

TEST(Softmax, Examples) {
  expect_near(softmax(Tensor::vector({0, 0, 0})), Tensor::vector({1.0 / 3, 1.0 / 3, 1.0 / 3}), 1e-15);
  expect_near(softmax(Tensor::vector({std::log(2.0), 0})), Tensor::vector({2.0 / 3, 1.0 / 3}), 1e-15);
  expect_near(softmax(Tensor::vector({1000, 1000})), Tensor::vector({0.5, 0.5}), 0.0);
  EXPECT_THROW(softmax(Tensor()), ShapeError);
}

TEST(Softmax, SumsToOneAndIsShiftInvariant) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor v = random_tensor({7}, rng, -20, 20);
    const Tensor y = softmax(v);
    double total = 0.0;
    for (double x : y.data()) {
      EXPECT_GT(x, 0.0);
      total += x;
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
    Tensor shifted = v;
    for (auto& x : shifted.data()) x += 3.7;
    expect_near(softmax(shifted), y, 1e-12);
  }
}

TEST(LayerNorm, Examples) {
  const Tensor ones = Tensor::vector({1, 1, 1}), zeros = Tensor::vector({0, 0, 0});
  expect_near(layernorm(Tensor::matrix({{1, 2, 3}}), ones, zeros),
              Tensor::matrix({{-1.22474, 0, 1.22474}}), 1e-4);
  expect_near(layernorm(Tensor::matrix({{5, 5, 5}}), ones, zeros), Tensor::matrix({{0, 0, 0}}), 0.0);
  const Tensor beta = Tensor::vector({0.5, -1, 2});
  expect_near(layernorm(Tensor::matrix({{3, -7, 0.25}, {1, 2, 9}}), zeros, beta),
              Tensor::matrix({{0.5, -1, 2}, {0.5, -1, 2}}), 0.0);
}

TEST(LayerNorm, ShapeMismatchThrows) {
  EXPECT_THROW(layernorm(Tensor({2, 3}), Tensor({2}), Tensor({3})), ShapeError);
}

TEST(Interpolate, Examples) {
  Rng rng(2);
  const Tensor x = random_tensor({5, 3}, rng);
  EXPECT_EQ(interpolate_time(x, 5), x);
  expect_near(interpolate_time(Tensor::matrix({{0}, {1}}), 3), Tensor::matrix({{0}, {0.5}, {1}}), 0.0);
  EXPECT_EQ(interpolate_time(Tensor::matrix({{5}}), 3), Tensor::matrix({{5}, {5}, {5}}));
  EXPECT_EQ(interpolate_time(Tensor::matrix({{1, 2}, {3, 4}}), 1), Tensor::matrix({{1, 2}}));
  EXPECT_THROW(interpolate_time(x, 0), ShapeError);
}

TEST(Interpolate, IsLinear) {
  Rng rng(3);
  for (auto [t_in, t_out] : {std::pair{4, 9}, {9, 4}, {1, 6}, {6, 1}, {7, 7}}) {
    const Tensor x = random_tensor({std::size_t(t_in), 3}, rng);
    const Tensor y = random_tensor({std::size_t(t_in), 3}, rng);
    const double a = 0.7, b = -1.3;
    expect_near(interpolate_time(a * x + b * y, t_out),
                a * interpolate_time(x, t_out) + b * interpolate_time(y, t_out), 1e-12);
  }
}

TEST(Interpolate, BackwardIsTranspose) {
  Rng rng(4);
  for (auto [t_in, t_out] : {std::pair{4, 9}, {9, 4}, {1, 6}, {6, 1}, {3, 16}, {16, 3}}) {
    const Tensor x = random_tensor({std::size_t(t_in), 5}, rng);
    const Tensor u = random_tensor({std::size_t(t_out), 5}, rng);
    EXPECT_NEAR(dot(interpolate_time(x, t_out), u), dot(x, interpolate_time_backward(u, t_in)), 1e-10);
  }
}

TEST(Dropout, IdentityCases) {
  Rng rng(9);
  const Tensor x = random_tensor({4, 6}, rng);
  const std::uint64_t before = rng.state();
  EXPECT_EQ(dropout(x, 0.0, rng, true).out, x);
  EXPECT_EQ(dropout(x, 0.0, rng, false).out, x);
  EXPECT_EQ(dropout(x, 0.7, rng, false).out, x);
  EXPECT_EQ(rng.state(), before);
  EXPECT_THROW(dropout(x, 1.0, rng, true), ConfigError);
  EXPECT_THROW(dropout(x, -0.1, rng, true), ConfigError);
}

TEST(Dropout, InvertedScalingPreservesExpectation) {
  Rng rng(10);
  const Tensor x = random_tensor({8}, rng, 0.5, 2.0);
  Tensor mean({8});
  const int n = 10000;
  for (int i = 0; i < n; ++i) mean += dropout(x, 0.5, rng, true).out;
  mean *= 1.0 / n;
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(mean[i], x[i], 0.02 * x[i]);
}

TEST(Dropout, MasksRepeatWithSeed) {
  Rng a(77), b(77);
  const Tensor x({50}, 1.0);
  const auto ra = dropout(x, 0.3, a, true), rb = dropout(x, 0.3, b, true);
  EXPECT_EQ(ra.mask, rb.mask);
  for (double m : ra.mask.data()) EXPECT_TRUE(m == 0.0 || m == 1.0 / 0.7);
}

TEST(SelfAttention, SingleStepReducesToValuePath) {
  Rng rng(12);
  std::vector<Tensor> p;
  for (int i = 0; i < 4; ++i) p.push_back(random_tensor({4, 4}, rng));
  for (int i = 0; i < 4; ++i) p.push_back(random_tensor({4}, rng));
  const Tensor x = random_tensor({1, 4}, rng);
  const auto r = self_attention_forward(x, view_of(p));
  EXPECT_EQ(r.attn, Tensor::matrix({{1}}));
  expect_near(r.out, affine(affine(x, p[2], p[6]), p[3], p[7]), 1e-14);
}

TEST(SelfAttention, ZeroValuesGiveOutputBias) {
  Rng rng(13);
  std::vector<Tensor> p;
  for (int i = 0; i < 4; ++i) p.push_back(random_tensor({3, 3}, rng));
  for (int i = 0; i < 4; ++i) p.push_back(random_tensor({3}, rng));
  p[2].fill(0.0);
  p[6].fill(0.0);
  const Tensor out = self_attention(random_tensor({5, 3}, rng), view_of(p));
  for (std::size_t t = 0; t < 5; ++t)
    for (std::size_t f = 0; f < 3; ++f) EXPECT_DOUBLE_EQ(out(t, f), p[7][f]);
}

TEST(SelfAttention, AttentionRowsSumToOne) {
  Rng rng(14);
  std::vector<Tensor> p;
  for (int i = 0; i < 4; ++i) p.push_back(random_tensor({4, 4}, rng));
  for (int i = 0; i < 4; ++i) p.push_back(random_tensor({4}, rng));
  const auto r = self_attention_forward(random_tensor({3, 4}, rng), view_of(p));
  for (std::size_t i = 0; i < 3; ++i) {
    const auto row = r.attn.row(i);
    EXPECT_NEAR(std::accumulate(row.begin(), row.end(), 0.0), 1.0, 1e-12);
  }
  EXPECT_THROW(self_attention(Tensor({3, 5}), view_of(p)), ShapeError);
}

TEST(Gradcheck, QuadraticIsExact) {
  const Objective f = [](std::span<const double> w) {
    return ValueAndGradient{w[0] * w[0], {2.0 * w[0]}};
  };
  const std::vector<double> point{3.0};
  EXPECT_LT(gradcheck(f, point).max_rel_error, 1e-9);
}

TEST(Gradcheck, FlagsWrongGradient) {
  const Objective f = [](std::span<const double> w) {
    return ValueAndGradient{w[0] * w[0] + w[1], {2.0 * w[0], 0.0}};
  };
  const std::vector<double> point{1.0, 2.0};
  const auto r = gradcheck(f, point);
  EXPECT_GT(r.max_rel_error, 0.5);
  EXPECT_EQ(r.worst_index, 1u);
  EXPECT_EQ(r.num_checked, 2u);
}

TEST(Gradcheck, NonFiniteEvaluationThrows) {
  const Objective f = [](std::span<const double> w) {
    return ValueAndGradient{std::log(w[0]), {1.0 / w[0]}};
  };
  const std::vector<double> point{0.0};
  EXPECT_THROW(gradcheck(f, point), NumericError);
}

TEST(Gradcheck, RelativeErrorDefinition) {
  EXPECT_DOUBLE_EQ(relative_error(0.5, 0.25), 0.25);
  EXPECT_DOUBLE_EQ(relative_error(10.0, 8.0), 0.2);
}

TEST(Gradcheck, LayerNormOfMatmul) {
  Rng rng(21);
  const Tensor x = random_tensor({2, 3}, rng), w = random_tensor({3, 4}, rng);
  const Tensor gamma = random_tensor({4}, rng), beta = random_tensor({4}, rng);
  const Tensor u = random_tensor({2, 4}, rng);
  const Objective f = [&](std::span<const double> flat) {
    const Tensor xx({2, 3}, std::vector<double>(flat.begin(), flat.end()));
    const Tensor y = matmul(xx, w);
    const auto ln = layernorm_forward(y, gamma, beta);
    const auto dy = layernorm_backward(ln, gamma, u).dx;
    const auto dx = matmul_backward(xx, w, dy).da;
    return ValueAndGradient{dot(ln.out, u), dx.storage()};
  };
  EXPECT_LT(gradcheck(f, x.storage()).max_rel_error, 1e-6);
}

}  // namespace
}  // namespace probekit
