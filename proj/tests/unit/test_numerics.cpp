#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "nirev/numerics.hpp"
#include "nirev/rng.hpp"
#include "oracles.hpp"

using namespace nirev;

namespace {

template <typename T>
void expect_matches_oracle(const FeatureTensor<T>& in, const Kernel<T>& k, int stride, double tol) {
  const auto got = conv2d(in, k, stride);
  const auto want = oracle::conv2d(in, k, stride);
  ASSERT_EQ(got.size(), want.size());
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(double(got[i]), want[i], tol) << "index " << i;
}

}  // namespace

TEST(Conv2d, DenseMatchesOracle) {
  std::mt19937_64 rng(1);
  for (int ks : {1, 3, 5}) {
    auto in = oracle::random_tensor<double>(3, 7, 9, rng);
    auto k = Kernel<double>::dense(4, 3, ks, ks);
    oracle::randomize(k, rng);
    expect_matches_oracle(in, k, 1, 1e-12);
  }
}

TEST(Conv2d, RectangularAndBiasFreeKernels) {
  std::mt19937_64 rng(2);
  auto in = oracle::random_tensor<double>(2, 6, 5, rng);
  auto k = Kernel<double>::dense(3, 2, 3, 1, false);
  oracle::randomize(k, rng);
  EXPECT_FALSE(k.has_bias());
  expect_matches_oracle(in, k, 1, 1e-12);
}

TEST(Conv2d, StrideTwoMatchesOracle) {
  std::mt19937_64 rng(3);
  for (auto [h, w] : {std::pair{8, 8}, std::pair{7, 5}}) {
    auto in = oracle::random_tensor<double>(2, h, w, rng);
    auto k = Kernel<double>::dense(3, 2, 3, 3);
    oracle::randomize(k, rng);
    const auto out = conv2d(in, k, 2);
    EXPECT_EQ(out.height(), (h + 1) / 2);
    EXPECT_EQ(out.width(), (w + 1) / 2);
    expect_matches_oracle(in, k, 2, 1e-12);
  }
}

TEST(Conv2d, DepthwiseMatchesOracle) {
  std::mt19937_64 rng(4);
  auto in = oracle::random_tensor<float>(5, 9, 9, rng);
  for (int ks : {3, 5, 7}) {
    auto k = Kernel<float>::depthwise(5, ks, ks);
    oracle::randomize(k, rng);
    expect_matches_oracle(in, k, 1, 1e-5);
  }
}

TEST(Conv2d, RejectsEvenKernelsAndChannelMismatch) {
  std::mt19937_64 rng(5);
  auto in = oracle::random_tensor<double>(2, 4, 4, rng);
  EXPECT_THROW(conv2d(in, Kernel<double>::dense(1, 2, 2, 2)), InvariantError);
  EXPECT_THROW(conv2d(in, Kernel<double>::dense(1, 3, 3, 3)), ShapeError);
}

TEST(ConvTranspose, EachPixelExpandsToBlock) {
  std::mt19937_64 rng(6);
  auto in = oracle::random_tensor<double>(2, 3, 4, rng);
  auto k = Kernel<double>::dense(3, 2, 2, 2);
  oracle::randomize(k, rng);
  const auto out = conv_transpose2x2(in, k);
  ASSERT_EQ(out.height(), 6);
  ASSERT_EQ(out.width(), 8);
  for (int o = 0; o < 3; ++o) {
    for (int y = 0; y < 6; ++y) {
      for (int x = 0; x < 8; ++x) {
        double want = k.bias()[o];
        for (int i = 0; i < 2; ++i) want += k.weight(o, i, y % 2, x % 2) * in(i, y / 2, x / 2);
        EXPECT_NEAR(out(o, y, x), want, 1e-12);
      }
    }
  }
}

// Directional derivative check of conv2d_backward: <dL/dθ, δ> against
// (L(θ+hδ) - L(θ-hδ)) / 2h with L = <R, conv2d(x, k)>.
TEST(Conv2dBackward, MatchesCentralDifferences) {
  for (int stride : {1, 2}) {
    for (bool depthwise : {false, true}) {
      std::mt19937_64 rng(100 + stride * 2 + depthwise);
      auto in = oracle::random_tensor<double>(3, 5, 6, rng);
      auto k = depthwise ? Kernel<double>::depthwise(3, 3, 3) : Kernel<double>::dense(2, 3, 3, 3);
      oracle::randomize(k, rng);
      const auto out = conv2d(in, k, stride);
      auto r = oracle::random_tensor<double>(out.channels(), out.height(), out.width(), rng);
      const auto g = conv2d_backward(in, k, r, stride);

      auto loss = [&](const FeatureTensor<double>& x, const Kernel<double>& kk) {
        const auto o = conv2d(x, kk, stride);
        double s = 0.0;
        for (std::size_t i = 0; i < o.size(); ++i) s += o[i] * r[i];
        return s;
      };
      const double h = 1e-6;
      for (std::size_t i = 0; i < in.size(); ++i) {
        auto p = in, m = in;
        p[i] += h;
        m[i] -= h;
        EXPECT_NEAR(g.input[i], (loss(p, k) - loss(m, k)) / (2 * h), 1e-7);
      }
      for (std::size_t i = 0; i < k.weights().size(); ++i) {
        auto p = k, m = k;
        p.weights()[i] += h;
        m.weights()[i] -= h;
        EXPECT_NEAR(g.kernel.weights()[i], (loss(in, p) - loss(in, m)) / (2 * h), 1e-7);
      }
      for (std::size_t i = 0; i < k.bias().size(); ++i) {
        auto p = k, m = k;
        p.bias()[i] += h;
        m.bias()[i] -= h;
        EXPECT_NEAR(g.kernel.bias()[i], (loss(in, p) - loss(in, m)) / (2 * h), 1e-7);
      }
    }
  }
}

TEST(Softmax, RowsSumToOneAndSurviveLargeInputs) {
  std::vector<double> m{1000.0, 1001.0, 1002.0, -5.0, 0.0, 5.0};
  const auto p = softmax_rows<double>(m, 2, 3);
  for (int r = 0; r < 2; ++r) EXPECT_NEAR(p[r * 3] + p[r * 3 + 1] + p[r * 3 + 2], 1.0, 1e-15);
  const double z = 1 + std::exp(1.0) + std::exp(2.0);
  EXPECT_NEAR(p[0], 1 / z, 1e-15);
  EXPECT_NEAR(p[2], std::exp(2.0) / z, 1e-15);
  for (double v : p) EXPECT_TRUE(std::isfinite(v));
}

TEST(Softmax, ScaleIsApplied) {
  std::vector<double> m{0.0, 2.0};
  const auto p = softmax_rows<double>(m, 1, 2, 0.5);
  EXPECT_NEAR(p[1], std::exp(1.0) / (1 + std::exp(1.0)), 1e-15);
}

TEST(RelativeError, FloorAppliesNearZero) {
  EXPECT_DOUBLE_EQ(relative_error(1.0, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(relative_error(2.0, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(relative_error(0.0, 1e-10), 1e-10 / kGradCheckEpsilon);
}

TEST(FiniteDiffCheck, AcceptsExactQuadraticGradient) {
  // L = sum a_i p_i^2 + p_0 p_1
  const std::vector<double> a{1.0, -2.0, 0.5, 3.0};
  DifferentiableProgram prog{
      [&](std::span<const double> p) {
        double s = p[0] * p[1];
        for (std::size_t i = 0; i < p.size(); ++i) s += a[i] * p[i] * p[i];
        return s;
      },
      [&](std::span<const double> p) {
        std::vector<double> g(p.size());
        for (std::size_t i = 0; i < p.size(); ++i) g[i] = 2 * a[i] * p[i];
        g[0] += p[1];
        g[1] += p[0];
        return g;
      }};
  const std::vector<double> p{0.3, -0.7, 1.1, 0.2};
  const auto rep = finite_diff_check(prog, p);
  EXPECT_EQ(rep.checked, 4u);
  EXPECT_TRUE(rep.passed());
  EXPECT_LT(rep.max_rel_error, 1e-8);
}

TEST(FiniteDiffCheck, DetectsOnePercentGradientBug) {
  DifferentiableProgram prog{
      [](std::span<const double> p) { return std::sin(p[0]) + p[1] * p[1]; },
      [](std::span<const double> p) { return std::vector<double>{std::cos(p[0]) * 1.01, 2 * p[1]}; }};
  const std::vector<double> p{0.4, 0.9};
  const auto rep = finite_diff_check(prog, p);
  EXPECT_FALSE(rep.passed());
  ASSERT_FALSE(rep.worst.empty());
  EXPECT_EQ(rep.worst.front().index, 0u);
  EXPECT_NEAR(rep.worst.front().rel_error, 0.01 / 1.01, 1e-6);
}

TEST(FiniteDiffCheck, ThrowsOnNonDeterministicLoss) {
  int calls = 0;
  DifferentiableProgram prog{[&](std::span<const double> p) { return p[0] + 1e-3 * (calls++); },
                             [](std::span<const double>) { return std::vector<double>{1.0}; }};
  const std::vector<double> p{0.0};
  EXPECT_THROW(finite_diff_check(prog, p), NonDeterministicProgram);
}

TEST(Seeds, DerivedSeedsAreDistinctAndStable) {
  EXPECT_EQ(derive_seed(42, 7), derive_seed(42, 7));
  EXPECT_NE(derive_seed(42, 7), derive_seed(42, 8));
  EXPECT_NE(derive_seed(42, 7), derive_seed(43, 7));
  // Published FNV-1a test vector.
  EXPECT_EQ(fnv1a64("a"), 0xAF63DC4C8601EC8Cull);
  // splitmix64 reference output for state 0 after one increment.
  EXPECT_EQ(splitmix64(0), 0xE220A8397B1DCDAFull);
}
