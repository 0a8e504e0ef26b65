#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "nirev/consistency.hpp"
#include "nirev/fusion.hpp"
#include "oracles.hpp"

using namespace nirev;

namespace {

using TensorD = FeatureTensor<double>;

TensorD tensor_from(const std::vector<double>& v, int c, int h, int w) {
  return TensorD(c, h, w, std::vector<double>(v.begin(), v.end()));
}

std::vector<double> tokens(const TensorD& t) {
  std::vector<double> out(t.size());
  const int n = t.height() * t.width();
  for (int c = 0; c < t.channels(); ++c) {
    for (int i = 0; i < n; ++i) out[std::size_t(i) * t.channels() + c] = t[std::size_t(c) * n + i];
  }
  return out;
}

double sigmoid_d(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

// ---- consistency --------------------------------------------------------------

TEST(Consistency, TruthTable) {
  const EdgeMap v(4, 1, {1, 1, 0, 0}), n(4, 1, {1, 0, 1, 0});
  const auto c = structural_consistency(v, n);
  EXPECT_EQ(c.at(0, 0), 1.0);
  EXPECT_EQ(c.at(1, 0), 0.0);
  EXPECT_EQ(c.at(2, 0), 0.0);
  EXPECT_EQ(c.at(3, 0), 0.5);
}

TEST(Consistency, SobelMatchesOracleAndFindsVerticalStep) {
  std::mt19937_64 rng(1);
  const Frame f = oracle::random_frame(9, 7, rng);
  const auto mag = sobel_magnitude(f);
  for (int y = 0; y < 7; ++y) {
    for (int x = 0; x < 9; ++x) EXPECT_NEAR(mag[std::size_t(y) * 9 + x], oracle::sobel_magnitude(f, x, y), 1e-12);
  }

  // Left half dark, right half bright; interior rows only see the step.
  std::vector<double> d(10 * 10);
  for (int y = 0; y < 10; ++y) {
    for (int x = 0; x < 10; ++x) d[y * 10 + x] = x >= 5 ? 0.8 : 0.2;
  }
  const auto e = sobel_edges(Frame(10, 10, d), 0.1);
  for (int y = 1; y < 9; ++y) {
    for (int x = 1; x < 9; ++x) EXPECT_EQ(e.at(x, y), (x == 4 || x == 5) ? 1 : 0) << x << "," << y;
  }
}

TEST(Consistency, OtsuSeparatesBimodalValues) {
  std::vector<double> v;
  for (int i = 0; i < 100; ++i) v.push_back(0.1 + 0.001 * (i % 10));
  for (int i = 0; i < 50; ++i) v.push_back(0.9 + 0.001 * (i % 10));
  const double t = otsu_threshold(v);
  EXPECT_GT(t, 0.11);
  EXPECT_LT(t, 0.9);
  EXPECT_EQ(otsu_threshold(std::vector<double>(5, 0.0)), 0.0);
}

TEST(ScLoss, ConstantDecoderGivesClosedForm) {
  const ConsistencyMap c(4, 3, std::vector<double>(12, 0.5));
  TensorD m(2, 3, 4);
  auto dec = Kernel<double>::dense(1, 2, 3, 3);
  dec.bias()[0] = 0.6;
  EXPECT_NEAR(sc_loss(c, m, dec), 0.01, 1e-15);
}

TEST(ScLoss, BackwardMatchesCentralDifferences) {
  std::mt19937_64 rng(2);
  std::vector<double> cv(5 * 4);
  for (auto& v : cv) v = double(rng() % 3) * 0.5;
  const ConsistencyMap c(5, 4, cv);
  auto m = oracle::random_tensor<double>(2, 4, 5, rng, 0.0, 1.0);
  auto dec = Kernel<double>::dense(1, 2, 3, 3);
  oracle::randomize(dec, rng);
  const auto g = sc_loss_backward(c, m, dec, 0.7);
  const double h = 1e-6;
  for (std::size_t i = 0; i < m.size(); ++i) {
    auto p = m, q = m;
    p[i] += h;
    q[i] -= h;
    EXPECT_NEAR(g.m_c[i], 0.7 * (sc_loss(c, p, dec) - sc_loss(c, q, dec)) / (2 * h), 1e-8);
  }
  for (std::size_t i = 0; i < dec.weights().size(); ++i) {
    auto p = dec, q = dec;
    p.weights()[i] += h;
    q.weights()[i] -= h;
    EXPECT_NEAR(g.decode.weights()[i], 0.7 * (sc_loss(c, m, p) - sc_loss(c, m, q)) / (2 * h), 1e-8);
  }
}

// ---- SCE ------------------------------------------------------------------------

TEST(Sce, ZeroParametersGiveHalfGate) {
  std::mt19937_64 rng(3);
  const auto f_b = oracle::random_tensor<double>(3, 5, 4, rng);
  const auto f_e = oracle::random_tensor<double>(3, 5, 4, rng);
  const auto r = sce_forward(f_b, f_e, SCEParams<double>::zeros(3));
  for (double v : r.m_c.data()) EXPECT_EQ(v, 0.5);
  auto half = [](TensorD t) {
    for (auto& v : t.data()) v *= 0.5;
    return t;
  };
  EXPECT_EQ(r.f_b_c, concat_channels(f_b, half(f_b)));
  EXPECT_EQ(r.f_e_c, concat_channels(f_e, half(f_e)));
}

TEST(Sce, RandomParametersMatchComposedOracle) {
  std::mt19937_64 rng(4);
  const int C = 2, H = 6, W = 5;
  const auto f_b = oracle::random_tensor<double>(C, H, W, rng);
  const auto f_e = oracle::random_tensor<double>(C, H, W, rng);
  const auto p = SCEParams<double>::random(C, 11);
  const auto r = sce_forward(f_b, f_e, p);

  const TensorD x = concat_channels(f_b, f_e);
  std::vector<double> branches;
  for (const auto* k : {&p.dw3, &p.dw5, &p.dw7}) {
    const auto o = oracle::conv2d(x, *k);
    branches.insert(branches.end(), o.begin(), o.end());
  }
  const auto z = oracle::conv2d(tensor_from(branches, 6 * C, H, W), p.aggregate);
  for (int c = 0; c < C; ++c) {
    for (int i = 0; i < H * W; ++i) {
      const double m = sigmoid_d(z[std::size_t(c) * H * W + i]);
      EXPECT_NEAR(r.m_c[std::size_t(c) * H * W + i], m, 1e-12);
      EXPECT_NEAR(r.f_b_c[std::size_t(C + c) * H * W + i], f_b[std::size_t(c) * H * W + i] * m, 1e-12);
      EXPECT_NEAR(r.f_e_c[std::size_t(C + c) * H * W + i], f_e[std::size_t(c) * H * W + i] * m, 1e-12);
      EXPECT_GT(r.m_c[std::size_t(c) * H * W + i], 0.0);
      EXPECT_LT(r.m_c[std::size_t(c) * H * W + i], 1.0);
    }
  }
  EXPECT_EQ(p.parameter_count(), std::size_t(2 * C * (9 + 25 + 49) + 3 * 2 * C + 6 * C * C + C + 9 * C + 1));
}

TEST(Sce, RejectsMismatchedInputs) {
  std::mt19937_64 rng(5);
  const auto a = oracle::random_tensor<double>(3, 4, 4, rng);
  const auto b = oracle::random_tensor<double>(3, 4, 5, rng);
  EXPECT_THROW(sce_forward(a, b, SCEParams<double>::zeros(3)), ShapeError);
  EXPECT_THROW(sce_forward(a, a, SCEParams<double>::zeros(2)), ShapeError);
}

// ---- multi-order gradients ----------------------------------------------------------

TEST(MultiOrder, MatchesStencilsWithZeroPadding) {
  std::mt19937_64 rng(6);
  const auto f = oracle::random_tensor<double>(2, 4, 5, rng);
  const auto g = multi_order_gradients(f);
  EXPECT_EQ(g.g0, f);
  auto at = [&](int c, int y, int x) { return (x < 0 || y < 0 || x >= 5 || y >= 4) ? 0.0 : f(c, y, x); };
  for (int c = 0; c < 2; ++c) {
    for (int y = 0; y < 4; ++y) {
      for (int x = 0; x < 5; ++x) {
        const double dx = (at(c, y, x + 1) - at(c, y, x - 1)) / 2, dy = (at(c, y + 1, x) - at(c, y - 1, x)) / 2;
        EXPECT_NEAR(g.g1(c, y, x), std::sqrt(dx * dx + dy * dy + 1e-12), 1e-12);
        const double lap =
            at(c, y, x + 1) + at(c, y, x - 1) + at(c, y + 1, x) + at(c, y - 1, x) - 4 * at(c, y, x);
        EXPECT_NEAR(g.g2(c, y, x), std::abs(lap), 1e-12);
      }
    }
  }
}

// ---- attention --------------------------------------------------------------------------

TEST(Attention, MatchesDenseOracle) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-1, 1);
  const int n = 7, m = 5, d = 3;
  std::vector<double> q(n * d), k(m * d), v(m * d);
  for (auto* vec : {&q, &k, &v}) {
    for (auto& x : *vec) x = u(rng);
  }
  std::vector<double> p;
  const auto want = oracle::attention(q, k, v, n, m, d, &p);
  const auto got = cross_attention<double>(q, k, v, n, m, d);
  const auto w = attention_weights<double>(q, k, n, m, d);
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-14);
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(w[i], p[i], 1e-14);
}

TEST(Attention, StructuralProperties) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-2, 2);
    const int n = 6, m = 9, d = 4;
    std::vector<double> q(n * d), k(m * d), v(m * d);
    for (auto* vec : {&q, &k, &v}) {
      for (auto& x : *vec) x = u(rng);
    }
    const auto w = attention_weights<double>(q, k, n, m, d);
    for (int i = 0; i < n; ++i) {
      EXPECT_NEAR(std::accumulate(w.begin() + i * m, w.begin() + (i + 1) * m, 0.0), 1.0, 1e-12);
    }

    std::vector<double> vc(m * d);
    for (int j = 0; j < m; ++j) std::copy(v.begin(), v.begin() + d, vc.begin() + j * d);
    const auto oc = cross_attention<double>(q, k, vc, n, m, d);
    for (int i = 0; i < n; ++i) {
      for (int c = 0; c < d; ++c) EXPECT_NEAR(oc[i * d + c], v[c], 1e-12);
    }

    std::vector<int> perm(m);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> kp(m * d), vp(m * d);
    for (int j = 0; j < m; ++j) {
      std::copy(k.begin() + perm[j] * d, k.begin() + (perm[j] + 1) * d, kp.begin() + j * d);
      std::copy(v.begin() + perm[j] * d, v.begin() + (perm[j] + 1) * d, vp.begin() + j * d);
    }
    const auto o = cross_attention<double>(q, k, v, n, m, d);
    const auto op = cross_attention<double>(q, kp, vp, n, m, d);
    for (std::size_t i = 0; i < o.size(); ++i) EXPECT_NEAR(o[i], op[i], 1e-12);

    const auto single = cross_attention<double>(q, std::span(k).first(d), std::span(v).first(d), n, 1, d);
    for (int i = 0; i < n; ++i) {
      for (int c = 0; c < d; ++c) EXPECT_EQ(single[i * d + c], v[c]);
    }
  }
}

TEST(Attention, TensorFormIsIndependentOfBlockSize) {
  std::mt19937_64 rng(8);
  const auto q = oracle::random_tensor<double>(4, 5, 6, rng);
  const auto k = oracle::random_tensor<double>(4, 5, 6, rng);
  const auto v = oracle::random_tensor<double>(4, 5, 6, rng);
  const auto full = cross_attention(q, k, v, 1000);
  for (int block : {1, 7, 30}) {
    const auto part = cross_attention(q, k, v, block);
    for (std::size_t i = 0; i < full.size(); ++i) EXPECT_NEAR(part[i], full[i], 1e-14);
  }
  // Token view agrees with the matrix form.
  const auto want = oracle::attention(tokens(q), tokens(k), tokens(v), 30, 30, 4);
  const auto got = tokens(full);
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
}

TEST(Attention, BackwardMatchesCentralDifferences) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-1, 1);
  const int n = 4, m = 5, d = 3;
  std::vector<double> q(n * d), k(m * d), v(m * d), r(n * d);
  for (auto* vec : {&q, &k, &v, &r}) {
    for (auto& x : *vec) x = u(rng);
  }
  auto loss = [&](const std::vector<double>& qq, const std::vector<double>& kk, const std::vector<double>& vv) {
    const auto o = oracle::attention(qq, kk, vv, n, m, d);
    return std::inner_product(o.begin(), o.end(), r.begin(), 0.0);
  };
  const auto g = cross_attention_backward<double>(q, k, v, r, n, m, d);
  const double h = 1e-6;
  auto check = [&](std::vector<double>& x, const std::vector<double>& grad) {
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double keep = x[i];
      x[i] = keep + h;
      const double lp = loss(q, k, v);
      x[i] = keep - h;
      const double lm = loss(q, k, v);
      x[i] = keep;
      EXPECT_NEAR(grad[i], (lp - lm) / (2 * h), 1e-8);
    }
  };
  check(q, g.q);
  check(k, g.k);
  check(v, g.v);
}

// ---- CMI ------------------------------------------------------------------------------

TEST(Cmi, ForwardMatchesComposedOracle) {
  std::mt19937_64 rng(10);
  const int C2 = 4, D = 3, H = 4, W = 3, N = H * W;
  const auto f_b_c = oracle::random_tensor<double>(C2, H, W, rng);
  const auto f_e_c = oracle::random_tensor<double>(C2, H, W, rng);
  auto p = CMIParams<double>::random(C2, D, 12);
  p.to_event.order_weight = {0.2, 0.5, 0.3};
  p.to_image.order_weight = {0.6, 0.1, 0.3};
  const auto r = cmi_forward(f_b_c, f_e_c, p);
  ASSERT_EQ(r.f_b_i.channels(), C2 + D);
  ASSERT_EQ(r.f_e_i.channels(), C2 + D);
  EXPECT_EQ(slice_channels(r.f_b_i, 0, C2), f_b_c);
  EXPECT_EQ(slice_channels(r.f_e_i, 0, C2), f_e_c);

  auto direction = [&](const TensorD& qsrc, const TensorD& kvsrc, const CMIDirection<double>& dir) {
    const auto g = multi_order_gradients(qsrc);
    const TensorD* orders[3] = {&g.g0, &g.g1, &g.g2};
    const auto kk = tokens(tensor_from(oracle::conv2d(kvsrc, dir.key), D, H, W));
    const auto vv = tokens(tensor_from(oracle::conv2d(kvsrc, dir.value), D, H, W));
    std::vector<double> fused(std::size_t(N) * D, 0.0);
    for (int j = 0; j < 3; ++j) {
      const auto qq = tokens(tensor_from(oracle::conv2d(*orders[j], dir.query[j]), D, H, W));
      const auto a = oracle::attention(qq, kk, vv, N, N, D);
      for (std::size_t i = 0; i < fused.size(); ++i) fused[i] += dir.order_weight[j] * a[i];
    }
    return fused;
  };
  const auto want_e = direction(f_b_c, f_e_c, p.to_event);
  const auto want_b = direction(f_e_c, f_b_c, p.to_image);
  const auto got_e = tokens(slice_channels(r.f_e_i, C2, D));
  const auto got_b = tokens(slice_channels(r.f_b_i, C2, D));
  for (std::size_t i = 0; i < want_e.size(); ++i) {
    EXPECT_NEAR(got_e[i], want_e[i], 1e-12);
    EXPECT_NEAR(got_b[i], want_b[i], 1e-12);
  }
}

TEST(Cmi, ParameterCountClosedForm) {
  for (auto [c, d] : {std::pair{6, 4}, std::pair{256, 128}}) {
    const auto p = CMIParams<float>::zeros(c, d);
    EXPECT_EQ(p.parameter_count(), std::size_t(2 * (5 * c * d + 4 * d + 3)));
    std::size_t visited = 0;
    auto copy = p;
    copy.visit([&](const std::string&, std::span<float> v) { visited += v.size(); });
    EXPECT_EQ(visited, p.parameter_count());
  }
}

// ---- joint gradients -------------------------------------------------------------------

TEST(FusionGradients, SeededInstancesPass) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto rep = check_fusion_gradients(seed);
    EXPECT_TRUE(rep.passed()) << "seed " << seed << " max rel " << rep.max_rel_error;
    EXPECT_GT(rep.checked, 500u);
  }
}

TEST(FusionGradients, AggregateBiasGradientHasClosedFormAtZero) {
  // All-zero parameters: m = 1/2, the value projections vanish, and
  // L = sum(f_b_i) + sum(f_e_i) only sees m through the gated copies, so
  // dL/d bias[c] = sigmoid'(0) * sum over pixels of (f_b + f_e)[c].
  std::mt19937_64 rng(13);
  const int C = 3, H = 5, W = 4, D = 2;
  const auto f_b = oracle::random_tensor<double>(C, H, W, rng);
  const auto f_e = oracle::random_tensor<double>(C, H, W, rng);
  const auto sce = SCEParams<double>::zeros(C);
  const auto cmi = CMIParams<double>::zeros(2 * C, D);
  FusionUpstream<double> up;
  up.f_b_i = TensorD(2 * C + D, H, W);
  up.f_e_i = TensorD(2 * C + D, H, W);
  for (auto& v : up.f_b_i.data()) v = 1.0;
  for (auto& v : up.f_e_i.data()) v = 1.0;
  const auto g = fusion_backward(f_b, f_e, sce, cmi, up);
  for (int c = 0; c < C; ++c) {
    double s = 0.0;
    for (int i = 0; i < H * W; ++i) s += f_b[std::size_t(c) * H * W + i] + f_e[std::size_t(c) * H * W + i];
    EXPECT_NEAR(g.sce.aggregate.bias()[c], 0.25 * s, 1e-12);
  }
  // f_b reaches the output directly and through the half gate.
  for (double v : g.f_b.data()) EXPECT_NEAR(v, 1.5, 1e-12);
}

TEST(FusionGradients, DeadPathsReceiveExactlyZero) {
  std::mt19937_64 rng(14);
  const int C = 2, H = 4, W = 4, D = 3;
  const auto f_b = oracle::random_tensor<double>(C, H, W, rng);
  const auto f_e = oracle::random_tensor<double>(C, H, W, rng);
  const auto sce = SCEParams<double>::random(C, 1);
  auto cmi = CMIParams<double>::random(2 * C, D, 2);
  cmi.to_event.order_weight[2] = 0.0;
  for (auto& v : cmi.to_image.value.weights()) v = 0.0;
  for (auto& v : cmi.to_image.value.bias()) v = 0.0;
  FusionUpstream<double> up;
  up.f_b_i = oracle::random_tensor<double>(2 * C + D, H, W, rng);
  up.f_e_i = oracle::random_tensor<double>(2 * C + D, H, W, rng);
  const auto g = fusion_backward(f_b, f_e, sce, cmi, up);
  for (double v : g.cmi.to_event.query[2].weights()) EXPECT_EQ(v, 0.0);
  for (double v : g.cmi.to_event.query[2].bias()) EXPECT_EQ(v, 0.0);
  for (double v : g.cmi.to_image.order_weight) EXPECT_EQ(v, 0.0);
  for (double v : g.cmi.to_image.key.weights()) EXPECT_EQ(v, 0.0);
  // The live paths of the same direction still learn.
  double live = 0.0;
  for (double v : g.cmi.to_event.query[0].weights()) live += std::abs(v);
  EXPECT_GT(live, 0.0);
}
