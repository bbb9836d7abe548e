#include <gtest/gtest.h>

#include <cmath>

#include "dgattn/io.hpp"
#include "dgattn/numerics.hpp"
#include "dgattn/parallel.hpp"
#include "dgattn/verify.hpp"
#include "oracles.hpp"

using namespace dgattn;

TEST(Tensor, RejectsZeroExtentAndBadLength) {
  EXPECT_THROW(Tensor({2, 0}), DimensionError);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>(3)), DimensionError);
}

TEST(Tensor, JsonRoundTripIsExact) {
  Rng rng(3);
  const Tensor t = rng.normal_tensor({3, 4, 2});
  EXPECT_TRUE(bitwise_equal(tensor_from_json(tensor_to_json(t)), t));
}

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) ASSERT_EQ(a.next_u64(), b.next_u64());
  EXPECT_TRUE(bitwise_equal(Rng(7).normal_tensor({5, 5}), Rng(7).normal_tensor({5, 5})));
}

TEST(Rng, Mt19937_64ReferenceValue) {
  // The standard fixes the 10000th output of the default-seeded engine.
  std::mt19937_64 ref;
  ref.discard(9999);
  EXPECT_EQ(ref(), 9981545732273789042ULL);
  Rng r(5489);
  for (int i = 0; i < 9999; ++i) r.next_u64();
  EXPECT_EQ(r.next_u64(), 9981545732273789042ULL);
}

TEST(Matmul, IdentityCases) {
  const Tensor a = Tensor::matrix({{1, 2}, {3, 4}});
  const Tensor eye = Tensor::matrix({{1, 0}, {0, 1}});
  EXPECT_TRUE(bitwise_equal(matmul(a, eye), a));
  EXPECT_TRUE(bitwise_equal(matmul(eye, a), a));
}

TEST(Matmul, MatchesTripleLoop) {
  Rng rng(1);
  const Tensor a = rng.normal_tensor({5, 7}), b = rng.normal_tensor({7, 3});
  EXPECT_LE(max_abs_diff(matmul(a, b), oracle::matmul(a, b)), 1e-12);
  EXPECT_LE(max_abs_diff(matmul_nt(a, transpose(b)), oracle::matmul(a, b)), 1e-12);
  EXPECT_LE(max_abs_diff(matmul_tn(transpose(a), b), oracle::matmul(a, b)), 1e-12);
}

TEST(Matmul, ShapeMismatchThrows) {
  EXPECT_THROW(matmul(Tensor({2, 3}), Tensor({2, 3})), DimensionError);
}

TEST(Matmul, BitIdenticalAcrossThreadCounts) {
  Rng rng(2);
  const Tensor a = rng.normal_tensor({67, 45}), b = rng.normal_tensor({45, 39});
  const int saved = parallel::max_threads();
  parallel::set_threads(1);
  const Tensor one = matmul(a, b);
  parallel::set_threads(4);
  const Tensor four = matmul(a, b);
  parallel::set_threads(saved);
  EXPECT_TRUE(bitwise_equal(one, four));
}

TEST(Softmax, UniformRow) {
  const Tensor s = softmax_rows(Tensor::matrix({{0, 0, 0}}), 1.0);
  for (int j = 0; j < 3; ++j) EXPECT_NEAR(s[j], 1.0 / 3.0, 1e-15);
}

TEST(Softmax, ShiftInvarianceLn2) {
  for (double c : {-50.0, 0.0, 3.0, 700.0})
    for (double sc : {0.5, 1.0, 7.0}) {
      const Tensor s = softmax_rows(Tensor::matrix({{c, c + sc * std::log(2.0)}}), sc);
      EXPECT_NEAR(s[0], 1.0 / 3.0, 1e-12);
      EXPECT_NEAR(s[1], 2.0 / 3.0, 1e-12);
    }
}

TEST(Softmax, MatchesDirectEvaluationAndSumsToOne) {
  Rng rng(4);
  const Tensor p = rng.normal_tensor({4, 6}, 3.0);
  const Tensor s = softmax_rows(p, std::sqrt(8.0));
  EXPECT_LE(max_abs_diff(s, oracle::softmax(p, std::sqrt(8.0))), 1e-12);
  for (std::size_t i = 0; i < 4; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < 6; ++j) {
      EXPECT_GT(s.at(i, j), 0.0);
      EXPECT_LE(s.at(i, j), 1.0);
      sum += s.at(i, j);
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
  Tensor shifted = p;
  for (std::size_t j = 0; j < 6; ++j) shifted.at(2, j) += 11.0;
  EXPECT_LE(max_abs_diff(softmax_rows(shifted, std::sqrt(8.0)), s), 1e-12);
}

TEST(Softmax, BackwardMatchesFiniteDifferences) {
  Rng rng(5);
  const Tensor p = rng.normal_tensor({3, 5}), w = rng.normal_tensor({3, 5});
  const double scale = 1.7;
  auto f = [&](const Tensor& x) {
    const Tensor s = softmax_rows(x, scale);
    double acc = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) acc += s[i] * w[i];
    return acc;
  };
  const Tensor g = softmax_rows_backward(softmax_rows(p, scale), w, scale);
  EXPECT_LE(max_relative_error(g, numeric_gradient(f, p, 1e-6)), 1e-7);
}

TEST(LayerNorm, ConstantRowGivesZeros) {
  const Tensor y = layer_norm(Tensor::matrix({{5, 5, 5, 5}}), Tensor({4}, 1.0), Tensor({4}), 1e-5);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(y[i], 0.0);
}

TEST(LayerNorm, UnitVarianceRowUnchanged) {
  const Tensor y = layer_norm(Tensor::matrix({{-1, 1}}), Tensor({2}, 1.0), Tensor({2}), 1e-15);
  EXPECT_NEAR(y[0], -1.0, 1e-12);
  EXPECT_NEAR(y[1], 1.0, 1e-12);
}

TEST(LayerNorm, MomentsBeforeAffine) {
  Rng rng(6);
  const Tensor x = rng.normal_tensor({8, 17}, 4.0);
  LayerNormCache cache;
  layer_norm(x, rng.normal_tensor({17}), rng.normal_tensor({17}), 1e-12, &cache);
  for (std::size_t i = 0; i < 8; ++i) {
    double m = 0.0, v = 0.0;
    for (std::size_t c = 0; c < 17; ++c) m += cache.normalized.at(i, c) / 17.0;
    for (std::size_t c = 0; c < 17; ++c) v += std::pow(cache.normalized.at(i, c) - m, 2) / 17.0;
    EXPECT_LT(std::abs(m), 1e-10);
    EXPECT_LT(std::abs(v - 1.0), 1e-6);
  }
}

TEST(LayerNorm, BackwardMatchesFiniteDifferences) {
  Rng rng(7);
  const Tensor x = rng.normal_tensor({4, 6}), g = rng.normal_tensor({6}), b = rng.normal_tensor({6});
  const Tensor w = rng.normal_tensor({4, 6});
  auto loss = [&](const Tensor& xx, const Tensor& gg, const Tensor& bb) {
    const Tensor y = layer_norm(xx, gg, bb, 1e-5);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * w[i];
    return s;
  };
  LayerNormCache cache;
  layer_norm(x, g, b, 1e-5, &cache);
  const LayerNormGrads gr = layer_norm_backward(cache, g, w);
  const double h = 1e-6;
  EXPECT_LE(max_relative_error(gr.dx, numeric_gradient([&](const Tensor& t) { return loss(t, g, b); }, x, h)), 1e-6);
  EXPECT_LE(max_relative_error(gr.dgamma, numeric_gradient([&](const Tensor& t) { return loss(x, t, b); }, g, h)), 1e-6);
  EXPECT_LE(max_relative_error(gr.dbeta, numeric_gradient([&](const Tensor& t) { return loss(x, g, t); }, b, h)), 1e-6);
}

TEST(L2Normalize, Examples) {
  const Tensor v = l2_normalize(Tensor::vector({3, 4}));
  EXPECT_NEAR(v[0], 0.6, 1e-15);
  EXPECT_NEAR(v[1], 0.8, 1e-15);
  const Tensor u = Tensor::vector({0, 1, 0});
  EXPECT_TRUE(bitwise_equal(l2_normalize(u), u));
  const Tensor z({3});
  EXPECT_TRUE(bitwise_equal(l2_normalize(z), z));
}

TEST(L2Normalize, Idempotent) {
  Rng rng(8);
  for (int n = 0; n < 50; ++n) {
    const Tensor once = l2_normalize(rng.normal_tensor({9}, 10.0));
    EXPECT_LE(max_abs_diff(l2_normalize(once), once), 1e-14);
  }
}

TEST(DepthwiseConv, ZeroWeightsAndDeltaKernel) {
  Rng rng(9);
  const Tensor x = rng.normal_tensor({4, 5, 3});
  const Tensor zero = depthwise_conv3x3(x, Tensor({3, 3, 3}), 1);
  for (std::size_t i = 0; i < zero.size(); ++i) EXPECT_EQ(zero[i], 0.0);
  Tensor delta({3, 3, 3});
  for (std::size_t c = 0; c < 3; ++c) delta.at(1, 1, c) = 1.0;
  EXPECT_TRUE(bitwise_equal(depthwise_conv3x3(x, delta, 1), x));
}

TEST(DepthwiseConv, MatchesDirectLoops) {
  Rng rng(10);
  const Tensor x = rng.normal_tensor({5, 5, 2}), w = rng.normal_tensor({3, 3, 2});
  for (std::size_t s : {1, 2}) {
    const Tensor y = depthwise_conv3x3(x, w, s);
    EXPECT_EQ(y.dim(0), conv_out_extent(5, s));
    EXPECT_LE(max_abs_diff(y, oracle::conv3x3(x, w, s)), 1e-12);
  }
}

TEST(DepthwiseConv, BackwardMatchesFiniteDifferences) {
  Rng rng(11);
  const Tensor x = rng.normal_tensor({4, 3, 2}), w = rng.normal_tensor({3, 3, 2});
  for (std::size_t s : {1, 2}) {
    const Tensor dy = rng.normal_tensor(depthwise_conv3x3(x, w, s).shape());
    auto loss = [&](const Tensor& xx, const Tensor& ww) {
      const Tensor y = depthwise_conv3x3(xx, ww, s);
      double acc = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) acc += y[i] * dy[i];
      return acc;
    };
    const auto g = depthwise_conv3x3_backward(x, w, s, dy);
    EXPECT_LE(max_relative_error(g.dx, numeric_gradient([&](const Tensor& t) { return loss(t, w); }, x, 1e-3)), 1e-9);
    EXPECT_LE(max_relative_error(g.dw, numeric_gradient([&](const Tensor& t) { return loss(x, t); }, w, 1e-3)), 1e-9);
  }
}

TEST(Conv3x3, MatchesSixLoopOracle) {
  Rng rng(12);
  const Tensor x = rng.normal_tensor({6, 5, 3}), w = rng.normal_tensor({3, 3, 3, 4});
  for (std::size_t s : {1, 2}) EXPECT_LE(max_abs_diff(conv3x3(x, w, s), oracle::conv3x3(x, w, s)), 1e-12);
}

TEST(Linear, BackwardMatchesFiniteDifferences) {
  Rng rng(13);
  const Tensor x = rng.normal_tensor({5, 3}), w = rng.normal_tensor({3, 4}), b = rng.normal_tensor({4});
  const Tensor dy = rng.normal_tensor({5, 4});
  auto loss = [&](const Tensor& xx, const Tensor& ww, const Tensor& bb) {
    const Tensor y = linear(xx, ww, bb);
    double acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) acc += y[i] * dy[i];
    return acc;
  };
  const LinearGrads g = linear_backward(x, w, dy);
  EXPECT_LE(max_relative_error(g.dx, numeric_gradient([&](const Tensor& t) { return loss(t, w, b); }, x, 1e-3)), 1e-9);
  EXPECT_LE(max_relative_error(g.dw, numeric_gradient([&](const Tensor& t) { return loss(x, t, b); }, w, 1e-3)), 1e-9);
  EXPECT_LE(max_relative_error(g.db, numeric_gradient([&](const Tensor& t) { return loss(x, w, t); }, b, 1e-3)), 1e-9);
}

TEST(Gelu, KnownValuesAndBackward) {
  const Tensor y = gelu(Tensor::vector({0.0, 1.0, -1.0}));
  EXPECT_EQ(y[0], 0.0);
  EXPECT_NEAR(y[1], 0.8413447460685429, 1e-15);
  EXPECT_NEAR(y[2], -0.15865525393145707, 1e-15);
  Rng rng(14);
  const Tensor x = rng.normal_tensor({10}), dy = rng.normal_tensor({10});
  auto loss = [&](const Tensor& t) {
    const Tensor g = gelu(t);
    double acc = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * dy[i];
    return acc;
  };
  EXPECT_LE(max_relative_error(gelu_backward(x, dy), numeric_gradient(loss, x, 1e-6)), 1e-7);
}
