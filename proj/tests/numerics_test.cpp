#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "gfusion/numerics.hpp"
#include "gfusion/rng.hpp"

namespace gfusion {
namespace {

TEST(MeanPool, AveragesColumns) {
  SequenceEmbedding s{{{1, 3}, {3, 5}}};
  EXPECT_EQ(mean_pool(s), (Vector{2, 4}));
}

TEST(MeanPool, SingleFrameIsIdentity) {
  SequenceEmbedding s{{{0.25, -7.5, 3.0}}};
  EXPECT_EQ(mean_pool(s), s.frames[0]);
}

TEST(MeanPool, EmptySequenceThrows) {
  SequenceEmbedding s;
  try {
    mean_pool(s);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_STREQ(e.what(), "empty sequence");
  }
}

TEST(MeanPool, RaggedFramesThrow) {
  SequenceEmbedding s{{{1, 2}, {1}}};
  EXPECT_THROW(mean_pool(s), NumericError);
}

TEST(MeanPool, MatchesNaiveAccumulation) {
  Rng rng(11);
  SequenceEmbedding s;
  for (int f = 0; f < 100; ++f) {
    Vector frame(768);
    for (double& x : frame) x = rng.gaussian();
    s.frames.push_back(frame);
  }
  const Vector pooled = mean_pool(s);
  for (std::size_t j = 0; j < 768; ++j) {
    double sum = 0.0;
    for (const auto& frame : s.frames) sum += frame[j];
    EXPECT_NEAR(pooled[j], sum / 100.0, 1e-9);
  }
}

TEST(MeanPool, PermutationInvariantUpToRounding) {
  Rng rng(12);
  SequenceEmbedding s;
  for (int f = 0; f < 17; ++f) s.frames.push_back({rng.gaussian(), rng.gaussian()});
  SequenceEmbedding r = s;
  std::reverse(r.frames.begin(), r.frames.end());
  const Vector a = mean_pool(s);
  const Vector b = mean_pool(r);
  for (std::size_t j = 0; j < a.size(); ++j) EXPECT_NEAR(a[j], b[j], 1e-14);
}

TEST(L2Normalize, ThreeFourFive) {
  const Vector v = l2_normalize(Vector{3, 4});
  EXPECT_NEAR(v[0], 0.6, 1e-15);
  EXPECT_NEAR(v[1], 0.8, 1e-15);
}

TEST(L2Normalize, ZeroVectorPassesThrough) {
  EXPECT_EQ(l2_normalize(Vector{0, 0, 0}), (Vector{0, 0, 0}));
}

TEST(L2Normalize, NormIsZeroOrOneProperty) {
  Rng rng(3);
  for (int trial = 0; trial < 500; ++trial) {
    Vector v(1 + rng.below(64));
    const double scale = std::pow(10.0, rng.uniform(-150, 150));
    for (double& x : v) x = rng.gaussian() * scale;
    const Vector u = l2_normalize(v);
    EXPECT_NEAR(norm2(u), 1.0, 1e-12);
    const Vector again = l2_normalize(u);
    for (std::size_t i = 0; i < u.size(); ++i) EXPECT_NEAR(again[i], u[i], 1e-12);
  }
}

TEST(Sigmoid, KnownValues) {
  EXPECT_EQ(sigmoid(0.0), 0.5);
  EXPECT_NEAR(sigmoid(50.0), 1.0, 1e-15);
  EXPECT_GT(sigmoid(-745.0), 0.0);
  EXPECT_FALSE(std::isnan(sigmoid(-1000.0)));
}

TEST(Sigmoid, SymmetryAndRange) {
  Rng rng(5);
  for (int i = 0; i < 1000; ++i) {
    const double x = rng.uniform(-30, 30);
    EXPECT_NEAR(sigmoid(x) + sigmoid(-x), 1.0, 1e-12);
    EXPECT_GT(sigmoid(x), 0.0);
    EXPECT_LT(sigmoid(x), 1.0);
  }
}

TEST(Softmax, SumsToOneAndSaturates) {
  const Vector p = softmax(Vector{-20, 20});
  EXPECT_NEAR(p[0], 0.0, 1e-8);
  EXPECT_NEAR(p[1], 1.0, 1e-8);
  EXPECT_NEAR(p[0] + p[1], 1.0, 1e-15);
}

TEST(FiniteDiff, Quadratic) {
  const auto g = finite_diff_grad([](std::span<const double> t) { return t[0] * t[0]; },
                                  Vector{3.0}, 1e-5);
  EXPECT_NEAR(g[0], 6.0, 1e-4);
}

TEST(FiniteDiff, Linear) {
  const Vector w{0.5, -2.0, 3.25, 1e-3};
  const auto g = finite_diff_grad(
      [&](std::span<const double> t) { return dot(w, t); }, Vector{1, 2, 3, 4}, 1e-5);
  for (std::size_t i = 0; i < w.size(); ++i) EXPECT_NEAR(g[i], w[i], 1e-9);
}

TEST(FiniteDiff, QuadraticPolynomialsAreNearlyExact) {
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const double a = rng.uniform(-3, 3), b = rng.uniform(-3, 3), c = rng.uniform(-3, 3);
    const double x0 = rng.uniform(-2, 2), y0 = rng.uniform(-2, 2);
    auto f = [&](std::span<const double> t) {
      return a * t[0] * t[0] + b * t[0] * t[1] + c * t[1] + 1.0;
    };
    const auto g = finite_diff_grad(f, Vector{x0, y0}, 1e-5);
    EXPECT_NEAR(g[0], 2 * a * x0 + b * y0, 1e-8);
    EXPECT_NEAR(g[1], b * x0 + c, 1e-8);
  }
}

TEST(FiniteDiff, NonFiniteEvaluationNamesCoordinate) {
  auto f = [](std::span<const double> t) { return t[1] > 0.5 ? std::log(-1.0) : 0.0; };
  try {
    finite_diff_grad(f, Vector{0.0, 0.5}, 1e-3);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("coordinate 1"), std::string::npos);
  }
}

TEST(Rng, BelowStaysInRangeAndIsSeeded) {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) {
    const auto x = a.below(7);
    EXPECT_LT(x, 7u);
    EXPECT_EQ(x, b.below(7));
  }
}

TEST(Rng, GaussianMoments) {
  Rng rng(1);
  double sum = 0, sq = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double g = rng.gaussian();
    sum += g;
    sq += g * g;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.01);
  EXPECT_NEAR(sq / n, 1.0, 0.02);
}

}  // namespace
}  // namespace gfusion
