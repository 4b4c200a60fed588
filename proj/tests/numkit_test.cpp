#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>
#include <set>

#include "fednar/numkit.hpp"

namespace fednar {
namespace {

TEST(LinComb, IdentityCase) {
  EXPECT_EQ(lin_comb(1.0, {1.0, 2.0}, 0.0, {9.0, 9.0}), (ParamVector{1.0, 2.0}));
}

TEST(LinComb, DecayAndGradientStep) {
  const auto out = lin_comb(0.99, {1.0, 1.0}, -0.1, {1.0, 0.0});
  EXPECT_NEAR(out[0], 0.89, 1e-15);
  EXPECT_NEAR(out[1], 0.99, 1e-15);
}

TEST(LinComb, Cancellation) {
  EXPECT_EQ(lin_comb(1.0, {3.0, 4.0}, -1.0, {3.0, 4.0}), (ParamVector{0.0, 0.0}));
}

TEST(LinComb, DimensionMismatchThrows) {
  EXPECT_THROW(lin_comb(1.0, {1.0, 2.0}, 1.0, {1.0}), DimensionError);
  EXPECT_THROW((ParamVector{1.0} + ParamVector{1.0, 2.0}), DimensionError);
  EXPECT_THROW(dot({1.0}, {1.0, 2.0}), DimensionError);
}

TEST(LinComb, NonFiniteResultThrows) {
  const double big = std::numeric_limits<double>::max();
  EXPECT_THROW(lin_comb(2.0, {big}, 0.0, {0.0}), NumericError);
}

TEST(ParamVectorTest, ZeroDimRejected) {
  EXPECT_THROW(ParamVector(std::size_t{0}), PreconditionError);
  EXPECT_THROW(ParamVector(std::vector<double>{}), PreconditionError);
}

TEST(Norm2, Examples) {
  EXPECT_DOUBLE_EQ(norm2({3.0, 4.0}), 5.0);
  EXPECT_DOUBLE_EQ(norm2({0.0, 0.0, 0.0}), 0.0);
  EXPECT_DOUBLE_EQ(norm2({1.0, 1.0, 1.0, 1.0}), 2.0);
}

TEST(Norm2, ZeroIffZeroVectorAndFiniteOutputs) {
  std::mt19937_64 eng(7);
  std::normal_distribution<double> normal(0.0, 10.0);
  std::uniform_int_distribution<std::size_t> dim(1, 50);
  std::bernoulli_distribution zero_out(0.2);
  for (int trial = 0; trial < 500; ++trial) {
    ParamVector u(dim(eng)), v(u.dim());
    bool all_zero = true;
    for (std::size_t i = 0; i < u.dim(); ++i) {
      u[i] = zero_out(eng) ? 0.0 : normal(eng);
      v[i] = normal(eng);
      all_zero = all_zero && u[i] == 0.0;
    }
    EXPECT_EQ(norm2(u) == 0.0, all_zero);
    const auto w = lin_comb(normal(eng), u, normal(eng), v);
    EXPECT_TRUE(all_finite(w.values()));
    EXPECT_TRUE(std::isfinite(norm2(w)));
  }
}

TEST(RngStreamTest, ReplayIsIdentical) {
  const RngStream a(42, {3, 7, 5});
  const RngStream b(42, {3, 7, 5});
  auto ea = a.engine();
  auto eb = b.engine();
  for (int i = 0; i < 100; ++i) EXPECT_EQ(ea(), eb());
  EXPECT_EQ(RngStream(42).child(3).child(7).child(5).key(), a.key());
}

TEST(RngStreamTest, DistinctPathsGiveDistinctStreams) {
  std::set<std::uint64_t> keys;
  for (std::uint64_t seed : {0ULL, 1ULL}) {
    for (std::uint64_t r = 0; r < 20; ++r) {
      for (std::uint64_t c = 0; c < 20; ++c) keys.insert(RngStream(seed, {r, c}).key());
    }
  }
  EXPECT_EQ(keys.size(), 800u);
  // Path order matters.
  EXPECT_NE(RngStream(0, {1, 2}).key(), RngStream(0, {2, 1}).key());
  EXPECT_NE(RngStream(0, {1}).key(), RngStream(0, {1, 0}).key());
}

TEST(RngStreamTest, SiblingStreamsLookIndependent) {
  // Correlation of uniform draws between sibling streams stays near zero.
  constexpr int n = 20000;
  auto e1 = RngStream(9, {1}).engine();
  auto e2 = RngStream(9, {2}).engine();
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double sxy = 0, sx = 0, sy = 0, sxx = 0, syy = 0;
  for (int i = 0; i < n; ++i) {
    const double x = u(e1), y = u(e2);
    sx += x, sy += y, sxy += x * y, sxx += x * x, syy += y * y;
  }
  const double cov = sxy / n - (sx / n) * (sy / n);
  const double corr = cov / std::sqrt((sxx / n - sx * sx / n / n) * (syy / n - sy * sy / n / n));
  EXPECT_LT(std::abs(corr), 4.0 / std::sqrt(n));
}

TEST(FdGradient, Quadratic) {
  const auto g = fd_gradient([](const ParamVector& w) { return w[0] * w[0]; }, ParamVector{3.0}, 1e-5);
  EXPECT_NEAR(g[0], 6.0, 1e-8);
}

TEST(FdGradient, LocallyConstantLossGivesZero) {
  const auto g = fd_gradient([](const ParamVector&) { return 1.25; }, ParamVector{1.0, -2.0, 3.0});
  EXPECT_EQ(norm2(g), 0.0);
}

TEST(FdGradient, Errors) {
  auto f = [](const ParamVector& w) { return w[0]; };
  EXPECT_THROW(fd_gradient(f, ParamVector{1.0}, 0.0), PreconditionError);
  auto bad = [](const ParamVector& w) { return w[0] > 1.0 ? std::numeric_limits<double>::infinity() : 0.0; };
  EXPECT_THROW(fd_gradient(bad, ParamVector{1.0}, 1e-5), NumericError);
}

TEST(RelativeError, UsesUnitFloor) {
  EXPECT_DOUBLE_EQ(relative_error({0.5}, {0.25}), 0.25);
  EXPECT_DOUBLE_EQ(relative_error({0.0, 20.0}, {0.0, 10.0}), 1.0);
}

}  // namespace
}  // namespace fednar
