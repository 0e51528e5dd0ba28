#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "deepfactor/sorting.hpp"
#include "support.hpp"

using namespace deepfactor;

namespace {

Mask all_eligible(Eigen::Index m) { return Mask::Constant(m, true); }

}  // namespace

TEST(SortSpec, LegSize) {
  SortSpec s;
  EXPECT_EQ(s.leg_size(10), 2);
  EXPECT_EQ(s.leg_size(3), 1);   // rounds to 1
  EXPECT_EQ(s.leg_size(2), 1);
  s.tau = 0.5;
  EXPECT_EQ(s.leg_size(5), 2);   // capped at floor(M / 2)
  s.tau = 1.0;
  EXPECT_THROW(s.validate(), UsageError);
  s.tau = 0.8;
  s.temperature = 0.0;
  EXPECT_THROW(s.validate(), UsageError);
}

TEST(SortHard, TopAndBottomQuintile) {
  Vector y(10);
  y << 0.3, -1.0, 2.0, 0.1, 5.0, -3.0, 0.0, 1.0, 4.0, -2.0;
  const auto m = sort_hard(y, {}, all_eligible(10));
  Vector expected(10);
  expected << 0, 0, 0, 0, 1, -1, 0, 0, 1, -1;
  EXPECT_EQ(m.u, expected);
  EXPECT_EQ(m.leg_size, 2);
  EXPECT_DOUBLE_EQ(m.lower_cut, -1.5);
  EXPECT_DOUBLE_EQ(m.upper_cut, 3.0);
}

TEST(SortHard, MaskedFirmsStayZero) {
  Vector y(6);
  y << 10.0, 1.0, 2.0, 3.0, 4.0, -10.0;
  Mask e(6);
  e << false, true, true, true, true, false;
  const auto m = sort_hard(y, {}, e);
  EXPECT_EQ(m.u[0], 0.0);
  EXPECT_EQ(m.u[5], 0.0);
  EXPECT_EQ(m.u[1], -1.0);
  EXPECT_EQ(m.u[4], 1.0);
  EXPECT_EQ(m.eligible, 4);
}

TEST(SortHard, DegenerateCrossSection) {
  Vector y(3);
  y << 1.0, 2.0, 3.0;
  Mask e(3);
  e << false, true, false;
  EXPECT_THROW(sort_hard(y, {}, e), DataError);
  y[1] = std::nan("");
  e << true, true, true;
  EXPECT_THROW(sort_hard(y, {}, e), NumericalError);
}

TEST(SortSoft, MidpointIsHalfAndJacobianMatchesDifferences) {
  std::mt19937_64 rng(3);
  const Vector y = fixtures::random_vector(20, rng);
  SortSpec spec;
  spec.mode = SortMode::soft;
  spec.temperature = 0.3;
  const auto m = sort_soft(y, spec, all_eligible(20));
  const double h = 1e-6;
  for (Eigen::Index j = 0; j < y.size(); ++j) {
    Vector yp = y, ym = y;
    yp[j] += h;
    ym[j] -= h;
    const Mask e = all_eligible(20);
    const double up = soft_membership(yp, m.lower_cut, m.upper_cut, spec.temperature, e)[j];
    const double dn = soft_membership(ym, m.lower_cut, m.upper_cut, spec.temperature, e)[j];
    EXPECT_NEAR(m.jacobian[j], (up - dn) / (2 * h), 1e-7);
  }
  Vector at_cut(1);
  at_cut << 0.0;
  const double u = soft_membership(at_cut, -1e9, 0.0, 1.0, all_eligible(1))[0];
  EXPECT_NEAR(u, 0.5, 1e-12);
}

TEST(WeightsH2, ValueWeightedLegs) {
  Vector u(4);
  u << 1.0, 1.0, -1.0, 0.0;
  Vector me(4);
  me << 1.0, 3.0, 2.0, 7.0;
  const Vector w = weights_h2(u, me);
  EXPECT_DOUBLE_EQ(w[0], 0.25);
  EXPECT_DOUBLE_EQ(w[1], 0.75);
  EXPECT_DOUBLE_EQ(w[2], -1.0);
  EXPECT_DOUBLE_EQ(w[3], 0.0);
}

TEST(WeightsH2, EmptyLegAndBadMarketEquity) {
  Vector u(3);
  u << 1.0, 0.0, 0.0;
  EXPECT_THROW(weights_h2(u, Vector::Ones(3)), EmptyLegError);
  u << 1.0, -1.0, 0.0;
  Vector me(3);
  me << 1.0, 0.0, 1.0;
  EXPECT_THROW(weights_h2(u, me), DataError);
}

TEST(WeightsH2Backward, MatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  const auto m = 12;
  SortSpec spec;
  spec.temperature = 0.5;
  const Vector y = fixtures::random_vector(m, rng);
  const Vector me = fixtures::random_vector(m, rng).cwiseAbs().array() + 0.1;
  const Vector g = fixtures::random_vector(m, rng);
  const Vector u = sort_soft(y, spec, all_eligible(m)).u;
  const Vector grad = weights_h2_backward(u, me, g);
  const double h = 1e-6;
  for (Eigen::Index j = 0; j < m; ++j) {
    Vector up = u, dn = u;
    up[j] += h;
    dn[j] -= h;
    const double fd = (g.dot(weights_h2(up, me)) - g.dot(weights_h2(dn, me))) / (2 * h);
    EXPECT_NEAR(grad[j], fd, 1e-6);
  }
}

TEST(FactorReturnH3, LongShortSpread) {
  Matrix w(1, 3);
  w << 1.0, 0.0, -1.0;
  Vector r(3);
  r << 0.05, 0.2, 0.01;
  EXPECT_DOUBLE_EQ(factor_return_h3(w, r)[0], 0.04);
}
