#include <cmath>
#include <limits>
#include <vector>

#include <gtest/gtest.h>

#include "deepfactor/core_math.hpp"
#include "deepfactor/errors.hpp"

using namespace deepfactor;

TEST(RankAscending, TiesGoToLowerIndexFirst) {
  const std::vector<double> v{3.0, 1.0, 3.0, 2.0, 1.0};
  EXPECT_EQ(rank_ascending(v), (std::vector<int>{4, 1, 5, 3, 2}));
}

TEST(RankAscending, RejectsEmptyAndNonFinite) {
  EXPECT_THROW(rank_ascending(std::vector<double>{}), UsageError);
  EXPECT_THROW(rank_ascending(std::vector<double>{1.0, std::nan("")}), DataError);
}

TEST(AlphaRmse, HandComputed) {
  Vector a(2);
  a << 3.0, 4.0;
  EXPECT_DOUBLE_EQ(alpha_rmse(a), std::sqrt(12.5));
  EXPECT_THROW(alpha_rmse(Vector()), UsageError);
}

TEST(OosRSquared, EqualRmseGivesZeroAndWorseIsNegative) {
  EXPECT_DOUBLE_EQ(oos_r_squared(0.02, 0.02), 0.0);
  EXPECT_DOUBLE_EQ(oos_r_squared(0.0, 0.02), 1.0);
  EXPECT_LT(oos_r_squared(0.03, 0.02), 0.0);
  EXPECT_THROW(oos_r_squared(0.01, 0.0), NumericalError);
}

TEST(AlphaTstat, UsesPopulationStandardDeviation) {
  const std::vector<double> e{1.0, 2.0, 3.0, 6.0};
  // mean 3, population variance (4 + 1 + 0 + 9) / 4 = 3.5
  EXPECT_NEAR(alpha_tstat(e), 2.0 * 3.0 / std::sqrt(3.5), 1e-14);
}

TEST(AlphaTstat, ConstantSeries) {
  EXPECT_DOUBLE_EQ(alpha_tstat(std::vector<double>{0.0, 0.0, 0.0}), 0.0);
  EXPECT_THROW(alpha_tstat(std::vector<double>{0.5, 0.5, 0.5}), NumericalError);
  EXPECT_THROW(alpha_tstat(std::vector<double>{0.5}), UsageError);
}

TEST(AlphaStats, RowsAreAssets) {
  Matrix r(2, 3);
  r << 1.0, 2.0, 3.0,
       -1.0, 0.0, 4.0;
  const auto s = alpha_stats(r);
  EXPECT_DOUBLE_EQ(s.alpha[0], 2.0);
  EXPECT_DOUBLE_EQ(s.alpha[1], 1.0);
  EXPECT_DOUBLE_EQ(s.rmse, std::sqrt(2.5));
  EXPECT_EQ(s.significant_count(1.0), 1);  // t = 4.24 and 0.80
  EXPECT_EQ(s.significant_count(100.0), 0);
}

TEST(PearsonCorrelation, PerfectAndDegenerate) {
  const std::vector<double> x{1, 2, 3, 4};
  const std::vector<double> y{-2, -4, -6, -8};
  const std::vector<double> c{5, 5, 5, 5};
  EXPECT_NEAR(pearson_correlation(x, y), -1.0, 1e-15);
  EXPECT_DOUBLE_EQ(pearson_correlation(x, c), 0.0);
  EXPECT_THROW(pearson_correlation(x, std::vector<double>{1, 2}), DimensionError);
}

TEST(RequireDims, ThrowsDimensionError) {
  EXPECT_NO_THROW(require_dims("x", 3, 3));
  EXPECT_THROW(require_dims("x", 3, 4), DimensionError);
}
