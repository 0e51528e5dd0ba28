#include <random>

#include <gtest/gtest.h>

#include "deepfactor/errors.hpp"
#include "deepfactor/pricing.hpp"
#include "support.hpp"

using namespace deepfactor;
using deepfactor::fixtures::random_matrix;

TEST(PredictH4, MatrixMatchesPerMonth) {
  std::mt19937_64 rng(5);
  PricingCoeffs c{random_matrix(4, 2, rng), random_matrix(4, 1, rng)};
  const Matrix f = random_matrix(2, 6, rng);
  const Matrix g = random_matrix(1, 6, rng);
  const Matrix all = predict_h4(f, g, c);
  for (Eigen::Index t = 0; t < 6; ++t) {
    const Vector one = predict_h4(Vector(f.col(t)), Vector(g.col(t)), c);
    EXPECT_LT((all.col(t) - one).cwiseAbs().maxCoeff(), 1e-15);
  }
  EXPECT_THROW(predict_h4(Vector(f.col(0)), Vector::Zero(2), c), DimensionError);
}

TEST(PricingLoss, DecompositionAndCrossSectionalTerm) {
  std::mt19937_64 rng(17);
  for (int rep = 0; rep < 20; ++rep) {
    const Matrix r = random_matrix(10, 50, rng, 0.05);
    const Matrix rhat = random_matrix(10, 50, rng, 0.05);
    const auto l = pricing_loss(r, rhat);
    const Matrix e = r - rhat;
    EXPECT_NEAR(l.total, e.squaredNorm() / 500.0, 1e-15);
    EXPECT_NEAR(l.total, l.ts_variation + l.cs_variation + l.cross_term, 1e-15);
    const Vector alpha = e.rowwise().mean();
    EXPECT_NEAR(l.cs_variation, alpha_rmse(alpha) * alpha_rmse(alpha), 1e-15);
    // Residuals demeaned per asset: the cross term vanishes analytically.
    EXPECT_NEAR(l.cross_term, 0.0, 1e-15);
  }
}

TEST(FitOls, MatchesNormalEquations) {
  std::mt19937_64 rng(23);
  const Matrix f = random_matrix(2, 80, rng);
  const Matrix g = random_matrix(3, 80, rng);
  const Matrix r = random_matrix(5, 80, rng);
  const auto c = fit_ols(r, f, g);
  const Matrix x = regressors(f, g);
  const Matrix oracle = (x.transpose() * x).ldlt().solve(x.transpose() * r.transpose());
  EXPECT_LT((c.beta.transpose() - oracle.topRows(2)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((c.gamma.transpose() - oracle.bottomRows(3)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(FitOls, ZeroDeepFactorsIsBenchmarkRegression) {
  std::mt19937_64 rng(29);
  const Matrix g = random_matrix(1, 40, rng);
  const Matrix r = 1.5 * g.replicate(3, 1);
  const auto c = fit_ols(r, Matrix(0, 40), g);
  EXPECT_EQ(c.beta.cols(), 0);
  EXPECT_LT((c.gamma.array() - 1.5).abs().maxCoeff(), 1e-12);
}

TEST(FitOls, CollinearRegressorsNamed) {
  std::mt19937_64 rng(31);
  const Matrix g = random_matrix(1, 30, rng);
  const Matrix f = 2.0 * g;
  try {
    fit_ols(random_matrix(2, 30, rng), f, g);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("collinear"), std::string::npos);
  }
  EXPECT_THROW(fit_ols(random_matrix(2, 2, rng), random_matrix(1, 2, rng), random_matrix(1, 2, rng)),
               UsageError);
}

TEST(LeastSquares, MinimumNormOnCollinearDesign) {
  std::mt19937_64 rng(37);
  Matrix x(50, 2);
  x.col(0) = random_matrix(50, 1, rng);
  x.col(1) = x.col(0);
  const Matrix y = 3.0 * x.col(0);
  const Matrix b = least_squares(x, y);
  // Solutions are b0 + b1 = 3; the minimum-norm one splits evenly.
  EXPECT_NEAR(b(0, 0), 1.5, 1e-10);
  EXPECT_NEAR(b(1, 0), 1.5, 1e-10);
}

TEST(FitEnsemble, ConvergesToOlsAndAverages) {
  std::mt19937_64 rng(41);
  const Matrix f = random_matrix(1, 120, rng, 0.05);
  const Matrix g = random_matrix(1, 120, rng, 0.05);
  const Matrix r = random_matrix(3, 120, rng, 0.02) + Vector::Constant(3, 0.8) * f +
                   Vector::Constant(3, 1.1) * g;
  const auto ols = fit_ols(r, f, g);
  EnsembleOptions opt;
  opt.epochs = 3000;
  opt.batch_months = 120;
  const auto head = fit_ensemble(r, f, g, 3, 7, opt);
  ASSERT_EQ(head.members.size(), 3u);
  const auto avg = head.average();
  EXPECT_LT((avg.beta - ols.beta).cwiseAbs().maxCoeff(), 2e-2);
  EXPECT_LT((avg.gamma - ols.gamma).cwiseAbs().maxCoeff(), 2e-2);
  const Matrix mean_pred = (predict_h4(f, g, head.members[0]) + predict_h4(f, g, head.members[1]) +
                            predict_h4(f, g, head.members[2])) / 3.0;
  EXPECT_LT((head.predict(f, g) - mean_pred).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_THROW(fit_ensemble(r, f, g, 0, 7), UsageError);
}

TEST(FitEnsemble, SeedDeterminesMembers) {
  std::mt19937_64 rng(43);
  const Matrix f = random_matrix(1, 60, rng);
  const Matrix g = random_matrix(1, 60, rng);
  const Matrix r = random_matrix(2, 60, rng);
  EnsembleOptions opt;
  opt.epochs = 5;
  const auto a = fit_ensemble(r, f, g, 2, 99, opt);
  const auto b = fit_ensemble(r, f, g, 2, 99, opt);
  EXPECT_EQ(a.members[1].beta, b.members[1].beta);
  EXPECT_NE(a.members[0].beta, a.members[1].beta);
}
