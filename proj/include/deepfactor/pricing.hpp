#pragma once

#include <cstdint>
#include <vector>

#include "deepfactor/core_math.hpp"

namespace deepfactor {

/// Loadings of the intercept-free pricing layer R_hat = beta f + gamma g.
struct PricingCoeffs {
  Matrix beta;   // N x P, deep factors
  Matrix gamma;  // N x D, benchmark factors

  Eigen::Index assets() const { return beta.rows(); }
  Eigen::Index deep_factors() const { return beta.cols(); }
  Eigen::Index benchmark_factors() const { return gamma.cols(); }
  static PricingCoeffs zeros(Eigen::Index n, Eigen::Index p, Eigen::Index d);
};

Vector predict_h4(const Vector& f, const Vector& g, const PricingCoeffs& coeffs);
/// Month-by-month prediction; F is P x T, G is D x T, result N x T.
Matrix predict_h4(const Matrix& f, const Matrix& g, const PricingCoeffs& coeffs);

/// Mean squared pricing error split into time-series, cross-sectional and cross terms.
struct LossBreakdown {
  double total = 0.0;
  double ts_variation = 0.0;
  double cs_variation = 0.0;
  double cross_term = 0.0;
};

/// R and R_hat are N x T.
LossBreakdown pricing_loss(const Matrix& returns, const Matrix& predicted);

AlphaStats tradable_alphas(const Matrix& returns, const Matrix& f, const Matrix& g,
                           const PricingCoeffs& coeffs);

/// Per-asset least squares without intercept of R_i on [f; g].
PricingCoeffs fit_ols(const Matrix& returns, const Matrix& f, const Matrix& g);

/// Minimum-norm least squares of Y (T x N) on X (T x k); tolerates collinear columns.
Matrix least_squares(const Matrix& x, const Matrix& y);

struct EnsembleOptions {
  int epochs = 200;
  int batch_months = 120;
  double init_scale = 0.5;  // sd of the initial coefficients
  double step_scale = 0.5;  // fraction of the stable step size
};

struct EnsembleHead {
  std::vector<PricingCoeffs> members;

  PricingCoeffs average() const;
  Matrix predict(const Matrix& f, const Matrix& g) const;
};

/// Omega independent SGD fits of (beta, gamma) sharing f and g.
EnsembleHead fit_ensemble(const Matrix& returns, const Matrix& f, const Matrix& g, int omega,
                          std::uint64_t seed, const EnsembleOptions& options = {});

/// Stacks F (P x T) over G (D x T) and transposes into a T x (P + D) design.
Matrix regressors(const Matrix& f, const Matrix& g);

}  // namespace deepfactor
