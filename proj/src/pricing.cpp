#include "deepfactor/pricing.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include <fmt/format.h>

#include "deepfactor/errors.hpp"

namespace deepfactor {

PricingCoeffs PricingCoeffs::zeros(Eigen::Index n, Eigen::Index p, Eigen::Index d) {
  return {Matrix::Zero(n, p), Matrix::Zero(n, d)};
}

Vector predict_h4(const Vector& f, const Vector& g, const PricingCoeffs& coeffs) {
  require_dims("predict_h4: deep factors", f.size(), coeffs.beta.cols());
  require_dims("predict_h4: benchmark factors", g.size(), coeffs.gamma.cols());
  require_dims("predict_h4: assets", coeffs.gamma.rows(), coeffs.beta.rows());
  return coeffs.beta * f + coeffs.gamma * g;
}

Matrix predict_h4(const Matrix& f, const Matrix& g, const PricingCoeffs& coeffs) {
  require_dims("predict_h4: deep factors", f.rows(), coeffs.beta.cols());
  require_dims("predict_h4: benchmark factors", g.rows(), coeffs.gamma.cols());
  require_dims("predict_h4: months", g.cols(), f.cols());
  require_dims("predict_h4: assets", coeffs.gamma.rows(), coeffs.beta.rows());
  return coeffs.beta * f + coeffs.gamma * g;
}

LossBreakdown pricing_loss(const Matrix& returns, const Matrix& predicted) {
  require_dims("pricing_loss: rows", predicted.rows(), returns.rows());
  require_dims("pricing_loss: cols", predicted.cols(), returns.cols());
  const auto n = returns.rows();
  const auto t = returns.cols();
  if (t == 0 || n == 0) {
    throw UsageError("pricing_loss: empty panel");
  }
  const double nt = static_cast<double>(n) * static_cast<double>(t);
  LossBreakdown out;
  double cs = 0.0;
  double ts = 0.0;
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double sum = 0.0;
    for (Eigen::Index s = 0; s < t; ++s) sum += returns(i, s) - predicted(i, s);
    const double alpha = sum / static_cast<double>(t);
    cs += alpha * alpha;
    for (Eigen::Index s = 0; s < t; ++s) {
      const double e = returns(i, s) - predicted(i, s);
      total += e * e;
      ts += (e - alpha) * (e - alpha);
    }
  }
  out.total = total / nt;
  out.ts_variation = ts / nt;
  out.cs_variation = cs / static_cast<double>(n);
  out.cross_term = out.total - out.ts_variation - out.cs_variation;
  return out;
}

AlphaStats tradable_alphas(const Matrix& returns, const Matrix& f, const Matrix& g,
                           const PricingCoeffs& coeffs) {
  if (returns.cols() < 2) {
    throw UsageError("tradable_alphas: need at least two months");
  }
  const Matrix predicted = predict_h4(f, g, coeffs);
  require_dims("tradable_alphas: returns rows", returns.rows(), predicted.rows());
  require_dims("tradable_alphas: returns cols", returns.cols(), predicted.cols());
  return alpha_stats(returns - predicted);
}

Matrix regressors(const Matrix& f, const Matrix& g) {
  require_dims("regressors: months", g.cols(), f.cols());
  Matrix x(f.cols(), f.rows() + g.rows());
  x.leftCols(f.rows()) = f.transpose();
  x.rightCols(g.rows()) = g.transpose();
  return x;
}

PricingCoeffs fit_ols(const Matrix& returns, const Matrix& f, const Matrix& g) {
  require_dims("fit_ols: months", returns.cols(), f.cols());
  const Matrix x = regressors(f, g);
  const auto k = x.cols();
  const auto p = f.rows();
  if (returns.cols() <= k) {
    throw UsageError(fmt::format("fit_ols: need more months ({}) than regressors ({})",
                                 returns.cols(), k));
  }
  Eigen::ColPivHouseholderQR<Matrix> qr(x);
  qr.setThreshold(1e-10);
  if (qr.rank() < k) {
    std::string names;
    const auto& perm = qr.colsPermutation().indices();
    for (Eigen::Index i = qr.rank(); i < k; ++i) {
      const auto c = perm[i];
      names += fmt::format("{}{}{}", names.empty() ? "" : ", ", c < p ? "f" : "g",
                           c < p ? c + 1 : c - p + 1);
    }
    throw NumericalError(fmt::format("fit_ols: regressors are collinear (rank {} of {}); "
                                     "dependent columns: {}",
                                     qr.rank(), k, names));
  }
  const Matrix coef = qr.solve(Matrix(returns.transpose()));  // k x N
  PricingCoeffs out;
  out.beta = coef.topRows(p).transpose();
  out.gamma = coef.bottomRows(g.rows()).transpose();
  return out;
}

Matrix least_squares(const Matrix& x, const Matrix& y) {
  require_dims("least_squares: rows", y.rows(), x.rows());
  Eigen::CompleteOrthogonalDecomposition<Matrix> cod(x);
  cod.setThreshold(1e-10);
  return cod.solve(y);
}

PricingCoeffs EnsembleHead::average() const {
  if (members.empty()) {
    throw UsageError("EnsembleHead: no members");
  }
  PricingCoeffs out = PricingCoeffs::zeros(members[0].assets(), members[0].deep_factors(),
                                           members[0].benchmark_factors());
  for (const auto& m : members) {
    out.beta += m.beta;
    out.gamma += m.gamma;
  }
  out.beta /= static_cast<double>(members.size());
  out.gamma /= static_cast<double>(members.size());
  return out;
}

Matrix EnsembleHead::predict(const Matrix& f, const Matrix& g) const {
  if (members.empty()) {
    throw UsageError("EnsembleHead: no members");
  }
  Matrix sum = predict_h4(f, g, members[0]);
  for (std::size_t w = 1; w < members.size(); ++w) {
    sum += predict_h4(f, g, members[w]);
  }
  return sum / static_cast<double>(members.size());
}

EnsembleHead fit_ensemble(const Matrix& returns, const Matrix& f, const Matrix& g, int omega,
                          std::uint64_t seed, const EnsembleOptions& options) {
  if (omega < 1) {
    throw UsageError("fit_ensemble: ensemble size must be at least 1");
  }
  require_dims("fit_ensemble: months", returns.cols(), f.cols());
  const Matrix x = regressors(f, g);
  const auto t = x.rows();
  const auto k = x.cols();
  const auto n = returns.rows();
  const auto p = f.rows();
  const Matrix y = returns.transpose();  // T x N
  if (t < 1 || k < 1) {
    throw UsageError("fit_ensemble: empty design");
  }
  const Eigen::SelfAdjointEigenSolver<Matrix> eig(x.transpose() * x / static_cast<double>(t),
                                                  Eigen::EigenvaluesOnly);
  const double lambda_max = eig.eigenvalues().maxCoeff();
  if (!(lambda_max > 0.0)) {
    throw NumericalError("fit_ensemble: regressors are identically zero");
  }
  // The loss averages over N assets, so each asset's block has curvature 2 lambda / N.
  const double eta0 = options.step_scale * static_cast<double>(n) / (2.0 * lambda_max);
  const Eigen::Index batch = std::min<Eigen::Index>(std::max(1, options.batch_months), t);
  const Eigen::Index steps_per_epoch = (t + batch - 1) / batch;

  EnsembleHead head;
  head.members.reserve(static_cast<std::size_t>(omega));
  for (int w = 0; w < omega; ++w) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(w)};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> init(0.0, options.init_scale);
    Matrix coef(k, n);  // k x N
    for (Eigen::Index i = 0; i < coef.size(); ++i) coef.data()[i] = init(rng);
    std::uniform_int_distribution<Eigen::Index> start(0, t - batch);
    long step = 0;
    for (int e = 0; e < options.epochs; ++e) {
      for (Eigen::Index s = 0; s < steps_per_epoch; ++s, ++step) {
        const Eigen::Index b0 = start(rng);
        const auto xb = x.middleRows(b0, batch);
        const Matrix resid = y.middleRows(b0, batch) - xb * coef;  // B x N
        const Matrix grad = -2.0 / (static_cast<double>(n) * static_cast<double>(batch)) *
                            (xb.transpose() * resid);
        const double eta = eta0 / (1.0 + static_cast<double>(step) / 100.0);
        coef -= eta * grad;
      }
    }
    if (!coef.allFinite()) {
      throw NumericalError(fmt::format("fit_ensemble: member {} diverged", w));
    }
    PricingCoeffs member;
    member.beta = coef.topRows(p).transpose();
    member.gamma = coef.bottomRows(g.rows()).transpose();
    head.members.push_back(std::move(member));
  }
  return head;
}

}  // namespace deepfactor
