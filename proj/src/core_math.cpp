#include "deepfactor/core_math.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include <fmt/format.h>

#include "deepfactor/errors.hpp"

namespace deepfactor {

void require_dims(std::string_view what, Eigen::Index got, Eigen::Index expected) {
  if (got != expected) {
    throw DimensionError(fmt::format("{}: got {}, expected {}", what, got, expected));
  }
}

std::vector<int> rank_ascending(std::span<const double> values) {
  if (values.empty()) {
    throw UsageError("rank_ascending: empty input");
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw DataError(fmt::format("rank_ascending: non-finite value at index {}", i));
    }
  }
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<int> ranks(values.size());
  for (std::size_t pos = 0; pos < order.size(); ++pos) {
    ranks[order[pos]] = static_cast<int>(pos) + 1;
  }
  return ranks;
}

double alpha_rmse(const Vector& alphas) {
  if (alphas.size() == 0) {
    throw UsageError("alpha_rmse: empty alpha vector");
  }
  double sum = 0.0;
  for (Eigen::Index i = 0; i < alphas.size(); ++i) {
    sum += alphas[i] * alphas[i];
  }
  return std::sqrt(sum / static_cast<double>(alphas.size()));
}

double oos_r_squared(double rmse_model, double rmse_avg) {
  if (!(rmse_avg > 0.0)) {
    throw NumericalError("oos_r_squared: degenerate benchmark (historical-average RMSE is zero)");
  }
  const double ratio = rmse_model / rmse_avg;
  return 1.0 - ratio * ratio;
}

double alpha_tstat(std::span<const double> residuals) {
  const std::size_t n = residuals.size();
  if (n < 2) {
    throw UsageError("alpha_tstat: need at least two observations");
  }
  const double m = mean(residuals);
  double ss = 0.0;
  double scale = 0.0;
  for (double e : residuals) {
    ss += (e - m) * (e - m);
    scale = std::max(scale, std::abs(e));
  }
  const double sd = std::sqrt(ss / static_cast<double>(n));
  // Relative cut-off so that a constant series with rounding noise counts as degenerate.
  const double tiny = 1e-13 * scale;
  if (sd <= tiny) {
    if (std::abs(m) <= tiny) {
      return 0.0;
    }
    throw NumericalError("alpha_tstat: degenerate residuals (zero variance, nonzero mean)");
  }
  return std::sqrt(static_cast<double>(n)) * m / sd;
}

int AlphaStats::significant_count(double threshold) const {
  int count = 0;
  for (Eigen::Index i = 0; i < tstat.size(); ++i) {
    if (std::abs(tstat[i]) > threshold) {
      ++count;
    }
  }
  return count;
}

AlphaStats alpha_stats(const Matrix& residuals) {
  if (residuals.cols() < 2) {
    throw UsageError("alpha_stats: need at least two months of residuals");
  }
  AlphaStats out;
  out.alpha.resize(residuals.rows());
  out.tstat.resize(residuals.rows());
  std::vector<double> row(static_cast<std::size_t>(residuals.cols()));
  for (Eigen::Index i = 0; i < residuals.rows(); ++i) {
    for (Eigen::Index t = 0; t < residuals.cols(); ++t) {
      row[static_cast<std::size_t>(t)] = residuals(i, t);
    }
    out.alpha[i] = mean(row);
    out.tstat[i] = alpha_tstat(row);
  }
  out.rmse = alpha_rmse(out.alpha);
  return out;
}

double mean(std::span<const double> values) {
  if (values.empty()) {
    throw UsageError("mean: empty input");
  }
  double sum = 0.0;
  for (double v : values) {
    sum += v;
  }
  return sum / static_cast<double>(values.size());
}

double pearson_correlation(std::span<const double> lhs, std::span<const double> rhs) {
  if (lhs.size() != rhs.size() || lhs.size() < 2) {
    throw DimensionError("pearson_correlation: need two equally sized series of length >= 2");
  }
  const double ml = mean(lhs);
  const double mr = mean(rhs);
  double cov = 0.0;
  double vl = 0.0;
  double vr = 0.0;
  for (std::size_t i = 0; i < lhs.size(); ++i) {
    cov += (lhs[i] - ml) * (rhs[i] - mr);
    vl += (lhs[i] - ml) * (lhs[i] - ml);
    vr += (rhs[i] - mr) * (rhs[i] - mr);
  }
  if (vl <= 0.0 || vr <= 0.0) {
    return 0.0;
  }
  return cov / std::sqrt(vl * vr);
}

}  // namespace deepfactor
