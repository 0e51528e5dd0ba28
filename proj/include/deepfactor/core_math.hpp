#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace deepfactor {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Mask = Eigen::Array<bool, Eigen::Dynamic, 1>;
using MaskMatrix = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Two-sided significance threshold used for alpha t-statistics.
inline constexpr double kSignificanceThreshold = 1.96;

/// Throws DimensionError with `what` when the extents differ.
void require_dims(std::string_view what, Eigen::Index got, Eigen::Index expected);

/// Stable ascending ranks 1..M; ties go to the lower index first.
std::vector<int> rank_ascending(std::span<const double> values);

/// Root mean squared alpha over assets.
double alpha_rmse(const Vector& alphas);

/// 1 - rmse_model^2 / rmse_avg^2.
double oos_r_squared(double rmse_model, double rmse_avg);

/// sqrt(T) * mean / sd with the population (1/T) standard deviation.
double alpha_tstat(std::span<const double> residuals);

struct AlphaStats {
  Vector alpha;  // per-asset mean pricing error
  Vector tstat;  // per-asset t-statistic
  double rmse = 0.0;

  int significant_count(double threshold = kSignificanceThreshold) const;
};

/// Builds AlphaStats from a residual panel (assets x months).
AlphaStats alpha_stats(const Matrix& residuals);

double mean(std::span<const double> values);
double pearson_correlation(std::span<const double> lhs, std::span<const double> rhs);

inline std::span<const double> as_span(const Vector& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

}  // namespace deepfactor
