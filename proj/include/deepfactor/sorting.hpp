#pragma once

#include "deepfactor/core_math.hpp"
#include "deepfactor/errors.hpp"

namespace deepfactor {

enum class SortMode {
  hard,              // {-1, 0, 1} memberships, no gradient
  soft,              // logistic relaxation forward and backward
  straight_through,  // hard forward, soft backward
};

struct SortSpec {
  double tau = 0.8;          // quantile; legs hold the top and bottom (1 - tau) share
  double temperature = 1.0;  // logistic temperature of the soft relaxation
  SortMode mode = SortMode::hard;

  void validate() const;
  /// Firms per leg: max(1, round((1 - tau) * eligible)), capped at eligible / 2.
  Eigen::Index leg_size(Eigen::Index eligible) const;
};

struct Membership {
  Vector u;         // hard: {-1, 0, 1}; soft: [-1, 1]; zero for masked firms
  Vector jacobian;  // diagonal du/dy (soft and straight-through only)
  double lower_cut = 0.0;  // between the n-th and (n+1)-th smallest eligible score
  double upper_cut = 0.0;  // between the n-th and (n+1)-th largest eligible score
  Eigen::Index leg_size = 0;
  Eigen::Index eligible = 0;
};

/// Raised by h2 when one side of the portfolio carries no weight.
class EmptyLegError : public DataError {
 public:
  using DataError::DataError;
};

/// Univariate quantile sort of one deep characteristic over eligible firms.
Membership sort_hard(const Vector& y, const SortSpec& spec, const Mask& eligible);

/// Logistic relaxation around the hard cut points; the cuts carry no gradient.
Membership sort_soft(const Vector& y, const SortSpec& spec, const Mask& eligible);

/// Soft memberships for given (gradient-blocked) cut points.
Vector soft_membership(const Vector& y, double lower_cut, double upper_cut, double temperature,
                       const Mask& eligible, Vector* jacobian = nullptr);

/// Value-weighted long-short weights: long leg sums to +1, short leg to -1.
Vector weights_h2(const Vector& u, const Vector& me);

/// Gradient of a scalar loss w.r.t. u given its gradient w.r.t. the h2 weights.
Vector weights_h2_backward(const Vector& u, const Vector& me, const Vector& grad_weights);

/// f = W r.
Vector factor_return_h3(const Matrix& weights, const Vector& returns);

double logistic(double x);

}  // namespace deepfactor
