#pragma once

#include <string>
#include <vector>

#include "deepfactor/core_math.hpp"

namespace deepfactor {

/// Hyperplane directions of the paired ReLU layer acting on x = [f; g].
struct ConditionSpec {
  Matrix directions;  // C x (P + D), rows nonzero

  Eigen::Index conditions() const { return directions.rows(); }
  Eigen::Index inputs() const { return directions.cols(); }
  std::size_t regions() const { return std::size_t{1} << conditions(); }
  void validate() const;
};

/// One layer of ReLU pairs: sum_p beta+_p ReLU(a_p . x) + beta-_p ReLU(-a_p . x).
struct ConditionalHead {
  ConditionSpec spec;
  Matrix beta_plus;   // N x C
  Matrix beta_minus;  // N x C

  Eigen::Index conditions() const { return spec.conditions(); }
};

/// Region-wise linear coefficients recovered from a ConditionalHead.
struct ConditionalCoeffs {
  Eigen::Index conditions = 0;
  std::vector<Matrix> coeffs;  // 2^C entries, each N x (P + D); entry q-1 is region q

  /// '+' where the projection is non-negative, '-' otherwise, condition 1 first.
  static std::string sign_pattern(std::size_t region, Eigen::Index conditions);
  Vector evaluate(std::size_t region, const Vector& x) const;
};

Vector stack_factors(const Vector& f, const Vector& g);

Vector relu_pairs_forward(const Vector& x, const ConditionalHead& head);
Vector relu_pairs_forward(const Vector& f, const Vector& g, const ConditionalHead& head);
/// x is (P + D) x T; result N x T.
Matrix relu_pairs_forward(const Matrix& x, const ConditionalHead& head);

ConditionalCoeffs unwrap_regions(const ConditionalHead& head);

/// 1-based region; bit p set when a_p . x >= 0, so all-positive maps to 2^C.
std::size_t region_index(const Vector& x, const ConditionSpec& spec);
std::size_t region_index(const Vector& f, const Vector& g, const ConditionSpec& spec);

struct ConditionalGradients {
  Matrix directions;
  Matrix beta_plus;
  Matrix beta_minus;
  Vector x;
};

/// Accumulates the gradient of a scalar loss given dL/dR_hat for one month.
void relu_pairs_backward(const Vector& x, const ConditionalHead& head, const Vector& grad_out,
                         ConditionalGradients& grads);

/// Labeled text export: region,pattern,asset,<factor names...>.
std::string conditional_coeffs_csv(const ConditionalCoeffs& coeffs,
                                   const std::vector<std::string>& assets,
                                   const std::vector<std::string>& factors);

}  // namespace deepfactor
