#include "deepfactor/conditional.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "deepfactor/errors.hpp"
#include "text_table.hpp"

namespace deepfactor {

namespace {

void check_head(const ConditionalHead& head) {
  require_dims("conditional head: beta- rows", head.beta_minus.rows(), head.beta_plus.rows());
  require_dims("conditional head: beta+ cols", head.beta_plus.cols(), head.conditions());
  require_dims("conditional head: beta- cols", head.beta_minus.cols(), head.conditions());
}

}  // namespace

void ConditionSpec::validate() const {
  if (conditions() > 30) {
    throw UsageError("ConditionSpec: too many conditions");
  }
  for (Eigen::Index p = 0; p < directions.rows(); ++p) {
    if (directions.row(p).squaredNorm() == 0.0) {
      throw UsageError(fmt::format("ConditionSpec: direction {} is zero", p + 1));
    }
  }
}

std::string ConditionalCoeffs::sign_pattern(std::size_t region, Eigen::Index conditions) {
  std::string out;
  for (Eigen::Index p = 0; p < conditions; ++p) {
    out += (((region - 1) >> p) & 1U) ? '+' : '-';
  }
  return out;
}

Vector ConditionalCoeffs::evaluate(std::size_t region, const Vector& x) const {
  if (region < 1 || region > coeffs.size()) {
    throw UsageError(fmt::format("ConditionalCoeffs: region {} out of range", region));
  }
  const Matrix& c = coeffs[region - 1];
  require_dims("ConditionalCoeffs::evaluate", x.size(), c.cols());
  return c * x;
}

Vector stack_factors(const Vector& f, const Vector& g) {
  Vector x(f.size() + g.size());
  x << f, g;
  return x;
}

Vector relu_pairs_forward(const Vector& x, const ConditionalHead& head) {
  check_head(head);
  require_dims("relu_pairs_forward: factor dimension", x.size(), head.spec.inputs());
  Vector out = Vector::Zero(head.beta_plus.rows());
  for (Eigen::Index p = 0; p < head.conditions(); ++p) {
    const double a = head.spec.directions.row(p).dot(x);
    if (a > 0.0) {
      out += head.beta_plus.col(p) * a;
    } else if (a < 0.0) {
      out -= head.beta_minus.col(p) * a;
    }
  }
  return out;
}

Vector relu_pairs_forward(const Vector& f, const Vector& g, const ConditionalHead& head) {
  return relu_pairs_forward(stack_factors(f, g), head);
}

Matrix relu_pairs_forward(const Matrix& x, const ConditionalHead& head) {
  Matrix out(head.beta_plus.rows(), x.cols());
  for (Eigen::Index t = 0; t < x.cols(); ++t) {
    out.col(t) = relu_pairs_forward(Vector(x.col(t)), head);
  }
  return out;
}

ConditionalCoeffs unwrap_regions(const ConditionalHead& head) {
  check_head(head);
  ConditionalCoeffs out;
  out.conditions = head.conditions();
  const std::size_t regions = head.spec.regions();
  const auto n = head.beta_plus.rows();
  out.coeffs.reserve(regions);
  for (std::size_t q = 1; q <= regions; ++q) {
    Matrix c = Matrix::Zero(n, head.spec.inputs());
    for (Eigen::Index p = 0; p < head.conditions(); ++p) {
      const bool positive = ((q - 1) >> p) & 1U;
      // A+_p = beta+_p a_p on the positive side, A-_p = -beta-_p a_p on the negative side.
      const Vector scale = positive ? Vector(head.beta_plus.col(p)) : Vector(-head.beta_minus.col(p));
      c += scale * head.spec.directions.row(p);
    }
    out.coeffs.push_back(std::move(c));
  }
  return out;
}

std::size_t region_index(const Vector& x, const ConditionSpec& spec) {
  require_dims("region_index: factor dimension", x.size(), spec.inputs());
  std::size_t bits = 0;
  for (Eigen::Index p = 0; p < spec.conditions(); ++p) {
    if (spec.directions.row(p).dot(x) >= 0.0) {
      bits |= std::size_t{1} << p;
    }
  }
  return bits + 1;
}

std::size_t region_index(const Vector& f, const Vector& g, const ConditionSpec& spec) {
  return region_index(stack_factors(f, g), spec);
}

void relu_pairs_backward(const Vector& x, const ConditionalHead& head, const Vector& grad_out,
                         ConditionalGradients& grads) {
  check_head(head);
  const auto c = head.conditions();
  if (grads.directions.size() == 0) {
    grads.directions = Matrix::Zero(c, head.spec.inputs());
    grads.beta_plus = Matrix::Zero(head.beta_plus.rows(), c);
    grads.beta_minus = Matrix::Zero(head.beta_minus.rows(), c);
  }
  grads.x = Vector::Zero(x.size());
  for (Eigen::Index p = 0; p < c; ++p) {
    const double a = head.spec.directions.row(p).dot(x);
    double grad_a = 0.0;
    if (a > 0.0) {
      grads.beta_plus.col(p) += grad_out * a;
      grad_a = grad_out.dot(head.beta_plus.col(p));
    } else if (a < 0.0) {
      grads.beta_minus.col(p) -= grad_out * a;
      grad_a = -grad_out.dot(head.beta_minus.col(p));
    }
    grads.directions.row(p) += grad_a * x.transpose();
    grads.x += grad_a * head.spec.directions.row(p).transpose();
  }
}

std::string conditional_coeffs_csv(const ConditionalCoeffs& coeffs,
                                   const std::vector<std::string>& assets,
                                   const std::vector<std::string>& factors) {
  std::string out = "region,pattern,asset";
  for (const auto& f : factors) out += "," + f;
  out += '\n';
  for (std::size_t q = 1; q <= coeffs.coeffs.size(); ++q) {
    const Matrix& c = coeffs.coeffs[q - 1];
    require_dims("conditional_coeffs_csv: assets", c.rows(), static_cast<Eigen::Index>(assets.size()));
    require_dims("conditional_coeffs_csv: factors", c.cols(), static_cast<Eigen::Index>(factors.size()));
    const std::string pattern = ConditionalCoeffs::sign_pattern(q, coeffs.conditions);
    for (Eigen::Index i = 0; i < c.rows(); ++i) {
      out += fmt::format("{},{},{}", q, pattern, assets[static_cast<std::size_t>(i)]);
      for (Eigen::Index k = 0; k < c.cols(); ++k) {
        out += ',' + detail::format_double(c(i, k));
      }
      out += '\n';
    }
  }
  return out;
}

}  // namespace deepfactor
