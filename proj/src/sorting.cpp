#include "deepfactor/sorting.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <fmt/format.h>

namespace deepfactor {

namespace {

struct EligibleOrder {
  std::vector<Eigen::Index> ascending;  // eligible firm indices sorted by score, ties by index
};

EligibleOrder order_eligible(const Vector& y, const Mask& eligible) {
  require_dims("sort: eligibility mask", eligible.size(), y.size());
  EligibleOrder out;
  for (Eigen::Index j = 0; j < y.size(); ++j) {
    if (!eligible[j]) {
      continue;
    }
    if (!std::isfinite(y[j])) {
      throw NumericalError(fmt::format("sort: non-finite score for firm {}", j));
    }
    out.ascending.push_back(j);
  }
  if (out.ascending.size() < 2) {
    throw DataError(fmt::format("sort: degenerate cross-section ({} eligible firms)",
                                out.ascending.size()));
  }
  std::stable_sort(out.ascending.begin(), out.ascending.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return y[a] < y[b]; });
  return out;
}

Membership hard_from_order(const Vector& y, const SortSpec& spec, const EligibleOrder& order) {
  Membership out;
  const auto m = static_cast<Eigen::Index>(order.ascending.size());
  const auto n = spec.leg_size(m);
  out.u = Vector::Zero(y.size());
  out.eligible = m;
  out.leg_size = n;
  const auto at = [&](Eigen::Index rank0) { return y[order.ascending[static_cast<std::size_t>(rank0)]]; };
  out.lower_cut = 0.5 * (at(n - 1) + at(n));
  out.upper_cut = 0.5 * (at(m - n - 1) + at(m - n));
  for (Eigen::Index r = 0; r < n; ++r) {
    out.u[order.ascending[static_cast<std::size_t>(r)]] = -1.0;
    out.u[order.ascending[static_cast<std::size_t>(m - 1 - r)]] = 1.0;
  }
  return out;
}

}  // namespace

void SortSpec::validate() const {
  if (!(tau >= 0.5 && tau < 1.0)) {
    throw UsageError(fmt::format("SortSpec: tau must lie in [0.5, 1), got {}", tau));
  }
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw UsageError(fmt::format("SortSpec: temperature must be positive, got {}", temperature));
  }
}

Eigen::Index SortSpec::leg_size(Eigen::Index eligible) const {
  const auto raw = static_cast<Eigen::Index>(std::lround((1.0 - tau) * static_cast<double>(eligible)));
  return std::min(std::max<Eigen::Index>(1, raw), eligible / 2);
}

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Membership sort_hard(const Vector& y, const SortSpec& spec, const Mask& eligible) {
  spec.validate();
  return hard_from_order(y, spec, order_eligible(y, eligible));
}

Vector soft_membership(const Vector& y, double lower_cut, double upper_cut, double temperature,
                       const Mask& eligible, Vector* jacobian) {
  require_dims("soft_membership mask", eligible.size(), y.size());
  Vector u = Vector::Zero(y.size());
  if (jacobian != nullptr) {
    jacobian->setZero(y.size());
  }
  for (Eigen::Index j = 0; j < y.size(); ++j) {
    if (!eligible[j]) {
      continue;
    }
    const double up = logistic((y[j] - upper_cut) / temperature);
    const double down = logistic((lower_cut - y[j]) / temperature);
    u[j] = up - down;
    if (jacobian != nullptr) {
      (*jacobian)[j] = (up * (1.0 - up) + down * (1.0 - down)) / temperature;
    }
  }
  return u;
}

Membership sort_soft(const Vector& y, const SortSpec& spec, const Mask& eligible) {
  spec.validate();
  Membership out = hard_from_order(y, spec, order_eligible(y, eligible));
  out.u = soft_membership(y, out.lower_cut, out.upper_cut, spec.temperature, eligible, &out.jacobian);
  return out;
}

Vector weights_h2(const Vector& u, const Vector& me) {
  require_dims("weights_h2: market equity", me.size(), u.size());
  double long_mass = 0.0;
  double short_mass = 0.0;
  for (Eigen::Index j = 0; j < u.size(); ++j) {
    if (u[j] != 0.0 && !(me[j] > 0.0)) {
      throw DataError(fmt::format("weights_h2: non-positive market equity for firm {}", j));
    }
    if (u[j] > 0.0) {
      long_mass += u[j] * me[j];
    } else if (u[j] < 0.0) {
      short_mass -= u[j] * me[j];
    }
  }
  if (!(long_mass > 0.0) || !(short_mass > 0.0)) {
    throw EmptyLegError("weights_h2: empty long/short leg");
  }
  Vector w(u.size());
  for (Eigen::Index j = 0; j < u.size(); ++j) {
    if (u[j] > 0.0) {
      w[j] = u[j] * me[j] / long_mass;
    } else if (u[j] < 0.0) {
      w[j] = u[j] * me[j] / short_mass;
    } else {
      w[j] = 0.0;
    }
  }
  return w;
}

Vector weights_h2_backward(const Vector& u, const Vector& me, const Vector& grad_weights) {
  require_dims("weights_h2_backward: market equity", me.size(), u.size());
  require_dims("weights_h2_backward: gradient", grad_weights.size(), u.size());
  double long_mass = 0.0;
  double short_mass = 0.0;
  for (Eigen::Index j = 0; j < u.size(); ++j) {
    if (u[j] > 0.0) long_mass += u[j] * me[j];
    if (u[j] < 0.0) short_mass -= u[j] * me[j];
  }
  if (!(long_mass > 0.0) || !(short_mass > 0.0)) {
    throw EmptyLegError("weights_h2_backward: empty long/short leg");
  }
  // w_j = u+_j v_j / L+ - u-_j v_j / L-, so dL/du+_k = v_k (g_k - <g, w+>) / L+.
  double long_dot = 0.0;
  double short_dot = 0.0;
  for (Eigen::Index j = 0; j < u.size(); ++j) {
    if (u[j] > 0.0) long_dot += grad_weights[j] * u[j] * me[j] / long_mass;
    if (u[j] < 0.0) short_dot += grad_weights[j] * (-u[j]) * me[j] / short_mass;
  }
  Vector grad_u = Vector::Zero(u.size());
  for (Eigen::Index j = 0; j < u.size(); ++j) {
    if (u[j] > 0.0) {
      grad_u[j] = me[j] * (grad_weights[j] - long_dot) / long_mass;
    } else if (u[j] < 0.0) {
      // u-_j = -u_j and w carries -u-_j, so the two signs cancel.
      grad_u[j] = me[j] * (grad_weights[j] - short_dot) / short_mass;
    }
  }
  return grad_u;
}

Vector factor_return_h3(const Matrix& weights, const Vector& returns) {
  require_dims("factor_return_h3: returns", returns.size(), weights.cols());
  if (!returns.allFinite()) {
    throw DataError("factor_return_h3: non-finite firm return");
  }
  return weights * returns;
}

}  // namespace deepfactor
