#include "deepfactor/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include <fmt/format.h>

#include "deepfactor/errors.hpp"

namespace deepfactor {

std::string_view to_string(Benchmark b) {
  switch (b) {
    case Benchmark::capm: return "capm";
    case Benchmark::ff3: return "ff3";
    case Benchmark::ff4: return "ff4";
  }
  return "capm";
}

Benchmark parse_benchmark(std::string_view name) {
  if (name == "capm") return Benchmark::capm;
  if (name == "ff3") return Benchmark::ff3;
  if (name == "ff4") return Benchmark::ff4;
  throw UsageError(fmt::format("unknown benchmark '{}' (expected capm, ff3 or ff4)", name));
}

Eigen::Index benchmark_columns(Benchmark b) {
  switch (b) {
    case Benchmark::capm: return 1;
    case Benchmark::ff3: return 3;
    case Benchmark::ff4: return 4;
  }
  return 1;
}

std::string_view to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "adam") return OptimizerKind::adam;
  throw UsageError(fmt::format("unknown optimizer '{}' (expected sgd or adam)", name));
}

// ---------------------------------------------------------------------------
// Access log and prepared panel

void AccessLog::mark(std::size_t month) {
  if (month >= months_.size()) months_.resize(month + 1, 0);
  if (months_[month] == 0) {
    months_[month] = 1;
    ++count_;
  }
}

bool AccessLog::touched(std::size_t month) const {
  return month < months_.size() && months_[month] != 0;
}

bool AccessLog::outside(const MonthRange& allowed) const {
  for (std::size_t t = 0; t < months_.size(); ++t) {
    if (months_[t] != 0 && !allowed.contains(t)) return true;
  }
  return false;
}

std::size_t AccessLog::first() const {
  for (std::size_t t = 0; t < months_.size(); ++t) {
    if (months_[t] != 0) return t;
  }
  throw UsageError("AccessLog: empty");
}

std::size_t AccessLog::last() const {
  for (std::size_t t = months_.size(); t-- > 0;) {
    if (months_[t] != 0) return t;
  }
  throw UsageError("AccessLog: empty");
}

void AccessLog::clear() {
  months_.clear();
  count_ = 0;
}

PreparedPanel::PreparedPanel(const PanelDataset& data, const MacroScaler& scaler,
                             Benchmark benchmark)
    : dates_(data.dates), scaler_(scaler), benchmark_(benchmark) {
  data.validate();
  if (!data.normalized) {
    throw UsageError("PreparedPanel: characteristics must be rank-normalized first");
  }
  const auto d = benchmark_columns(benchmark);
  if (data.benchmarks() < d) {
    throw DataError(fmt::format("benchmark {} needs {} factor columns, file has {}",
                                to_string(benchmark), d, data.benchmarks()));
  }
  input_size_ = input_rows(data.chars(), data.macros());
  returns_ = data.portfolios.transpose();
  benchmarks_ = data.factors.leftCols(d).transpose();
  inputs_.reserve(data.months());
  for (std::size_t t = 0; t < data.months(); ++t) {
    const CrossSection& cs = data.panel[t];
    const Vector macro = data.macros() > 0
                             ? scaler.apply(data.macro.row(static_cast<Eigen::Index>(t)).transpose())
                             : Vector();
    InputTensor in = build_input(cs.chars, cs.observed, macro);
    inputs_.push_back(Month{std::move(in.z), cs.eligible(), cs.me, cs.ret});
  }
}

void PreparedPanel::mark(std::size_t t) const {
  if (log_ != nullptr) log_->mark(t);
}

void PreparedPanel::mark(const MonthRange& range) const {
  if (range.end > months()) {
    throw UsageError(fmt::format("month range [{}, {}) exceeds the {}-month sample", range.begin,
                                 range.end, months()));
  }
  for (std::size_t t = range.begin; t < range.end; ++t) mark(t);
}

LaggedMonth PreparedPanel::lagged(std::size_t t) const {
  mark(t);
  const Month& m = inputs_.at(t);
  return {m.z, m.eligible, m.me};
}

const Vector& PreparedPanel::firm_returns(std::size_t t) const {
  mark(t);
  return inputs_.at(t).ret;
}

Vector PreparedPanel::portfolio_returns(std::size_t t) const {
  mark(t);
  return returns_.col(static_cast<Eigen::Index>(t));
}

Vector PreparedPanel::benchmark_returns(std::size_t t) const {
  mark(t);
  return benchmarks_.col(static_cast<Eigen::Index>(t));
}

Matrix PreparedPanel::returns(const MonthRange& range) const {
  mark(range);
  return returns_.middleCols(static_cast<Eigen::Index>(range.begin),
                             static_cast<Eigen::Index>(range.size()));
}

Matrix PreparedPanel::benchmarks(const MonthRange& range) const {
  mark(range);
  return benchmarks_.middleCols(static_cast<Eigen::Index>(range.begin),
                                static_cast<Eigen::Index>(range.size()));
}

// ---------------------------------------------------------------------------
// Architecture

std::vector<int> ModelArch::hidden_sizes() const {
  if (!hidden.empty()) return hidden;
  return default_hidden_sizes(layers);
}

std::string ModelArch::tag() const { return fmt::format("L{}-P{}-C{}", layers, factors, conditions); }

void ModelArch::validate() const {
  if (layers < 0 || layers > 7) {
    throw UsageError(fmt::format("layers must lie in 0..7, got {}", layers));
  }
  if (factors < 0) throw UsageError("factors must be non-negative");
  if (conditions < 0 || conditions > 8) {
    throw UsageError(fmt::format("conditions must lie in 0..8, got {}", conditions));
  }
  if (!hidden.empty() && static_cast<int>(hidden.size()) != layers) {
    throw UsageError("custom hidden widths must match the layer count");
  }
}

// ---------------------------------------------------------------------------
// Forward pass pieces

namespace {

struct SortedMonth {
  Vector u;
  Vector jacobian;
  bool skipped = false;
};

Matrix gather_inputs(const PreparedPanel& data, std::span<const std::size_t> months,
                     std::vector<Eigen::Index>& offsets) {
  Eigen::Index total = 0;
  offsets.clear();
  for (std::size_t t : months) {
    offsets.push_back(total);
    total += data.lagged(t).z.cols();
  }
  Matrix z(data.input_size(), total);
  for (std::size_t b = 0; b < months.size(); ++b) {
    const Matrix& zt = data.lagged(months[b]).z;
    z.middleCols(offsets[b], zt.cols()) = zt;
  }
  return z;
}

// Membership of one month/factor; `skipped` when fewer than two firms are eligible.
SortedMonth sort_month(const Vector& y, const LaggedMonth& view, SortMode mode, double tau,
                       double temperature, FrozenCuts* cuts, std::size_t cut_index) {
  SortedMonth out;
  if (view.eligible.count() < 2) {
    out.skipped = true;
    return out;
  }
  SortSpec spec;
  spec.tau = tau;
  spec.temperature = temperature;
  spec.mode = mode;
  if (mode == SortMode::hard) {
    out.u = sort_hard(y, spec, view.eligible).u;
    return out;
  }
  if (mode == SortMode::straight_through) {
    const Membership hard = sort_hard(y, spec, view.eligible);
    out.u = hard.u;
    soft_membership(y, hard.lower_cut, hard.upper_cut, temperature, view.eligible, &out.jacobian);
    return out;
  }
  if (cuts != nullptr && cuts->recorded) {
    out.u = soft_membership(y, cuts->lower.at(cut_index), cuts->upper.at(cut_index), temperature,
                            view.eligible, &out.jacobian);
    return out;
  }
  Membership soft = sort_soft(y, spec, view.eligible);
  if (cuts != nullptr) {
    if (cuts->lower.size() <= cut_index) {
      cuts->lower.resize(cut_index + 1);
      cuts->upper.resize(cut_index + 1);
    }
    cuts->lower[cut_index] = soft.lower_cut;
    cuts->upper[cut_index] = soft.upper_cut;
  }
  out.u = std::move(soft.u);
  out.jacobian = std::move(soft.jacobian);
  return out;
}

void check_model(const FactorModel& model, const PreparedPanel& data) {
  const auto p = model.deep_factors();
  require_dims("model: beta rows", model.coeffs.beta.rows(), data.assets());
  require_dims("model: beta cols", model.coeffs.beta.cols(), p);
  require_dims("model: gamma rows", model.coeffs.gamma.rows(), data.assets());
  require_dims("model: gamma cols", model.coeffs.gamma.cols(), data.benchmark_factors());
  if (p > 0) {
    require_dims("model: network input", model.net.input_size(), data.input_size());
    require_dims("model: network output", model.net.output_size(), p);
  }
  if (model.cond.conditions() > 0) {
    require_dims("model: condition inputs", model.cond.spec.inputs(),
                 p + data.benchmark_factors());
  }
}

void range_months(const MonthRange& range, std::vector<std::size_t>& out) {
  out.resize(range.size());
  for (std::size_t i = 0; i < range.size(); ++i) out[i] = range.begin + i;
}

}  // namespace

FactorPanel deep_factors(const FactorModel& model, const PreparedPanel& data,
                         const MonthRange& range, SortMode mode, double temperature) {
  check_model(model, data);
  const auto p = model.deep_factors();
  FactorPanel out;
  out.f = Matrix::Zero(p, static_cast<Eigen::Index>(range.size()));
  if (p == 0) return out;
  std::vector<std::size_t> all;
  range_months(range, all);
  // Evaluate in month blocks to bound the size of the activations.
  constexpr std::size_t kBlock = 32;
  std::vector<Eigen::Index> offsets;
  for (std::size_t b0 = 0; b0 < all.size(); b0 += kBlock) {
    const std::span<const std::size_t> months(all.data() + b0, std::min(kBlock, all.size() - b0));
    const Matrix y = forward(gather_inputs(data, months, offsets), model.net, Mode::eval);
    for (std::size_t b = 0; b < months.size(); ++b) {
      const LaggedMonth view = data.lagged(months[b]);
      const auto m = view.z.cols();
      bool skipped = false;
      for (Eigen::Index k = 0; k < p; ++k) {
        const Vector yk = y.row(k).segment(offsets[b], m).transpose();
        const SortedMonth s = sort_month(yk, view, mode, model.tau, temperature, nullptr, 0);
        if (s.skipped) {
          skipped = true;
          continue;
        }
        try {
          const Vector w = weights_h2(s.u, view.me);
          out.f(k, static_cast<Eigen::Index>(b0 + b)) = w.dot(data.firm_returns(months[b]));
        } catch (const EmptyLegError&) {
          skipped = true;
        }
      }
      if (skipped) ++out.empty_leg_months;
    }
  }
  return out;
}

Matrix predict(const FactorModel& model, const Matrix& f, const Matrix& g) {
  Matrix out = predict_h4(f, g, model.coeffs);
  if (model.cond.conditions() > 0) {
    Matrix x(f.rows() + g.rows(), f.cols());
    x << f, g;
    out += relu_pairs_forward(x, model.cond);
  }
  return out;
}

Matrix model_residuals(const FactorModel& model, const PreparedPanel& data,
                       const MonthRange& range) {
  const Matrix f = deep_factors(model, data, range).f;
  const Matrix g = data.benchmarks(range);
  return data.returns(range) - predict(model, f, g);
}

double model_loss(const FactorModel& model, const PreparedPanel& data, const MonthRange& range) {
  const Matrix e = model_residuals(model, data, range);
  return e.squaredNorm() / static_cast<double>(e.size());
}

// ---------------------------------------------------------------------------
// Parameter packing

Vector pack_parameters(const FactorModel& model) {
  const Vector net = model.deep_factors() > 0 ? pack(model.net) : Vector();
  const auto& c = model.coeffs;
  const auto& h = model.cond;
  Vector out(net.size() + c.beta.size() + c.gamma.size() + h.spec.directions.size() +
             h.beta_plus.size() + h.beta_minus.size());
  Eigen::Index at = 0;
  auto put = [&](const auto& m) {
    out.segment(at, m.size()) = Eigen::Map<const Vector>(m.data(), m.size());
    at += m.size();
  };
  put(net);
  put(c.beta);
  put(c.gamma);
  put(h.spec.directions);
  put(h.beta_plus);
  put(h.beta_minus);
  return out;
}

void unpack_parameters(const Vector& flat, FactorModel& model) {
  Eigen::Index at = 0;
  if (model.deep_factors() > 0) {
    unpack(flat, 0, model.net);
    at = model.net.parameter_count();
  }
  auto take = [&](Matrix& m) {
    if (at + m.size() > flat.size()) {
      throw DimensionError("unpack_parameters: flat vector too short");
    }
    Eigen::Map<Vector>(m.data(), m.size()) = flat.segment(at, m.size());
    at += m.size();
  };
  take(model.coeffs.beta);
  take(model.coeffs.gamma);
  take(model.cond.spec.directions);
  take(model.cond.beta_plus);
  take(model.cond.beta_minus);
  require_dims("unpack_parameters: flat size", flat.size(), at);
}

// ---------------------------------------------------------------------------
// Loss and gradient

LossGradient loss_and_gradient(const FactorModel& model, const PreparedPanel& data,
                               std::span<const std::size_t> months,
                               const GradientOptions& options) {
  check_model(model, data);
  if (months.empty()) throw UsageError("loss_and_gradient: empty batch");
  const auto p = model.deep_factors();
  const auto d = data.benchmark_factors();
  const auto n = data.assets();
  const auto batch = static_cast<Eigen::Index>(months.size());

  std::vector<Eigen::Index> offsets;
  ForwardCache cache;
  Matrix y;
  if (p > 0) {
    const Matrix z = gather_inputs(data, months, offsets);
    y = forward(z, model.net, options.mode, options.dropout, options.rng, &cache);
  }

  LossGradient out;
  Matrix f = Matrix::Zero(p, batch);
  std::vector<SortedMonth> sorted(static_cast<std::size_t>(p * batch));
  for (Eigen::Index b = 0; b < batch; ++b) {
    const std::size_t t = months[static_cast<std::size_t>(b)];
    if (p == 0) break;
    const LaggedMonth view = data.lagged(t);
    const Vector& ret = data.firm_returns(t);
    const auto m = view.z.cols();
    bool skipped = false;
    for (Eigen::Index k = 0; k < p; ++k) {
      const auto idx = static_cast<std::size_t>(b * p + k);
      const Vector yk = y.row(k).segment(offsets[static_cast<std::size_t>(b)], m).transpose();
      SortedMonth s = sort_month(yk, view, options.sort, model.tau, options.temperature,
                                 options.cuts, idx);
      if (!s.skipped) {
        try {
          f(k, b) = weights_h2(s.u, view.me).dot(ret);
        } catch (const EmptyLegError&) {
          s.skipped = true;
        }
      }
      skipped = skipped || s.skipped;
      sorted[idx] = std::move(s);
    }
    if (skipped) ++out.empty_leg_months;
  }
  if (options.cuts != nullptr && options.sort == SortMode::soft) options.cuts->recorded = true;

  Matrix g(d, batch);
  Matrix r(n, batch);
  for (Eigen::Index b = 0; b < batch; ++b) {
    g.col(b) = data.benchmark_returns(months[static_cast<std::size_t>(b)]);
    r.col(b) = data.portfolio_returns(months[static_cast<std::size_t>(b)]);
  }
  const Matrix err = r - predict(model, f, g);
  const double scale = 1.0 / static_cast<double>(n * batch);
  out.loss = err.squaredNorm() * scale;
  if (!std::isfinite(out.loss)) {
    throw NumericalError(fmt::format("non-finite loss on a batch starting at month {}",
                                     data.dates()[months.front()].str()));
  }

  const Matrix grad_pred = -2.0 * scale * err;  // dL / dR_hat, N x B
  const Matrix grad_beta = grad_pred * f.transpose();
  const Matrix grad_gamma = grad_pred * g.transpose();
  Matrix grad_f = model.coeffs.beta.transpose() * grad_pred;

  ConditionalGradients cg;
  const auto c = model.cond.conditions();
  if (c > 0) {
    cg.directions = Matrix::Zero(c, p + d);
    cg.beta_plus = Matrix::Zero(n, c);
    cg.beta_minus = Matrix::Zero(n, c);
    for (Eigen::Index b = 0; b < batch; ++b) {
      Vector x(p + d);
      x << f.col(b), g.col(b);
      relu_pairs_backward(x, model.cond, grad_pred.col(b), cg);
      grad_f.col(b) += cg.x.head(p);
    }
  }

  Vector grad_net;
  if (p > 0) {
    Matrix grad_y = Matrix::Zero(p, y.cols());
    const bool differentiable = options.sort != SortMode::hard;
    for (Eigen::Index b = 0; b < batch && differentiable; ++b) {
      const std::size_t t = months[static_cast<std::size_t>(b)];
      const LaggedMonth view = data.lagged(t);
      const Vector& ret = data.firm_returns(t);
      for (Eigen::Index k = 0; k < p; ++k) {
        const SortedMonth& s = sorted[static_cast<std::size_t>(b * p + k)];
        if (s.skipped || grad_f(k, b) == 0.0) continue;
        const Vector grad_u = weights_h2_backward(s.u, view.me, grad_f(k, b) * ret);
        grad_y.row(k).segment(offsets[static_cast<std::size_t>(b)], ret.size()) =
            grad_u.cwiseProduct(s.jacobian).transpose();
      }
    }
    grad_net = pack(backward(cache, model.net, grad_y));
  }

  out.gradient.resize(grad_net.size() + grad_beta.size() + grad_gamma.size() +
                      model.cond.spec.directions.size() + model.cond.beta_plus.size() +
                      model.cond.beta_minus.size());
  Eigen::Index at = 0;
  auto put = [&](const auto& m) {
    out.gradient.segment(at, m.size()) = Eigen::Map<const Vector>(m.data(), m.size());
    at += m.size();
  };
  put(grad_net);
  put(grad_beta);
  put(grad_gamma);
  if (c > 0) {
    put(cg.directions);
    put(cg.beta_plus);
    put(cg.beta_minus);
  }
  if (!out.gradient.allFinite()) {
    throw NumericalError(fmt::format("non-finite gradient on a batch starting at month {}",
                                     data.dates()[months.front()].str()));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Optimization

void TrainConfig::validate(std::size_t fit_months) const {
  if (epochs < 1) throw UsageError("epochs must be at least 1");
  if (batch_months < 1) throw UsageError("batch_months must be at least 1");
  if (static_cast<std::size_t>(batch_months) > fit_months) {
    throw UsageError(fmt::format("batch_months {} exceeds the {}-month fit window", batch_months,
                                 fit_months));
  }
  if (!(step_size >= 0.0) || !std::isfinite(step_size)) {
    throw UsageError("step_size must be finite and non-negative");
  }
  if (!(decay_steps > 0.0)) throw UsageError("decay_steps must be positive");
  if (!(keep_probability > 0.0 && keep_probability <= 1.0)) {
    throw UsageError("keep_probability must lie in (0, 1]");
  }
  if (!(temperature_start > 0.0) || !(temperature_end > 0.0)) {
    throw UsageError("temperatures must be positive");
  }
  if (ensemble < 1) throw UsageError("ensemble size must be at least 1");
  SortSpec spec;
  spec.tau = tau;
  spec.validate();
}

double TrainConfig::temperature(int epoch) const {
  if (epochs <= 1) return temperature_end;
  const double x = static_cast<double>(epoch) / static_cast<double>(epochs - 1);
  return temperature_start * std::pow(temperature_end / temperature_start, x);
}

double sgd_step(FactorModel& model, OptimizerState& state, const PreparedPanel& data,
                std::span<const std::size_t> months, const TrainConfig& config, double temperature,
                Rng& rng) {
  GradientOptions opts;
  opts.sort = config.sort_mode;
  opts.temperature = temperature;
  opts.mode = Mode::train;
  opts.dropout.keep_probability = config.keep_probability;
  opts.rng = &rng;
  const LossGradient lg = loss_and_gradient(model, data, months, opts);
  Vector theta = pack_parameters(model);
  const double t = static_cast<double>(state.step);
  if (config.optimizer == OptimizerKind::sgd) {
    theta -= config.step_size / (1.0 + t / config.decay_steps) * lg.gradient;
  } else {
    constexpr double b1 = 0.9;
    constexpr double b2 = 0.999;
    constexpr double eps = 1e-8;
    if (state.m.size() != theta.size()) {
      state.m = Vector::Zero(theta.size());
      state.v = Vector::Zero(theta.size());
    }
    state.m = b1 * state.m + (1.0 - b1) * lg.gradient;
    state.v = b2 * state.v + (1.0 - b2) * lg.gradient.cwiseAbs2();
    const double c1 = 1.0 - std::pow(b1, t + 1.0);
    const double c2 = 1.0 - std::pow(b2, t + 1.0);
    const double eta = config.step_size / (1.0 + t / config.decay_steps);
    theta.array() -= eta * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + eps);
  }
  ++state.step;
  unpack_parameters(theta, model);
  return lg.loss;
}

double benchmark_ols_loss(const PreparedPanel& data, const MonthRange& range) {
  const Matrix r = data.returns(range);
  const Matrix g = data.benchmarks(range);
  const Matrix empty(0, g.cols());
  const PricingCoeffs c = fit_ols(r, empty, g);
  const Matrix e = r - predict_h4(empty, g, c);
  return e.squaredNorm() / static_cast<double>(e.size());
}

FactorModel initial_model(const PreparedPanel& data, const ModelArch& arch,
                          const MonthRange& fit, const TrainConfig& config) {
  arch.validate();
  FactorModel model;
  model.arch = arch;
  model.benchmark = data.benchmark();
  model.tau = config.tau;
  model.seed = config.seed;
  model.fit_window = fit;
  model.ensemble = config.ensemble;
  model.scaler = data.scaler();
  const auto p = arch.factors;
  const auto d = data.benchmark_factors();
  const auto n = data.assets();
  if (p > 0) {
    std::vector<int> sizes = {static_cast<int>(data.input_size())};
    for (int h : arch.hidden_sizes()) sizes.push_back(h);
    sizes.push_back(p);
    model.net = init_params(sizes, arch.activation, config.seed);
  }
  const Matrix r = data.returns(fit);
  const Matrix g = data.benchmarks(fit);
  model.coeffs = fit_ols(r, Matrix(0, g.cols()), g);
  model.coeffs.beta = Matrix::Zero(n, p);
  model.cond.spec.directions = Matrix::Zero(arch.conditions, p + d);
  model.cond.beta_plus = Matrix::Zero(n, arch.conditions);
  model.cond.beta_minus = Matrix::Zero(n, arch.conditions);
  if (arch.conditions > 0) {
    std::seed_seq seq{static_cast<std::uint32_t>(config.seed),
                      static_cast<std::uint32_t>(config.seed >> 32), 0xc0dU};
    Rng rng(seq);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Eigen::Index c = 0; c < arch.conditions; ++c) {
      Vector a(p + d);
      for (auto& x : a) x = normal(rng);
      model.cond.spec.directions.row(c) = a.normalized().transpose();
    }
  }
  return model;
}

void refit_head(FactorModel& model, const PreparedPanel& data, const MonthRange& fit) {
  const Matrix f = deep_factors(model, data, fit).f;
  const Matrix g = data.benchmarks(fit);
  const Matrix r = data.returns(fit);
  const auto p = f.rows();
  const auto d = g.rows();
  const auto c = model.cond.conditions();
  if (c == 0) {
    if (model.ensemble > 1) {
      model.coeffs = fit_ensemble(r, f, g, model.ensemble, model.seed).average();
    } else {
      try {
        model.coeffs = fit_ols(r, f, g);
      } catch (const NumericalError&) {
        // Duplicate deep factors: keep the minimum-norm loadings.
        const Matrix coef = least_squares(regressors(f, g), r.transpose()).transpose();
        model.coeffs.beta = coef.leftCols(p);
        model.coeffs.gamma = coef.rightCols(d);
      }
    }
    return;
  }
  // Linear part plus both halves of each ReLU pair; the design is collinear
  // (ReLU(a) - ReLU(-a) = a), so the minimum-norm solution is taken.
  Matrix x(f.cols(), p + d + 2 * c);
  x.leftCols(p + d) = regressors(f, g);
  Matrix stacked(p + d, f.cols());
  stacked << f, g;
  const Matrix proj = (model.cond.spec.directions * stacked).transpose();  // T x C
  x.middleCols(p + d, c) = proj.cwiseMax(0.0);
  x.rightCols(c) = (-proj).cwiseMax(0.0);
  const Matrix coef = least_squares(x, r.transpose()).transpose();  // N x (P + D + 2C)
  model.coeffs.beta = coef.leftCols(p);
  model.coeffs.gamma = coef.middleCols(p, d);
  model.cond.beta_plus = coef.middleCols(p + d, c);
  model.cond.beta_minus = coef.rightCols(c);
}

FactorModel train(const PreparedPanel& data, const ModelArch& arch, const MonthRange& fit,
                  const TrainConfig& config) {
  if (fit.empty() || fit.end > data.months()) {
    throw UsageError("train: invalid fit window");
  }
  config.validate(fit.size());
  FactorModel model = initial_model(data, arch, fit, config);
  std::seed_seq seq{static_cast<std::uint32_t>(config.seed),
                    static_cast<std::uint32_t>(config.seed >> 32), 0x5e1U};
  Rng rng(seq);
  OptimizerState state;
  const auto batch = static_cast<std::size_t>(config.batch_months);
  const std::size_t steps = (fit.size() + batch - 1) / batch;
  std::uniform_int_distribution<std::size_t> start(fit.begin, fit.end - batch);
  std::vector<std::size_t> months(batch);
  const bool learn = arch.factors > 0 || arch.conditions > 0;
  for (int epoch = 0; epoch < config.epochs && learn; ++epoch) {
    const double temp = config.temperature(epoch);
    for (std::size_t s = 0; s < steps; ++s) {
      const std::size_t t0 = start(rng);
      for (std::size_t i = 0; i < batch; ++i) months[i] = t0 + i;
      sgd_step(model, state, data, months, config, temp, rng);
    }
    model.loss_curve.push_back(model_loss(model, data, fit));
  }
  refit_head(model, data, fit);
  model.final_loss = model_loss(model, data, fit);
  model.benchmark_loss = benchmark_ols_loss(data, fit);
  if (!learn) model.loss_curve.assign(static_cast<std::size_t>(config.epochs), model.final_loss);
  model.empty_leg_months = deep_factors(model, data, fit).empty_leg_months;
  if (!pack_parameters(model).allFinite()) {
    throw NumericalError(fmt::format("train {}: non-finite parameters", arch.tag()));
  }
  return model;
}

// ---------------------------------------------------------------------------
// Gradient check

GradientCheck gradient_check_full(const FactorModel& model, const PreparedPanel& data,
                                  const MonthRange& range, SortMode sort, double temperature) {
  GradientCheck out;
  const Vector theta = pack_parameters(model);
  out.parameters = theta.size();
  if (sort != SortMode::soft) {
    out.status = CheckStatus::non_differentiable;
    return out;
  }
  std::vector<std::size_t> months;
  range_months(range, months);
  FrozenCuts cuts;
  GradientOptions opts;
  opts.sort = SortMode::soft;
  opts.temperature = temperature;
  opts.mode = Mode::eval;
  opts.cuts = &cuts;
  const Vector analytic = loss_and_gradient(model, data, months, opts).gradient;

  FactorModel probe = model;
  auto loss_at = [&](const Vector& x) {
    unpack_parameters(x, probe);
    return loss_and_gradient(probe, data, months, opts).loss;
  };
  // Five-point central stencil, truncation error O(h^4).
  Vector numeric(theta.size());
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    const double h = 1e-4 * std::max(1.0, std::abs(theta[i]));
    Vector x = theta;
    x[i] = theta[i] + 2 * h;
    const double f2 = loss_at(x);
    x[i] = theta[i] + h;
    const double f1 = loss_at(x);
    x[i] = theta[i] - h;
    const double m1 = loss_at(x);
    x[i] = theta[i] - 2 * h;
    const double m2 = loss_at(x);
    numeric[i] = (-f2 + 8.0 * f1 - 8.0 * m1 + m2) / (12.0 * h);
  }
  const double floor = 1e-6 * analytic.cwiseAbs().maxCoeff();
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    const double a = analytic[i];
    const double nd = numeric[i];
    const double denom = std::max({std::abs(a), std::abs(nd), floor});
    const double rel = denom > 0.0 ? std::abs(a - nd) / denom : 0.0;
    if (out.worst_index < 0 || rel > out.max_relative_error) {
      out.max_relative_error = rel;
      out.worst_index = i;
    }
  }
  return out;
}

}  // namespace deepfactor
