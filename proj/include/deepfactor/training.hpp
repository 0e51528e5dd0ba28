#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "deepfactor/conditional.hpp"
#include "deepfactor/network.hpp"
#include "deepfactor/panel.hpp"
#include "deepfactor/pricing.hpp"
#include "deepfactor/sorting.hpp"

namespace deepfactor {

enum class Benchmark { capm, ff3, ff4 };

std::string_view to_string(Benchmark b);
Benchmark parse_benchmark(std::string_view name);
/// Leading columns of the benchmark factor file used by each tag: 1, 3 or 4.
Eigen::Index benchmark_columns(Benchmark b);

/// Records which months were read; used to audit look-ahead and sample boundaries.
class AccessLog {
 public:
  void mark(std::size_t month);
  bool touched(std::size_t month) const;
  /// True when any month outside `allowed` was read.
  bool outside(const MonthRange& allowed) const;
  std::size_t first() const;
  std::size_t last() const;
  bool empty() const { return count_ == 0; }
  void clear();

 private:
  std::vector<char> months_;
  std::size_t count_ = 0;
};

/// Information set available when forming the month-t portfolio (all lagged).
struct LaggedMonth {
  const Matrix& z;        // K0 x M network input
  const Mask& eligible;   // firms with every characteristic observed
  const Vector& me;       // lagged market equity
};

/// Rank-normalized panel turned into per-month network inputs plus the return matrices.
class PreparedPanel {
 public:
  /// `data` must be rank-normalized; the scaler standardizes the macro predictors.
  PreparedPanel(const PanelDataset& data, const MacroScaler& scaler, Benchmark benchmark);

  std::size_t months() const { return inputs_.size(); }
  Eigen::Index assets() const { return returns_.rows(); }
  Eigen::Index input_size() const { return input_size_; }
  Eigen::Index benchmark_factors() const { return benchmarks_.rows(); }
  Benchmark benchmark() const { return benchmark_; }
  const std::vector<YearMonth>& dates() const { return dates_; }
  const MacroScaler& scaler() const { return scaler_; }

  LaggedMonth lagged(std::size_t t) const;
  /// Realized firm returns over month t.
  const Vector& firm_returns(std::size_t t) const;

  Vector portfolio_returns(std::size_t t) const;
  Vector benchmark_returns(std::size_t t) const;

  /// N x T test-portfolio returns and D x T benchmark factors restricted to `range`.
  Matrix returns(const MonthRange& range) const;
  Matrix benchmarks(const MonthRange& range) const;

  void set_access_log(AccessLog* log) const { log_ = log; }

 private:
  struct Month {
    Matrix z;
    Mask eligible;
    Vector me;
    Vector ret;
  };
  void mark(std::size_t t) const;
  void mark(const MonthRange& range) const;

  std::vector<Month> inputs_;
  std::vector<YearMonth> dates_;
  MacroScaler scaler_;
  Matrix returns_;     // N x T
  Matrix benchmarks_;  // D x T
  Eigen::Index input_size_ = 0;
  Benchmark benchmark_ = Benchmark::capm;
  mutable AccessLog* log_ = nullptr;
};

/// Network depth, number of deep factors and number of ReLU condition pairs.
struct ModelArch {
  int layers = 1;
  int factors = 1;
  int conditions = 0;
  std::vector<int> hidden;  // overrides the default widths when non-empty
  Activation activation = Activation::tanh;

  std::vector<int> hidden_sizes() const;
  std::string tag() const;  // e.g. "L2-P1-C0"
  void validate() const;
};

struct FactorModel {
  ModelArch arch;
  Benchmark benchmark = Benchmark::capm;
  NetworkParams net;
  double tau = 0.8;
  PricingCoeffs coeffs;
  ConditionalHead cond;  // zero conditions when unconditional
  MacroScaler scaler;
  MonthRange fit_window;
  std::uint64_t seed = 0;
  int ensemble = 1;

  std::vector<double> loss_curve;  // per-epoch full-window loss
  double final_loss = 0.0;         // hard-sort loss after the head refit
  double benchmark_loss = 0.0;     // OLS on benchmark factors only, same window
  int empty_leg_months = 0;

  Eigen::Index deep_factors() const { return arch.factors; }
};

/// Hard-sort (or soft) deep factor returns, P x |range|.
struct FactorPanel {
  Matrix f;
  int empty_leg_months = 0;
};

FactorPanel deep_factors(const FactorModel& model, const PreparedPanel& data,
                         const MonthRange& range, SortMode mode = SortMode::hard,
                         double temperature = 1.0);

/// Model prediction given factor panels (P x T and D x T); includes the conditional head.
Matrix predict(const FactorModel& model, const Matrix& f, const Matrix& g);

/// Hard-sort pricing loss over `range`.
double model_loss(const FactorModel& model, const PreparedPanel& data, const MonthRange& range);

/// Pricing residuals R - R_hat (N x |range|) with hard sorting and no dropout.
Matrix model_residuals(const FactorModel& model, const PreparedPanel& data,
                       const MonthRange& range);

/// Flat parameter vector: network layers, beta, gamma, condition directions, beta+, beta-.
Vector pack_parameters(const FactorModel& model);
void unpack_parameters(const Vector& flat, FactorModel& model);

/// Cut points per (month, factor) recorded at one parameter value and replayed at others.
struct FrozenCuts {
  std::vector<double> lower;
  std::vector<double> upper;
  bool recorded = false;
};

struct GradientOptions {
  SortMode sort = SortMode::soft;
  double temperature = 1.0;
  Mode mode = Mode::eval;
  DropoutConfig dropout;
  Rng* rng = nullptr;        // required for train mode
  FrozenCuts* cuts = nullptr;  // record on first use, then replay
};

struct LossGradient {
  double loss = 0.0;
  Vector gradient;  // same layout as pack_parameters
  int empty_leg_months = 0;
};

LossGradient loss_and_gradient(const FactorModel& model, const PreparedPanel& data,
                               std::span<const std::size_t> months,
                               const GradientOptions& options);

enum class OptimizerKind { sgd, adam };

std::string_view to_string(OptimizerKind k);
OptimizerKind parse_optimizer(std::string_view name);

struct TrainConfig {
  int epochs = 200;
  int batch_months = 120;
  OptimizerKind optimizer = OptimizerKind::adam;
  double step_size = 1e-2;   // eta_0
  double decay_steps = 100;  // sgd: eta_t = eta_0 / (1 + t / decay_steps)
  double keep_probability = 0.9;
  double temperature_start = 1.0;
  double temperature_end = 0.1;  // geometric annealing over epochs
  SortMode sort_mode = SortMode::soft;
  double tau = 0.8;
  int ensemble = 1;  // > 1 fits the final head as an averaged SGD ensemble
  std::uint64_t seed = 1;

  void validate(std::size_t fit_months) const;
  double temperature(int epoch) const;
};

struct OptimizerState {
  Vector m;
  Vector v;
  long step = 0;
};

/// One optimizer step on the mini-batch loss; returns the batch loss.
double sgd_step(FactorModel& model, OptimizerState& state, const PreparedPanel& data,
                std::span<const std::size_t> months, const TrainConfig& config, double temperature,
                Rng& rng);

/// Starting point: zero deep loadings, OLS benchmark loadings, random unit condition directions.
FactorModel initial_model(const PreparedPanel& data, const ModelArch& arch,
                          const MonthRange& fit, const TrainConfig& config);

FactorModel train(const PreparedPanel& data, const ModelArch& arch, const MonthRange& fit,
                  const TrainConfig& config);

/// Refits beta, gamma (and the ReLU-pair loadings) by least squares on hard-sort factors.
void refit_head(FactorModel& model, const PreparedPanel& data, const MonthRange& fit);

/// Benchmark-only OLS loss over `range` with loadings fit on the same window.
double benchmark_ols_loss(const PreparedPanel& data, const MonthRange& range);

struct GridConfig {
  std::vector<int> layers = {1, 2, 3, 4, 5};
  std::vector<int> factors = {1, 2, 3, 4, 5};
  std::vector<int> conditions = {0, 1, 2, 3};
  int seeds = 3;
  int jobs = 1;

  void validate() const;
};

struct GridCell {
  ModelArch arch;
  std::vector<std::uint64_t> seeds;
  std::vector<double> valid_rmse;   // per seed; NaN for failed runs
  std::vector<double> train_loss;   // per seed
  std::vector<std::string> failures;
  double score = 0.0;               // mean validation alpha RMSE over successful seeds
  double score_sd = 0.0;
  std::size_t best_seed = 0;        // index into seeds
  bool ok = false;
};

struct GridResult {
  std::vector<GridCell> cells;
  std::vector<FactorModel> models;  // representative (best-seed) model per cell
  std::size_t selected = 0;
  std::optional<std::size_t> best_unconditional;
  std::optional<std::size_t> best_conditional;
};

/// Validation alpha RMSE with the loadings frozen at their training values.
double validation_rmse(const FactorModel& model, const PreparedPanel& data,
                       const MonthRange& valid);

GridResult grid_select(const PreparedPanel& data, const SampleSplit& split,
                       const GridConfig& grid, const TrainConfig& config);

/// True when `a` should be preferred to `b` (lower score, then fewer layers, factors, conditions).
bool prefer_cell(const GridCell& a, const GridCell& b);

struct TestMetrics {
  AlphaStats alphas;
  double loss = 0.0;
};

struct RefitResult {
  FactorModel model;
  TestMetrics test;
};

/// Retrains the selected architecture on train + validation and evaluates once on the test window.
RefitResult refit_and_test(const FactorModel& selected, const PreparedPanel& data,
                           const SampleSplit& split, const TrainConfig& config);

enum class CheckStatus { ok, non_differentiable };

struct GradientCheck {
  CheckStatus status = CheckStatus::ok;
  double max_relative_error = 0.0;
  Eigen::Index parameters = 0;
  Eigen::Index worst_index = -1;
};

/// Central finite differences over every parameter against the analytic gradient.
GradientCheck gradient_check_full(const FactorModel& model, const PreparedPanel& data,
                                  const MonthRange& range, SortMode sort, double temperature);

/// Lossless JSON checkpoint of a trained model.
void save_checkpoint(const FactorModel& model, const std::filesystem::path& path);
FactorModel load_checkpoint(const std::filesystem::path& path);
std::string checkpoint_json(const FactorModel& model);

}  // namespace deepfactor
