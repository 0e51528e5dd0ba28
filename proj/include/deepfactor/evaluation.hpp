#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "deepfactor/training.hpp"

namespace deepfactor {

struct BaselineResult {
  Matrix residuals;  // N x |eval|, realized minus expanding mean
  AlphaStats stats;
};

/// Expanding historical mean of each asset from `history_begin` through t - 1, for t in `eval`.
/// `returns` is N x T over the full sample.
BaselineResult historical_average_baseline(const Matrix& returns, std::size_t history_begin,
                                           const MonthRange& eval, AccessLog* log = nullptr);

struct SplitScore {
  AlphaStats alphas;
  double r2 = 0.0;
  double baseline_rmse = 0.0;  // historical average (0 for the in-sample window)
};

/// One model row: in-sample, validation and test performance.
struct EvalRow {
  std::string label;  // e.g. "CAPM", "CAPM+DL", "CAPM+DL+Cond"
  std::string cell;   // architecture tag, empty for the benchmark
  std::uint64_t seed = 0;
  SplitScore ins;
  SplitScore vld;
  SplitScore test;
};

/// `fitted` carries training-window loadings (INS, VLD); `refit` is trained on train + validation (Test).
EvalRow evaluate_splits(const std::string& label, const FactorModel& fitted,
                        const FactorModel& refit, const PreparedPanel& data,
                        const SampleSplit& split);

/// 1 - SSE / sum of squared returns over the window.
double in_sample_r2(const Matrix& returns, const Matrix& residuals);

struct SignificanceCount {
  int count = 0;
  Vector tstat;                        // NaN for excluded anomalies
  std::vector<std::size_t> excluded;   // anomalies with fewer than two usable months
};

/// Loadings of each anomaly (rows of N_a x T `anomalies`) on `factors` (k x T) by
/// least squares over `fit`; t-statistics of the mean residual over `eval`.
SignificanceCount count_significant(const Matrix& anomalies, const Matrix& factors,
                                    const MonthRange& fit, const MonthRange& eval,
                                    double threshold = kSignificanceThreshold);

/// Hard-sort deep factors stacked over benchmark factors, (P + D) x T for the whole sample.
Matrix model_factor_panel(const FactorModel& model, const PreparedPanel& data);

struct SignificanceRow {
  std::string label;
  int anomalies = 0;
  int ins = 0;
  int vld = 0;
  int test = 0;
};

SignificanceRow significance_row(const std::string& label, const FactorModel& fitted,
                                 const FactorModel& refit, const PreparedPanel& data,
                                 const SampleSplit& split, const Matrix& anomalies);

struct DissectScore {
  double vld_r2 = 0.0;
  double test_r2 = 0.0;
};

struct DissectRow {
  std::string label;
  std::vector<DissectScore> sets;  // one per holdout set
};

/// Holdout portfolios (N_h x T) priced by the frozen factors with OLS loadings: training
/// loadings for VLD, train + validation loadings for Test.
DissectScore dissect_holdout(const FactorModel& fitted, const FactorModel& refit,
                             const PreparedPanel& data, const SampleSplit& split,
                             const Matrix& holdout);

/// Holdout columns that coincide with a training portfolio (within 1e-12 every month).
std::vector<std::string> holdout_overlap(const Matrix& holdout,
                                         const std::vector<std::string>& holdout_names,
                                         const PreparedPanel& data);

struct LossCurve {
  std::string model;
  std::vector<double> loss;
};

struct ReportBundle {
  std::vector<EvalRow> rows;
  std::vector<SignificanceRow> significance;
  std::vector<std::string> holdout_sets;
  std::vector<DissectRow> dissect;
  std::vector<LossCurve> curves;
  std::vector<std::pair<std::string, double>> reference_losses;  // constant OLS benchmark lines
  std::vector<std::string> asset_names;
  std::vector<std::pair<std::string, std::string>> notes;  // key: value lines for the summary
};

/// Writes summary.txt, table_oos.csv, table_sig.csv, table_dissect.csv, loss_curves.csv
/// and alphas.csv into `dir`.
void render_report(const ReportBundle& report, const std::filesystem::path& dir);

/// Parses table_oos.csv back into label, cell and the three R^2 columns.
struct OosRecord {
  std::string label;
  std::string cell;
  double ins_r2 = 0.0;
  double vld_r2 = 0.0;
  double test_r2 = 0.0;
  double vld_rmse = 0.0;
  double test_rmse = 0.0;
  double baseline_vld_rmse = 0.0;
  double baseline_test_rmse = 0.0;
};

std::vector<OosRecord> load_oos_table(const std::filesystem::path& path);

struct LossPoint {
  std::string model;
  int epoch = 0;
  double loss = 0.0;
};

std::vector<LossPoint> load_loss_curves(const std::filesystem::path& path);

}  // namespace deepfactor
