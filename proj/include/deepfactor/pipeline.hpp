#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "deepfactor/evaluation.hpp"
#include "deepfactor/kv_config.hpp"
#include "deepfactor/training.hpp"

namespace deepfactor {

/// Everything a train/evaluate run depends on. Built from merged key-values
/// (command-line flags over config file over defaults).
struct RunConfig {
  std::filesystem::path data_dir;
  std::filesystem::path anomalies;             // optional date,a1.. table
  std::vector<std::filesystem::path> holdout;  // optional holdout portfolio tables
  Benchmark benchmark = Benchmark::capm;
  SplitConfig split;
  LoadOptions load;
  TrainConfig train;
  GridConfig grid;

  static RunConfig from_key_values(const KeyValues& kv);
  /// Canonical key-values; includes every default so a run is fully described.
  KeyValues to_key_values() const;
};

/// Keys understood by RunConfig::from_key_values.
const std::vector<std::string>& run_config_keys();

struct LoadedRun {
  PanelDataset normalized;
  SampleSplit split;
  PreparedPanel data;
};

LoadedRun load_run_data(const RunConfig& config);

/// Models that make up the report rows: benchmark, +DL and (optionally) +DL+Cond.
struct RowModels {
  std::string label;
  FactorModel fitted;
  FactorModel refit;
};

struct TrainRun {
  GridResult grid;
  std::vector<RowModels> rows;
  ReportBundle report;
  std::string manifest;  // JSON text
  std::vector<std::string> warnings;
};

/// Grid selection, refit, evaluation and reporting. Writes checkpoints/, report/,
/// run_config.txt and manifest.json under `out_dir`.
TrainRun run_train_pipeline(const RunConfig& config, const std::filesystem::path& out_dir);

/// Rebuilds the report of a finished run from its checkpoints without retraining.
ReportBundle run_evaluate(const std::filesystem::path& run_dir, const std::filesystem::path& out_dir,
                          const std::vector<std::filesystem::path>& extra_holdout = {});

/// Label used for a benchmark row, e.g. "CAPM".
std::string benchmark_label(Benchmark b);

}  // namespace deepfactor
