#pragma once

#include <compare>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "deepfactor/core_math.hpp"

namespace deepfactor {

/// Calendar month, printed and parsed as `YYYY-MM`.
struct YearMonth {
  int year = 1970;
  int month = 1;

  static YearMonth parse(std::string_view text);
  std::string str() const;
  int ordinal() const { return year * 12 + (month - 1); }
  YearMonth next() const;

  friend auto operator<=>(const YearMonth&, const YearMonth&) = default;
};

/// One month of the firm panel. Characteristics and market equity are already
/// lagged by one month relative to `ret`.
struct CrossSection {
  std::vector<std::string> firm_ids;
  Vector ret;            // excess return over the month
  Vector me;             // lagged market equity, > 0
  Matrix chars;          // K x M lagged characteristics, NaN when missing
  MaskMatrix observed;   // K x M, false where missing (or masked after normalization)

  Eigen::Index firms() const { return ret.size(); }
  /// Firms with every characteristic observed; only these take part in sorting.
  Mask eligible() const;
};

struct PanelDataset {
  std::vector<YearMonth> dates;
  std::vector<std::string> char_names;
  std::vector<std::string> macro_names;
  std::vector<std::string> factor_names;
  std::vector<std::string> portfolio_names;

  std::vector<CrossSection> panel;  // one per month
  Matrix macro;                     // T x E, lagged predictors
  MaskMatrix macro_filled;          // T x E, true where forward-filled at load
  Matrix factors;                   // T x D benchmark factor returns
  Matrix portfolios;                // T x N test portfolio excess returns
  bool normalized = false;

  std::size_t months() const { return dates.size(); }
  Eigen::Index chars() const { return static_cast<Eigen::Index>(char_names.size()); }
  Eigen::Index macros() const { return static_cast<Eigen::Index>(macro_names.size()); }
  Eigen::Index benchmarks() const { return static_cast<Eigen::Index>(factor_names.size()); }
  Eigen::Index assets() const { return static_cast<Eigen::Index>(portfolio_names.size()); }

  /// Test-portfolio returns as an N x T matrix.
  Matrix returns_by_asset() const { return portfolios.transpose(); }

  void validate() const;
};

struct PanelPaths {
  std::filesystem::path firms;
  std::filesystem::path macro;
  std::filesystem::path factors;
  std::filesystem::path portfolios;

  /// Conventional file names inside a dataset directory.
  static PanelPaths in_directory(const std::filesystem::path& dir);
};

struct LoadOptions {
  int min_history = 12;             // firms with fewer monthly rows are dropped
  std::size_t universe_cap = 3000;  // largest firms by lagged market equity per month
};

PanelDataset load_panel(const PanelPaths& paths, const LoadOptions& options = {});

/// Writes the four dataset files in canonical form (shortest round-trip numbers).
void write_panel(const PanelDataset& data, const PanelPaths& paths);

/// Reads a `date,c1..cN` table (holdout portfolios, anomalies) aligned to `dates`.
Matrix load_series_table(const std::filesystem::path& path, const std::vector<YearMonth>& dates,
                         std::vector<std::string>* names = nullptr);
void write_series_table(const std::filesystem::path& path, const std::vector<YearMonth>& dates,
                        const std::vector<std::string>& names, const Matrix& values);

/// Cross-sectional rank map of every characteristic to [-1, 1]; missing -> 0 and masked.
PanelDataset rank_normalize(const PanelDataset& data);

/// Rank map of one cross-section; entries with fewer than two observations are masked.
void rank_normalize_row(Eigen::Ref<Eigen::RowVectorXd> values,
                        Eigen::Ref<Eigen::Array<bool, 1, Eigen::Dynamic>> observed);

/// Train-sample z-scoring of macro predictors, clipped to [-1, 1].
struct MacroScaler {
  Vector mean;
  Vector sd;

  static MacroScaler fit(const Matrix& macro, std::size_t begin, std::size_t end);
  Vector apply(const Vector& raw) const;
};

struct InputTensor {
  Matrix z;          // K0 x M
  MaskMatrix mask;   // K0 x M, false where the entry derives from a missing characteristic
};

inline Eigen::Index input_rows(Eigen::Index chars, Eigen::Index macros) {
  return chars + macros + chars * macros;
}

/// Rows: K characteristics, E macro predictors, then z_k * x_e at row K + E + e*K + k.
InputTensor build_input(const Matrix& chars, const MaskMatrix& observed, const Vector& macro);

struct MonthRange {
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive

  std::size_t size() const { return end - begin; }
  bool empty() const { return end <= begin; }
  bool contains(std::size_t t) const { return t >= begin && t < end; }
};

struct SampleSplit {
  MonthRange train;
  MonthRange valid;
  MonthRange test;

  /// Train and validation together, used when refitting before the test.
  MonthRange train_valid() const { return {train.begin, valid.end}; }
};

struct SplitConfig {
  // Fractions are used unless both explicit boundaries are set.
  double train_fraction = 0.6;
  double valid_fraction = 0.2;
  std::optional<YearMonth> train_end;   // inclusive
  std::optional<YearMonth> valid_end;   // inclusive
  std::optional<YearMonth> test_start;  // must be the month after valid_end when given

  static SplitConfig calendar(YearMonth train_end, YearMonth valid_end);
};

SampleSplit split(const std::vector<YearMonth>& dates, const SplitConfig& config);

}  // namespace deepfactor
