#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "deepfactor/kv_config.hpp"
#include "deepfactor/panel.hpp"

namespace deepfactor {

/// Synthetic market with characteristic-driven planted long-short factors.
///
/// Each month every listed firm earns
///   r = beta * mkt + sum_k b_k * psi_k + noise * eps,
/// where b_k = (q_k - 2) / 2 is set by the firm's lagged quintile on characteristic k
/// (k < true_factors) and beta = 1.2 - 0.1 * s falls with the firm's size quintile s
/// inside its characteristic-1 quintile. Test portfolios are value-weighted 5x5 grids:
/// quintile on characteristic k, then size quintile within it.
struct SimConfig {
  int firms = 200;
  int months = 360;
  int chars = 5;
  int macros = 2;
  int true_factors = 1;
  double noise = 0.08;  // idiosyncratic monthly volatility
  std::uint64_t seed = 1;

  double factor_vol = 0.03;
  double factor_sharpe = 0.3;  // monthly
  double market_vol = 0.045;
  double market_premium = 0.006;
  double persistence = 0.95;   // AR(1) coefficient of the latent characteristics
  double missing = 0.02;       // probability a characteristic is unobserved
  double entry = 0.1;          // share of firms listing after the sample start
  double size_dispersion = 0.5;
  YearMonth start{1975, 1};

  void validate() const;
  static SimConfig from_key_values(const KeyValues& kv);
  KeyValues to_key_values() const;
};

SimConfig read_sim_config(const std::filesystem::path& path);

struct GroundTruth {
  Matrix planted;          // T x true_factors, planted factor returns
  Vector market;           // T, market factor
  Matrix planted_loadings; // N x true_factors, time-average portfolio loadings
  Vector market_betas;     // N, time-average portfolio market betas
};

struct SimulatedMarket {
  PanelDataset data;  // raw (not rank-normalized) characteristics
  GroundTruth truth;
  Matrix holdout;     // T x 25, grid on a characteristic that drives no planted factor
  std::vector<std::string> holdout_names;
};

SimulatedMarket simulate_market(const SimConfig& config, std::uint64_t seed);

/// Writes firms, macro, factors, portfolios and truth files (plus holdout.csv on request).
std::vector<std::filesystem::path> write_simulation(const SimulatedMarket& market,
                                                    const std::filesystem::path& dir,
                                                    bool with_holdout = false);

/// Tiny random panel for gradient checks: M firms, N portfolios, T months, K chars, E macros.
PanelDataset tiny_dataset(int firms, int assets, int months, int chars, int macros,
                          int benchmarks, std::uint64_t seed);

}  // namespace deepfactor
