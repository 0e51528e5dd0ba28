#include "deepfactor/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "deepfactor/errors.hpp"
#include "deepfactor/network.hpp"
#include "deepfactor/sorting.hpp"
#include "text_table.hpp"

namespace deepfactor {

namespace {

constexpr int kGrid = 5;

// Quintile 0..4 of each member by ascending value.
std::vector<int> quintiles(const std::vector<double>& values) {
  const auto ranks = rank_ascending(values);
  const auto m = static_cast<int>(values.size());
  std::vector<int> q(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) q[i] = kGrid * (ranks[i] - 1) / m;
  return q;
}

struct GridAssignment {
  std::vector<int> outer;  // quintile on the sorting characteristic
  std::vector<int> inner;  // size quintile within the outer bucket
};

GridAssignment sequential_grid(const std::vector<double>& sort_values,
                               const std::vector<double>& size) {
  GridAssignment out;
  out.outer = quintiles(sort_values);
  out.inner.assign(sort_values.size(), 0);
  for (int q = 0; q < kGrid; ++q) {
    std::vector<std::size_t> members;
    std::vector<double> sizes;
    for (std::size_t i = 0; i < sort_values.size(); ++i) {
      if (out.outer[i] == q) {
        members.push_back(i);
        sizes.push_back(size[i]);
      }
    }
    if (members.empty()) continue;
    const auto inner = quintiles(sizes);
    for (std::size_t i = 0; i < members.size(); ++i) out.inner[members[i]] = inner[i];
  }
  return out;
}

// Value-weighted returns of the 25 cells; cell index = outer * 5 + inner.
Vector grid_returns(const GridAssignment& grid, const std::vector<double>& me,
                    const std::vector<double>& ret) {
  Vector num = Vector::Zero(kGrid * kGrid);
  Vector den = Vector::Zero(kGrid * kGrid);
  for (std::size_t i = 0; i < ret.size(); ++i) {
    const int c = grid.outer[i] * kGrid + grid.inner[i];
    num[c] += me[i] * ret[i];
    den[c] += me[i];
  }
  for (int c = 0; c < kGrid * kGrid; ++c) {
    if (!(den[c] > 0.0)) {
      throw NumericalError("simulate_market: empty test-portfolio cell");
    }
  }
  return num.cwiseQuotient(den);
}

Vector grid_average(const GridAssignment& grid, const std::vector<double>& me,
                    const std::vector<double>& x) {
  return grid_returns(grid, me, x);
}

std::vector<std::string> grid_names(const std::string& prefix) {
  std::vector<std::string> out;
  for (int q = 1; q <= kGrid; ++q) {
    for (int s = 1; s <= kGrid; ++s) out.push_back(fmt::format("{}_{}{}", prefix, q, s));
  }
  return out;
}

// Long-short value-weighted factor with legs of 30% on `score`.
double long_short(const std::vector<double>& score, const std::vector<double>& me,
                  const std::vector<double>& ret) {
  SortSpec spec;
  spec.tau = 0.7;
  const auto m = static_cast<Eigen::Index>(score.size());
  const Vector y = Eigen::Map<const Vector>(score.data(), m);
  const Vector v = Eigen::Map<const Vector>(me.data(), m);
  const Vector r = Eigen::Map<const Vector>(ret.data(), m);
  const auto membership = sort_hard(y, spec, Mask::Constant(m, true));
  return weights_h2(membership.u, v).dot(r);
}

}  // namespace

void SimConfig::validate() const {
  if (firms <= 0 || months <= 0 || chars <= 0 || macros < 0 || true_factors <= 0) {
    throw UsageError("simulate: firms, months, chars and true_factors must be positive");
  }
  if (true_factors > chars) {
    throw UsageError("simulate: true_factors cannot exceed chars");
  }
  if (noise < 0.0 || factor_vol <= 0.0 || market_vol <= 0.0 || size_dispersion < 0.0) {
    throw UsageError("simulate: volatilities must be positive (noise may be zero)");
  }
  if (!(persistence >= 0.0 && persistence < 1.0) || !(missing >= 0.0 && missing < 1.0) ||
      !(entry >= 0.0 && entry < 1.0)) {
    throw UsageError("simulate: persistence, missing and entry must lie in [0, 1)");
  }
  const double listed = std::floor(static_cast<double>(firms) * (1.0 - entry));
  if (listed < kGrid * kGrid) {
    throw UsageError("simulate: need at least 25 firms listed every month for the 5x5 grids");
  }
}

SimConfig SimConfig::from_key_values(const KeyValues& kv) {
  SimConfig c;
  const KeyValues known = c.to_key_values();
  for (const auto& [key, value] : kv) {
    if (known.count(key) == 0) throw UsageError(fmt::format("unknown simulation key '{}'", key));
  }
  c.firms = kv_int(kv, "firms", c.firms);
  c.months = kv_int(kv, "months", c.months);
  c.chars = kv_int(kv, "chars", c.chars);
  c.macros = kv_int(kv, "macros", c.macros);
  c.true_factors = kv_int(kv, "true_factors", c.true_factors);
  c.noise = kv_double(kv, "noise", c.noise);
  c.seed = kv_u64(kv, "seed", c.seed);
  c.factor_vol = kv_double(kv, "factor_vol", c.factor_vol);
  c.factor_sharpe = kv_double(kv, "factor_sharpe", c.factor_sharpe);
  c.market_vol = kv_double(kv, "market_vol", c.market_vol);
  c.market_premium = kv_double(kv, "market_premium", c.market_premium);
  c.persistence = kv_double(kv, "persistence", c.persistence);
  c.missing = kv_double(kv, "missing", c.missing);
  c.entry = kv_double(kv, "entry", c.entry);
  c.size_dispersion = kv_double(kv, "size_dispersion", c.size_dispersion);
  if (kv.count("start") != 0) c.start = YearMonth::parse(kv.at("start"));
  c.validate();
  return c;
}

KeyValues SimConfig::to_key_values() const {
  using detail::format_double;
  return {
      {"firms", std::to_string(firms)},
      {"months", std::to_string(months)},
      {"chars", std::to_string(chars)},
      {"macros", std::to_string(macros)},
      {"true_factors", std::to_string(true_factors)},
      {"noise", format_double(noise)},
      {"seed", std::to_string(seed)},
      {"factor_vol", format_double(factor_vol)},
      {"factor_sharpe", format_double(factor_sharpe)},
      {"market_vol", format_double(market_vol)},
      {"market_premium", format_double(market_premium)},
      {"persistence", format_double(persistence)},
      {"missing", format_double(missing)},
      {"entry", format_double(entry)},
      {"size_dispersion", format_double(size_dispersion)},
      {"start", start.str()},
  };
}

SimConfig read_sim_config(const std::filesystem::path& path) {
  return SimConfig::from_key_values(read_key_values(path));
}

SimulatedMarket simulate_market(const SimConfig& config, std::uint64_t seed) {
  config.validate();
  const int m = config.firms;
  const int t_count = config.months;
  const int k_count = config.chars;
  const int p_count = config.true_factors;
  const int e_count = config.macros;
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const double phi = config.persistence;
  const double innov = std::sqrt(1.0 - phi * phi);

  std::vector<std::vector<double>> latent(m, std::vector<double>(k_count));
  std::vector<double> size_mean(m);
  std::vector<double> size_dev(m);
  std::vector<int> listing(m, 0);
  for (int j = 0; j < m; ++j) {
    for (auto& x : latent[j]) x = normal(rng);
    size_mean[j] = config.size_dispersion * normal(rng);
    size_dev[j] = 0.5 * config.size_dispersion * normal(rng);
  }
  const int late = static_cast<int>(std::floor(config.entry * m));
  const int latest_entry = std::max(1, t_count / 2);
  for (int j = m - late; j < m; ++j) {
    listing[j] = 1 + static_cast<int>(unit(rng) * latest_entry);
  }
  std::vector<double> macro_state(e_count);
  for (auto& x : macro_state) x = normal(rng);

  SimulatedMarket out;
  PanelDataset& data = out.data;
  for (int k = 0; k < k_count; ++k) data.char_names.push_back(fmt::format("c{}", k + 1));
  for (int e = 0; e < e_count; ++e) data.macro_names.push_back(fmt::format("x{}", e + 1));
  data.factor_names = {"mkt", "smb", "hml", "umd"};
  for (int k = 0; k < p_count; ++k) {
    const auto names = grid_names(fmt::format("p{}", k + 1));
    data.portfolio_names.insert(data.portfolio_names.end(), names.begin(), names.end());
  }
  out.holdout_names = grid_names("h");
  const int holdout_char = p_count < k_count ? p_count : k_count - 1;
  const int hml_char = k_count - 1;
  const int umd_char = std::max(0, k_count - 2);

  const auto n_assets = static_cast<Eigen::Index>(data.portfolio_names.size());
  data.macro.resize(t_count, e_count);
  data.macro_filled.setConstant(t_count, e_count, false);
  data.factors.resize(t_count, 4);
  data.portfolios.resize(t_count, n_assets);
  out.holdout.resize(t_count, kGrid * kGrid);
  out.truth.planted.resize(t_count, p_count);
  out.truth.market.resize(t_count);
  out.truth.planted_loadings = Matrix::Zero(n_assets, p_count);
  out.truth.market_betas = Vector::Zero(n_assets);

  const double factor_mean = config.factor_sharpe * config.factor_vol;
  YearMonth date = config.start;
  for (int t = 0; t < t_count; ++t, date = date.next()) {
    data.dates.push_back(date);
    for (int e = 0; e < e_count; ++e) data.macro(t, e) = macro_state[static_cast<std::size_t>(e)];

    std::vector<int> active;
    for (int j = 0; j < m; ++j) {
      if (listing[j] <= t) active.push_back(j);
    }
    const auto ma = active.size();
    std::vector<double> me(ma);
    for (std::size_t a = 0; a < ma; ++a) {
      const int j = active[a];
      me[a] = 100.0 * std::exp(size_mean[j] + size_dev[j]);
    }
    auto char_column = [&](int k) {
      std::vector<double> v(ma);
      for (std::size_t a = 0; a < ma; ++a) v[a] = latent[active[a]][k];
      return v;
    };

    const double mkt = config.market_premium + config.market_vol * normal(rng);
    std::vector<double> psi(p_count);
    for (auto& x : psi) x = factor_mean + config.factor_vol * normal(rng);
    out.truth.market[t] = mkt;
    for (int k = 0; k < p_count; ++k) out.truth.planted(t, k) = psi[k];

    std::vector<GridAssignment> grids;
    for (int k = 0; k < p_count; ++k) grids.push_back(sequential_grid(char_column(k), me));
    const GridAssignment holdout_grid = sequential_grid(char_column(holdout_char), me);

    std::vector<double> beta(ma);
    std::vector<std::vector<double>> load(p_count, std::vector<double>(ma));
    std::vector<double> ret(ma);
    for (std::size_t a = 0; a < ma; ++a) {
      beta[a] = 1.2 - 0.1 * grids[0].inner[a];
      double r = beta[a] * mkt;
      for (int k = 0; k < p_count; ++k) {
        load[k][a] = 0.5 * (grids[k].outer[a] - 2);
        r += load[k][a] * psi[k];
      }
      ret[a] = r + config.noise * normal(rng);
    }

    for (int k = 0; k < p_count; ++k) {
      const Vector cells = grid_returns(grids[k], me, ret);
      data.portfolios.block(t, k * kGrid * kGrid, 1, kGrid * kGrid) = cells.transpose();
      out.truth.market_betas.segment(k * kGrid * kGrid, kGrid * kGrid) +=
          grid_average(grids[k], me, beta) / t_count;
      for (int f = 0; f < p_count; ++f) {
        out.truth.planted_loadings.block(k * kGrid * kGrid, f, kGrid * kGrid, 1) +=
            grid_average(grids[k], me, load[f]) / t_count;
      }
    }
    out.holdout.row(t) = grid_returns(holdout_grid, me, ret).transpose();

    std::vector<double> small(ma);
    for (std::size_t a = 0; a < ma; ++a) small[a] = -std::log(me[a]);
    data.factors(t, 0) = mkt;
    data.factors(t, 1) = long_short(small, me, ret);
    data.factors(t, 2) = long_short(char_column(hml_char), me, ret);
    data.factors(t, 3) = long_short(char_column(umd_char), me, ret);

    CrossSection cs;
    cs.ret.resize(static_cast<Eigen::Index>(ma));
    cs.me.resize(static_cast<Eigen::Index>(ma));
    cs.chars.resize(k_count, static_cast<Eigen::Index>(ma));
    cs.observed.resize(k_count, static_cast<Eigen::Index>(ma));
    for (std::size_t a = 0; a < ma; ++a) {
      const auto c = static_cast<Eigen::Index>(a);
      cs.firm_ids.push_back(fmt::format("F{:04d}", active[a] + 1));
      cs.ret[c] = ret[a];
      cs.me[c] = me[a];
      for (int k = 0; k < k_count; ++k) {
        const bool seen = unit(rng) >= config.missing;
        cs.observed(k, c) = seen;
        cs.chars(k, c) = seen ? latent[active[a]][k] : std::numeric_limits<double>::quiet_NaN();
      }
    }
    data.panel.push_back(std::move(cs));

    // Advance the lagged states to the end of this month.
    for (int j = 0; j < m; ++j) {
      for (auto& x : latent[j]) x = phi * x + innov * normal(rng);
      size_dev[j] = phi * size_dev[j] + innov * 0.5 * config.size_dispersion * normal(rng);
    }
    for (auto& x : macro_state) x = 0.9 * x + std::sqrt(1.0 - 0.81) * normal(rng);
  }
  data.validate();
  return out;
}

std::vector<std::filesystem::path> write_simulation(const SimulatedMarket& market,
                                                    const std::filesystem::path& dir,
                                                    bool with_holdout) {
  std::filesystem::create_directories(dir);
  const auto paths = PanelPaths::in_directory(dir);
  write_panel(market.data, paths);
  std::vector<std::string> truth_names = {"mkt"};
  for (Eigen::Index k = 0; k < market.truth.planted.cols(); ++k) {
    truth_names.push_back(fmt::format("psi{}", k + 1));
  }
  Matrix truth(market.truth.planted.rows(), truth_names.size());
  truth.col(0) = market.truth.market;
  truth.rightCols(market.truth.planted.cols()) = market.truth.planted;
  std::vector<std::filesystem::path> written = {paths.firms, paths.macro, paths.factors,
                                                paths.portfolios, dir / "truth.csv"};
  write_series_table(dir / "truth.csv", market.data.dates, truth_names, truth);
  if (with_holdout) {
    write_series_table(dir / "holdout.csv", market.data.dates, market.holdout_names,
                       market.holdout);
    written.push_back(dir / "holdout.csv");
  }
  return written;
}

PanelDataset tiny_dataset(int firms, int assets, int months, int chars, int macros,
                          int benchmarks, std::uint64_t seed) {
  if (firms < 2 || assets < 1 || months < 2 || chars < 1 || macros < 0 || benchmarks < 1) {
    throw UsageError("tiny_dataset: invalid dimensions");
  }
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  PanelDataset data;
  for (int k = 0; k < chars; ++k) data.char_names.push_back(fmt::format("c{}", k + 1));
  for (int e = 0; e < macros; ++e) data.macro_names.push_back(fmt::format("x{}", e + 1));
  for (int d = 0; d < benchmarks; ++d) data.factor_names.push_back(fmt::format("g{}", d + 1));
  for (int i = 0; i < assets; ++i) data.portfolio_names.push_back(fmt::format("R{}", i + 1));
  data.macro.resize(months, macros);
  data.macro_filled.setConstant(months, macros, false);
  data.factors.resize(months, benchmarks);
  data.portfolios.resize(months, assets);
  YearMonth date{2000, 1};
  for (int t = 0; t < months; ++t, date = date.next()) {
    data.dates.push_back(date);
    CrossSection cs;
    cs.ret.resize(firms);
    cs.me.resize(firms);
    cs.chars.resize(chars, firms);
    cs.observed.setConstant(chars, firms, true);
    for (int j = 0; j < firms; ++j) {
      cs.firm_ids.push_back(fmt::format("F{}", j + 1));
      cs.ret[j] = 0.05 * normal(rng);
      cs.me[j] = std::exp(normal(rng));
      for (int k = 0; k < chars; ++k) cs.chars(k, j) = normal(rng);
    }
    data.panel.push_back(std::move(cs));
    for (int e = 0; e < macros; ++e) data.macro(t, e) = normal(rng);
    for (int d = 0; d < benchmarks; ++d) data.factors(t, d) = 0.04 * normal(rng);
    for (int i = 0; i < assets; ++i) data.portfolios(t, i) = 0.05 * normal(rng);
  }
  data.validate();
  return rank_normalize(data);
}

}  // namespace deepfactor
