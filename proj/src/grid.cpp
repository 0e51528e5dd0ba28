#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <mutex>
#include <thread>

#include <fmt/format.h>

#include "deepfactor/errors.hpp"
#include "deepfactor/training.hpp"

namespace deepfactor {

namespace {

constexpr double kScoreTolerance = 1e-12;

struct TaskResult {
  std::optional<FactorModel> model;
  double valid_rmse = std::numeric_limits<double>::quiet_NaN();
  std::string failure;
};

// Runs fn(i) for i in [0, count) on up to `jobs` threads; results are indexed, so
// the outcome does not depend on scheduling.
template <typename Fn>
void parallel_for(std::size_t count, int jobs, Fn fn) {
  const auto workers = static_cast<std::size_t>(std::max(1, jobs));
  if (workers == 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, count); ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace

void GridConfig::validate() const {
  if (layers.empty() || factors.empty() || conditions.empty()) {
    throw UsageError("grid: empty grid");
  }
  for (int l : layers) {
    if (l < 1 || l > 5) throw UsageError(fmt::format("grid: layers must lie in 1..5, got {}", l));
  }
  for (int p : factors) {
    if (p < 1 || p > 5) throw UsageError(fmt::format("grid: factors must lie in 1..5, got {}", p));
  }
  for (int c : conditions) {
    if (c < 0 || c > 3) {
      throw UsageError(fmt::format("grid: conditions must lie in 0..3, got {}", c));
    }
  }
  if (seeds < 1) throw UsageError("grid: seeds must be at least 1");
  if (jobs < 1) throw UsageError("grid: jobs must be at least 1");
}

double validation_rmse(const FactorModel& model, const PreparedPanel& data,
                       const MonthRange& valid) {
  const Matrix e = model_residuals(model, data, valid);
  return alpha_rmse(e.rowwise().mean());
}

bool prefer_cell(const GridCell& a, const GridCell& b) {
  if (a.ok != b.ok) return a.ok;
  const double tol = kScoreTolerance * std::max(std::abs(a.score), std::abs(b.score));
  if (std::abs(a.score - b.score) > tol) return a.score < b.score;
  if (a.arch.layers != b.arch.layers) return a.arch.layers < b.arch.layers;
  if (a.arch.factors != b.arch.factors) return a.arch.factors < b.arch.factors;
  return a.arch.conditions < b.arch.conditions;
}

GridResult grid_select(const PreparedPanel& data, const SampleSplit& split,
                       const GridConfig& grid, const TrainConfig& config) {
  grid.validate();
  if (split.train.empty() || split.valid.empty()) {
    throw UsageError("grid_select: train and validation windows must be non-empty");
  }
  std::vector<ModelArch> archs;
  for (int l : grid.layers) {
    for (int p : grid.factors) {
      for (int c : grid.conditions) {
        ModelArch a;
        a.layers = l;
        a.factors = p;
        a.conditions = c;
        archs.push_back(a);
      }
    }
  }
  const auto seeds = static_cast<std::size_t>(grid.seeds);
  std::vector<TaskResult> results(archs.size() * seeds);
  parallel_for(results.size(), grid.jobs, [&](std::size_t i) {
    TrainConfig cfg = config;
    cfg.seed = config.seed + i % seeds;
    TaskResult& out = results[i];
    try {
      FactorModel m = train(data, archs[i / seeds], split.train, cfg);
      out.valid_rmse = validation_rmse(m, data, split.valid);
      out.model = std::move(m);
    } catch (const NumericalError& e) {
      out.failure = e.what();
    } catch (const DataError& e) {
      out.failure = e.what();
    }
  });

  GridResult out;
  for (std::size_t c = 0; c < archs.size(); ++c) {
    GridCell cell;
    cell.arch = archs[c];
    std::vector<double> good;
    for (std::size_t s = 0; s < seeds; ++s) {
      TaskResult& r = results[c * seeds + s];
      cell.seeds.push_back(config.seed + s);
      cell.valid_rmse.push_back(r.valid_rmse);
      cell.train_loss.push_back(r.model ? r.model->final_loss
                                        : std::numeric_limits<double>::quiet_NaN());
      if (!r.failure.empty()) {
        cell.failures.push_back(fmt::format("seed {}: {}", config.seed + s, r.failure));
      }
      if (r.model && std::isfinite(r.valid_rmse)) {
        good.push_back(r.valid_rmse);
        if (!cell.ok || r.valid_rmse < cell.valid_rmse[cell.best_seed]) cell.best_seed = s;
        cell.ok = true;
      }
    }
    if (cell.ok) {
      const double m = mean(good);
      double ss = 0.0;
      for (double v : good) ss += (v - m) * (v - m);
      cell.score = m;
      cell.score_sd = good.size() > 1 ? std::sqrt(ss / static_cast<double>(good.size() - 1)) : 0.0;
      out.models.push_back(std::move(*results[c * seeds + cell.best_seed].model));
    } else {
      cell.score = std::numeric_limits<double>::infinity();
      out.models.emplace_back();
    }
    out.cells.push_back(std::move(cell));
  }

  std::optional<std::size_t> best;
  for (std::size_t c = 0; c < out.cells.size(); ++c) {
    const GridCell& cell = out.cells[c];
    if (!cell.ok) continue;
    if (!best || prefer_cell(cell, out.cells[*best])) best = c;
    auto& slot = cell.arch.conditions == 0 ? out.best_unconditional : out.best_conditional;
    if (!slot || prefer_cell(cell, out.cells[*slot])) slot = c;
  }
  if (!best) {
    throw NumericalError("grid_select: every grid cell failed");
  }
  out.selected = *best;
  return out;
}

RefitResult refit_and_test(const FactorModel& selected, const PreparedPanel& data,
                           const SampleSplit& split, const TrainConfig& config) {
  if (split.test.empty()) throw UsageError("refit_and_test: empty test window");
  TrainConfig cfg = config;
  cfg.seed = selected.seed;
  cfg.tau = selected.tau;
  cfg.ensemble = selected.ensemble;
  RefitResult out{train(data, selected.arch, split.train_valid(), cfg), {}};
  const Matrix e = model_residuals(out.model, data, split.test);
  out.test.alphas = alpha_stats(e);
  out.test.loss = e.squaredNorm() / static_cast<double>(e.size());
  return out;
}

}  // namespace deepfactor
