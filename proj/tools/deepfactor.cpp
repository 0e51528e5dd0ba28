// Command-line driver: simulate, train, evaluate, dissect, gradcheck.

#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "deepfactor/allocator.hpp"
#include "deepfactor/errors.hpp"
#include "deepfactor/pipeline.hpp"
#include "deepfactor/simulate.hpp"

namespace fs = std::filesystem;
using namespace deepfactor;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

// String-valued flags that map one-to-one onto configuration keys.
struct FlagSet {
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;

  void add(CLI::App& app, const std::string& flag, const std::string& key, const std::string& help) {
    options[key] = app.add_option(flag, values[key], help);
  }

  // Flags given on the command line win over the config file.
  KeyValues merge(const std::string& config_path) const {
    KeyValues kv = config_path.empty() ? KeyValues{} : read_key_values(config_path);
    for (const auto& [key, opt] : options) {
      if (opt->count() > 0) kv[key] = values.at(key);
    }
    return kv;
  }
};

int run_simulate(const FlagSet& flags, const std::string& config, const std::string& out,
                 bool with_holdout) {
  const SimConfig sim = SimConfig::from_key_values(flags.merge(config));
  const SimulatedMarket market = simulate_market(sim, sim.seed);
  for (const auto& p : write_simulation(market, out, with_holdout)) fmt::print("wrote {}\n", p.string());
  return kOk;
}

int run_train(const FlagSet& flags, const std::string& config, const std::string& out) {
  const RunConfig cfg = RunConfig::from_key_values(flags.merge(config));
  const TrainRun run = run_train_pipeline(cfg, out);
  const GridCell& sel = run.grid.cells[run.grid.selected];
  fmt::print("selected {} (validation alpha RMSE {:.6g})\n", sel.arch.tag(), sel.score);
  for (const auto& r : run.report.rows) {
    fmt::print("{:<16} INS {:>8.4f}  VLD {:>8.4f}  Test {:>8.4f}\n", r.label, r.ins.r2, r.vld.r2, r.test.r2);
  }
  for (const auto& w : run.warnings) fmt::print(stderr, "warning: {}\n", w);
  fmt::print("outputs in {}\n", out);
  return kOk;
}

int run_report(const std::string& run_dir, std::string out, const std::vector<std::string>& holdout) {
  if (out.empty()) out = (fs::path(run_dir) / "report").string();
  std::vector<fs::path> extra(holdout.begin(), holdout.end());
  for (const auto& h : extra) {
    if (!fs::exists(h)) throw UsageError(fmt::format("holdout file {} does not exist", h.string()));
  }
  const ReportBundle report = run_evaluate(run_dir, out, extra);
  for (const auto& r : report.rows) {
    fmt::print("{:<16} INS {:>8.4f}  VLD {:>8.4f}  Test {:>8.4f}\n", r.label, r.ins.r2, r.vld.r2, r.test.r2);
  }
  for (const auto& d : report.dissect) {
    for (std::size_t i = 0; i < d.sets.size(); ++i) {
      fmt::print("{:<16} {:<12} VLD {:>8.4f}  Test {:>8.4f}\n", d.label, report.holdout_sets[i],
                 d.sets[i].vld_r2, d.sets[i].test_r2);
    }
  }
  for (const auto& [key, value] : report.notes) {
    if (key == "warning") fmt::print(stderr, "warning: {}\n", value);
  }
  fmt::print("report in {}\n", out);
  return kOk;
}

struct GradcheckOptions {
  int layers = 2;
  std::string hidden = "8,4";
  int factors = 1;
  int conditions = 0;
  std::string activation = "tanh";
  std::string sort = "soft";
  double temperature = 1.0;
  int firms = 8;
  int assets = 3;
  int months = 12;
  int chars = 3;
  int macros = 1;
  std::uint64_t seed = 1;
  double tolerance = 1e-3;
};

int run_gradcheck(const GradcheckOptions& o) {
  ModelArch arch;
  arch.layers = o.layers;
  arch.factors = o.factors;
  arch.conditions = o.conditions;
  arch.activation = parse_activation(o.activation);
  if (o.layers > 0 && !o.hidden.empty()) {
    for (auto f : CLI::detail::split(o.hidden, ',')) arch.hidden.push_back(std::stoi(f));
  }
  SortMode sort = SortMode::soft;
  if (o.sort == "hard") sort = SortMode::hard;
  else if (o.sort == "straight_through") sort = SortMode::straight_through;
  else if (o.sort != "soft") throw UsageError(fmt::format("unknown sort mode '{}'", o.sort));

  const PanelDataset tiny = tiny_dataset(o.firms, o.assets, o.months, o.chars, o.macros, 1, o.seed);
  const MacroScaler scaler = MacroScaler::fit(tiny.macro, 0, tiny.months());
  const PreparedPanel data(tiny, scaler, Benchmark::capm);
  const MonthRange all{0, data.months()};
  TrainConfig cfg;
  cfg.seed = o.seed;
  cfg.batch_months = 1;
  FactorModel model = initial_model(data, arch, all, cfg);
  // Random head so every parameter carries gradient.
  Rng rng(o.seed + 1);
  std::normal_distribution<double> normal(0.0, 0.5);
  Vector theta = pack_parameters(model);
  const Eigen::Index net = model.deep_factors() > 0 ? model.net.parameter_count() : 0;
  for (Eigen::Index i = net; i < theta.size(); ++i) theta[i] += normal(rng);
  unpack_parameters(theta, model);

  const GradientCheck check = gradient_check_full(model, data, all, sort, o.temperature);
  if (check.status == CheckStatus::non_differentiable) {
    fmt::print("status non-differentiable ({} sort); check skipped\n", o.sort);
    return kOk;
  }
  fmt::print("parameters {}  max relative error {:.3e} (index {})\n", check.parameters,
             check.max_relative_error, check.worst_index);
  if (!(check.max_relative_error <= o.tolerance)) {
    fmt::print(stderr, "gradient check failed: {:.3e} > {:.1e}\n", check.max_relative_error, o.tolerance);
    return kNumerical;
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Deep characteristic-sorted factor models: simulate, train and evaluate"};
  app.require_subcommand(1);

  std::string config;
  std::string out;
  bool with_holdout = false;
  std::string run_dir;
  std::vector<std::string> holdout;

  auto* sim = app.add_subcommand("simulate", "Write a synthetic panel with planted factors");
  FlagSet sim_flags;
  sim->add_option("--out", out, "Output directory")->required();
  sim->add_option("--config", config, "key = value configuration file")->check(CLI::ExistingFile);
  sim_flags.add(*sim, "--firms", "firms", "Number of firms");
  sim_flags.add(*sim, "--months", "months", "Number of months");
  sim_flags.add(*sim, "--chars", "chars", "Number of characteristics");
  sim_flags.add(*sim, "--macros", "macros", "Number of macro predictors");
  sim_flags.add(*sim, "--true-factors", "true_factors", "Number of planted factors");
  sim_flags.add(*sim, "--noise", "noise", "Idiosyncratic monthly volatility");
  sim_flags.add(*sim, "--seed", "seed", "Random seed");
  sim->add_flag("--with-holdout", with_holdout, "Also write holdout.csv");

  auto* tr = app.add_subcommand("train", "Grid search, refit and evaluate on a dataset directory");
  FlagSet train_flags;
  tr->add_option("--out", out, "Run output directory")->required();
  tr->add_option("--config", config, "key = value configuration file")->check(CLI::ExistingFile);
  train_flags.add(*tr, "--data", "data", "Dataset directory (firms, macro, factors, portfolios)");
  train_flags.add(*tr, "--benchmark", "benchmark", "capm, ff3 or ff4");
  train_flags.add(*tr, "--anomalies", "anomalies", "Anomaly return table for significance counts");
  train_flags.add(*tr, "--holdout", "holdout", "Comma-separated holdout portfolio tables");
  train_flags.add(*tr, "--train-end", "train_end", "Last training month (YYYY-MM)");
  train_flags.add(*tr, "--valid-end", "valid_end", "Last validation month (YYYY-MM)");
  train_flags.add(*tr, "--train-fraction", "train_fraction", "Training share when no dates are given");
  train_flags.add(*tr, "--valid-fraction", "valid_fraction", "Validation share when no dates are given");
  train_flags.add(*tr, "--epochs", "epochs", "Training epochs");
  train_flags.add(*tr, "--batch-months", "batch_months", "Months per mini-batch");
  train_flags.add(*tr, "--optimizer", "optimizer", "adam or sgd");
  train_flags.add(*tr, "--step-size", "step_size", "Initial step size");
  train_flags.add(*tr, "--keep-probability", "keep_probability", "Dropout keep probability");
  train_flags.add(*tr, "--tau", "tau", "Sorting quantile");
  train_flags.add(*tr, "--ensemble", "ensemble", "Ensemble size of the final pricing head");
  train_flags.add(*tr, "--seed", "seed", "Base random seed");
  train_flags.add(*tr, "--layers", "layers", "Grid of hidden layer counts, e.g. 1,2,3");
  train_flags.add(*tr, "--factors", "factors", "Grid of deep factor counts");
  train_flags.add(*tr, "--conditions", "conditions", "Grid of condition pair counts (0 = unconditional)");
  train_flags.add(*tr, "--seeds", "seeds", "Seeds per grid cell");
  train_flags.add(*tr, "--jobs", "jobs", "Parallel training tasks");

  auto* ev = app.add_subcommand("evaluate", "Rebuild the report of a training run from its checkpoints");
  ev->add_option("--run", run_dir, "Training run directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--out", out, "Report directory (default: <run>/report)");
  ev->add_option("--holdout", holdout, "Holdout portfolio tables");

  auto* di = app.add_subcommand("dissect", "Price external holdout portfolios with a trained run");
  di->add_option("--run", run_dir, "Training run directory")->required()->check(CLI::ExistingDirectory);
  di->add_option("--holdout", holdout, "Holdout portfolio tables")->required();
  di->add_option("--out", out, "Report directory (default: <run>/report)");

  GradcheckOptions gc;
  auto* gr = app.add_subcommand("gradcheck", "Finite-difference check of the full-stack gradient");
  gr->add_option("--layers", gc.layers, "Hidden layers");
  gr->add_option("--hidden", gc.hidden, "Hidden widths, e.g. 8,4 (empty: default widths)");
  gr->add_option("--factors", gc.factors, "Deep factors");
  gr->add_option("--conditions", gc.conditions, "Condition pairs");
  gr->add_option("--activation", gc.activation, "tanh, relu or identity");
  gr->add_option("--sort", gc.sort, "soft, hard or straight_through");
  gr->add_option("--temperature", gc.temperature, "Soft sort temperature");
  gr->add_option("--firms", gc.firms, "Firms per month");
  gr->add_option("--assets", gc.assets, "Test portfolios");
  gr->add_option("--months", gc.months, "Months");
  gr->add_option("--seed", gc.seed, "Random seed");
  gr->add_option("--tolerance", gc.tolerance, "Maximum accepted relative error");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*sim) return run_simulate(sim_flags, config, out, with_holdout);
    if (*tr) return run_train(train_flags, config, out);
    if (*ev) return run_report(run_dir, out, holdout);
    if (*di) return run_report(run_dir, out, holdout);
    if (*gr) return run_gradcheck(gc);
  } catch (const UsageError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kUsage;
  } catch (const DimensionError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kUsage;
  } catch (const DataError& e) {
    fmt::print(stderr, "data error: {}\n", e.what());
    return kData;
  } catch (const fs::filesystem_error& e) {
    fmt::print(stderr, "data error: {}\n", e.what());
    return kData;
  } catch (const NumericalError& e) {
    fmt::print(stderr, "numerical error: {}\n", e.what());
    return kNumerical;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kUsage;
  }
  return kUsage;
}
