#include "deepfactor/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "deepfactor/errors.hpp"
#include "text_table.hpp"

namespace deepfactor {

using detail::format_double;
using nlohmann::ordered_json;

namespace {

std::vector<int> parse_int_list(const std::string& key, const std::string& text) {
  std::vector<int> out;
  for (auto field : detail::split_fields(text, ',')) {
    field = detail::trim(field);
    KeyValues one{{key, std::string(field)}};
    out.push_back(kv_int(one, key, 0));
  }
  return out;
}

std::string join_ints(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::vector<std::filesystem::path> parse_paths(const std::string& text) {
  std::vector<std::filesystem::path> out;
  if (detail::trim(text).empty()) return out;
  for (auto field : detail::split_fields(text, ',')) out.emplace_back(std::string(detail::trim(field)));
  return out;
}

std::string sort_mode_name(SortMode m) {
  switch (m) {
    case SortMode::hard: return "hard";
    case SortMode::soft: return "soft";
    case SortMode::straight_through: return "straight_through";
  }
  return "soft";
}

SortMode parse_sort_mode(const std::string& s) {
  if (s == "soft") return SortMode::soft;
  if (s == "straight_through") return SortMode::straight_through;
  throw UsageError(fmt::format("train_sort must be soft or straight_through, got '{}'", s));
}

ordered_json number_or_null(double x) { return std::isfinite(x) ? ordered_json(x) : ordered_json(); }

ordered_json month_range_json(const MonthRange& r, const std::vector<YearMonth>& dates) {
  return {{"first", dates.at(r.begin).str()}, {"last", dates.at(r.end - 1).str()}, {"months", r.size()}};
}

Matrix load_aligned(const std::filesystem::path& path, const std::vector<YearMonth>& dates,
                    std::vector<std::string>* names) {
  return load_series_table(path, dates, names).transpose();
}

ReportBundle build_report(const RunConfig& config, const LoadedRun& run,
                          const std::vector<RowModels>& rows,
                          const std::vector<std::filesystem::path>& holdouts,
                          std::vector<std::string>& warnings) {
  ReportBundle report;
  report.asset_names = run.normalized.portfolio_names;
  for (const auto& r : rows) {
    report.rows.push_back(evaluate_splits(r.label, r.fitted, r.refit, run.data, run.split));
    if (r.fitted.deep_factors() > 0) report.curves.push_back({r.label, r.fitted.loss_curve});
  }
  // Constant OLS reference losses on the training window for every benchmark set available.
  const Matrix r_train = run.data.returns(run.split.train);
  for (Benchmark b : {Benchmark::capm, Benchmark::ff3, Benchmark::ff4}) {
    const auto d = benchmark_columns(b);
    if (run.normalized.benchmarks() < d) break;
    const Matrix g = run.normalized.factors
                         .block(static_cast<Eigen::Index>(run.split.train.begin), 0,
                                static_cast<Eigen::Index>(run.split.train.size()), d)
                         .transpose();
    const PricingCoeffs c = fit_ols(r_train, Matrix(0, g.cols()), g);
    const Matrix e = r_train - predict_h4(Matrix(0, g.cols()), g, c);
    report.reference_losses.emplace_back(benchmark_label(b), e.squaredNorm() / static_cast<double>(e.size()));
  }
  if (!config.anomalies.empty()) {
    const Matrix anomalies = load_aligned(config.anomalies, run.normalized.dates, nullptr);
    for (const auto& r : rows) {
      report.significance.push_back(
          significance_row(r.label, r.fitted, r.refit, run.data, run.split, anomalies));
    }
  }
  std::vector<Matrix> sets;
  for (const auto& h : holdouts) {
    std::vector<std::string> names;
    sets.push_back(load_aligned(h, run.normalized.dates, &names));
    report.holdout_sets.push_back(h.stem().string());
    for (const auto& o : holdout_overlap(sets.back(), names, run.data)) {
      warnings.push_back(fmt::format("holdout {} column {} duplicates a training portfolio",
                                     h.stem().string(), o));
    }
  }
  if (!sets.empty()) {
    for (const auto& r : rows) {
      DissectRow d;
      d.label = r.label;
      for (const auto& s : sets) d.sets.push_back(dissect_holdout(r.fitted, r.refit, run.data, run.split, s));
      report.dissect.push_back(std::move(d));
    }
  }
  const auto& dates = run.normalized.dates;
  report.notes = {
      {"benchmark", benchmark_label(config.benchmark)},
      {"train", fmt::format("{} to {}", dates[run.split.train.begin].str(), dates[run.split.train.end - 1].str())},
      {"validation", fmt::format("{} to {}", dates[run.split.valid.begin].str(), dates[run.split.valid.end - 1].str())},
      {"test", fmt::format("{} to {}", dates[run.split.test.begin].str(), dates[run.split.test.end - 1].str())},
      {"test portfolios", std::to_string(run.data.assets())},
      {"seed", std::to_string(config.train.seed)},
  };
  for (const auto& w : warnings) report.notes.emplace_back("warning", w);
  return report;
}

ordered_json cell_json(const GridCell& c) {
  ordered_json valid = ordered_json::array();
  ordered_json loss = ordered_json::array();
  for (double v : c.valid_rmse) valid.push_back(number_or_null(v));
  for (double v : c.train_loss) loss.push_back(number_or_null(v));
  return {{"cell", c.arch.tag()},
          {"layers", c.arch.layers},
          {"factors", c.arch.factors},
          {"conditions", c.arch.conditions},
          {"seeds", c.seeds},
          {"valid_rmse", valid},
          {"train_loss", loss},
          {"score", number_or_null(c.score)},
          {"score_sd", number_or_null(c.score_sd)},
          {"best_seed", c.ok ? ordered_json(c.seeds[c.best_seed]) : ordered_json()},
          {"ok", c.ok},
          {"failures", c.failures}};
}

}  // namespace

std::string benchmark_label(Benchmark b) {
  std::string s(to_string(b));
  for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

const std::vector<std::string>& run_config_keys() {
  static const std::vector<std::string> keys = {
      "data", "anomalies", "holdout", "benchmark", "train_fraction", "valid_fraction",
      "train_end", "valid_end", "test_start", "min_history", "universe_cap", "epochs",
      "batch_months", "optimizer", "step_size", "decay_steps", "keep_probability",
      "temperature_start", "temperature_end", "train_sort", "tau", "ensemble", "seed",
      "layers", "factors", "conditions", "seeds", "jobs"};
  return keys;
}

RunConfig RunConfig::from_key_values(const KeyValues& kv) {
  const auto& known = run_config_keys();
  for (const auto& [k, v] : kv) {
    if (std::find(known.begin(), known.end(), k) == known.end()) {
      throw UsageError(fmt::format("unknown configuration key '{}'", k));
    }
  }
  RunConfig c;
  c.data_dir = kv_string(kv, "data", "");
  c.anomalies = kv_string(kv, "anomalies", "");
  c.holdout = parse_paths(kv_string(kv, "holdout", ""));
  c.benchmark = parse_benchmark(kv_string(kv, "benchmark", "capm"));
  c.split.train_fraction = kv_double(kv, "train_fraction", c.split.train_fraction);
  c.split.valid_fraction = kv_double(kv, "valid_fraction", c.split.valid_fraction);
  if (const auto s = kv_string(kv, "train_end", ""); !s.empty()) c.split.train_end = YearMonth::parse(s);
  if (const auto s = kv_string(kv, "valid_end", ""); !s.empty()) c.split.valid_end = YearMonth::parse(s);
  if (const auto s = kv_string(kv, "test_start", ""); !s.empty()) c.split.test_start = YearMonth::parse(s);
  c.load.min_history = kv_int(kv, "min_history", c.load.min_history);
  c.load.universe_cap = kv_u64(kv, "universe_cap", c.load.universe_cap);
  TrainConfig& t = c.train;
  t.epochs = kv_int(kv, "epochs", t.epochs);
  t.batch_months = kv_int(kv, "batch_months", t.batch_months);
  t.optimizer = parse_optimizer(kv_string(kv, "optimizer", std::string(to_string(t.optimizer))));
  t.step_size = kv_double(kv, "step_size", t.step_size);
  t.decay_steps = kv_double(kv, "decay_steps", t.decay_steps);
  t.keep_probability = kv_double(kv, "keep_probability", t.keep_probability);
  t.temperature_start = kv_double(kv, "temperature_start", t.temperature_start);
  t.temperature_end = kv_double(kv, "temperature_end", t.temperature_end);
  t.sort_mode = parse_sort_mode(kv_string(kv, "train_sort", sort_mode_name(t.sort_mode)));
  t.tau = kv_double(kv, "tau", t.tau);
  t.ensemble = kv_int(kv, "ensemble", t.ensemble);
  t.seed = kv_u64(kv, "seed", t.seed);
  GridConfig& g = c.grid;
  if (kv.count("layers")) g.layers = parse_int_list("layers", kv.at("layers"));
  if (kv.count("factors")) g.factors = parse_int_list("factors", kv.at("factors"));
  if (kv.count("conditions")) g.conditions = parse_int_list("conditions", kv.at("conditions"));
  g.seeds = kv_int(kv, "seeds", g.seeds);
  g.jobs = kv_int(kv, "jobs", g.jobs);
  g.validate();
  return c;
}

KeyValues RunConfig::to_key_values() const {
  KeyValues kv;
  kv["data"] = data_dir.string();
  kv["anomalies"] = anomalies.string();
  std::string h;
  for (std::size_t i = 0; i < holdout.size(); ++i) h += (i ? "," : "") + holdout[i].string();
  kv["holdout"] = h;
  kv["benchmark"] = std::string(to_string(benchmark));
  kv["train_fraction"] = format_double(split.train_fraction);
  kv["valid_fraction"] = format_double(split.valid_fraction);
  kv["train_end"] = split.train_end ? split.train_end->str() : "";
  kv["valid_end"] = split.valid_end ? split.valid_end->str() : "";
  kv["test_start"] = split.test_start ? split.test_start->str() : "";
  kv["min_history"] = std::to_string(load.min_history);
  kv["universe_cap"] = std::to_string(load.universe_cap);
  kv["epochs"] = std::to_string(train.epochs);
  kv["batch_months"] = std::to_string(train.batch_months);
  kv["optimizer"] = std::string(to_string(train.optimizer));
  kv["step_size"] = format_double(train.step_size);
  kv["decay_steps"] = format_double(train.decay_steps);
  kv["keep_probability"] = format_double(train.keep_probability);
  kv["temperature_start"] = format_double(train.temperature_start);
  kv["temperature_end"] = format_double(train.temperature_end);
  kv["train_sort"] = sort_mode_name(train.sort_mode);
  kv["tau"] = format_double(train.tau);
  kv["ensemble"] = std::to_string(train.ensemble);
  kv["seed"] = std::to_string(train.seed);
  kv["layers"] = join_ints(grid.layers);
  kv["factors"] = join_ints(grid.factors);
  kv["conditions"] = join_ints(grid.conditions);
  kv["seeds"] = std::to_string(grid.seeds);
  kv["jobs"] = std::to_string(grid.jobs);
  return kv;
}

LoadedRun load_run_data(const RunConfig& config) {
  if (config.data_dir.empty()) throw UsageError("no data directory given");
  if (!std::filesystem::is_directory(config.data_dir)) {
    throw UsageError(fmt::format("data directory {} does not exist", config.data_dir.string()));
  }
  PanelDataset raw = load_panel(PanelPaths::in_directory(config.data_dir), config.load);
  PanelDataset normalized = rank_normalize(raw);
  const SampleSplit s = split(normalized.dates, config.split);
  const MacroScaler scaler = MacroScaler::fit(normalized.macro, s.train.begin, s.train.end);
  PreparedPanel data(normalized, scaler, config.benchmark);
  return LoadedRun{std::move(normalized), s, std::move(data)};
}

TrainRun run_train_pipeline(const RunConfig& config, const std::filesystem::path& out_dir) {
  for (const auto& h : config.holdout) {
    if (!std::filesystem::exists(h)) throw UsageError(fmt::format("holdout file {} does not exist", h.string()));
  }
  if (!config.anomalies.empty() && !std::filesystem::exists(config.anomalies)) {
    throw UsageError(fmt::format("anomaly file {} does not exist", config.anomalies.string()));
  }
  LoadedRun run = load_run_data(config);
  config.train.validate(run.split.train.size());

  TrainRun out;
  out.grid = grid_select(run.data, run.split, config.grid, config.train);

  ModelArch bench_arch;
  bench_arch.layers = 0;
  bench_arch.factors = 0;
  const std::string base = benchmark_label(config.benchmark);
  TrainConfig bench_cfg = config.train;
  bench_cfg.ensemble = 1;
  RowModels bench{base, train(run.data, bench_arch, run.split.train, bench_cfg),
                  train(run.data, bench_arch, run.split.train_valid(), bench_cfg)};
  out.rows.push_back(std::move(bench));
  if (out.grid.best_unconditional) {
    const FactorModel& m = out.grid.models[*out.grid.best_unconditional];
    out.rows.push_back({base + "+DL", m, refit_and_test(m, run.data, run.split, config.train).model});
  }
  if (out.grid.best_conditional) {
    const FactorModel& m = out.grid.models[*out.grid.best_conditional];
    out.rows.push_back({base + "+DL+Cond", m, refit_and_test(m, run.data, run.split, config.train).model});
  }
  for (const auto& r : out.rows) {
    for (const FactorModel* m : {&r.fitted, &r.refit}) {
      if (m->empty_leg_months > 0) {
        out.warnings.push_back(fmt::format("{} ({}): {} months with an empty long/short leg", r.label,
                                           m->arch.tag(), m->empty_leg_months));
      }
    }
  }
  for (const auto& c : out.grid.cells) {
    for (const auto& f : c.failures) out.warnings.push_back(fmt::format("grid cell {} failed, {}", c.arch.tag(), f));
  }
  out.report = build_report(config, run, out.rows, config.holdout, out.warnings);

  std::filesystem::create_directories(out_dir / "checkpoints");
  std::vector<std::string> outputs;
  for (std::size_t c = 0; c < out.grid.cells.size(); ++c) {
    if (!out.grid.cells[c].ok) continue;
    const std::string rel = fmt::format("checkpoints/cell_{}.json", out.grid.cells[c].arch.tag());
    save_checkpoint(out.grid.models[c], out_dir / rel);
    outputs.push_back(rel);
  }
  const char* stems[] = {"benchmark", "dl", "dlcond"};
  for (const auto& r : out.rows) {
    const std::string stem = r.label == base ? stems[0] : (r.label == base + "+DL" ? stems[1] : stems[2]);
    for (const auto& [suffix, model] : {std::pair{"train", &r.fitted}, std::pair{"refit", &r.refit}}) {
      const std::string rel = fmt::format("checkpoints/{}_{}.json", stem, suffix);
      save_checkpoint(*model, out_dir / rel);
      outputs.push_back(rel);
    }
  }
  detail::write_text_file(out_dir / "run_config.txt", format_key_values(config.to_key_values()));
  outputs.push_back("run_config.txt");
  render_report(out.report, out_dir / "report");
  for (const char* f : {"summary.txt", "table_oos.csv", "table_sig.csv", "table_dissect.csv",
                        "loss_curves.csv", "alphas.csv"}) {
    outputs.push_back(std::string("report/") + f);
  }

  ordered_json manifest;
  manifest["tool"] = "deepfactor";
  manifest["command"] = "train";
  manifest["seed"] = config.train.seed;
  ordered_json cfg = ordered_json::object();
  for (const auto& [k, v] : config.to_key_values()) cfg[k] = v;
  manifest["config"] = cfg;
  const auto& dates = run.normalized.dates;
  manifest["split"] = {{"train", month_range_json(run.split.train, dates)},
                       {"valid", month_range_json(run.split.valid, dates)},
                       {"test", month_range_json(run.split.test, dates)}};
  ordered_json cells = ordered_json::array();
  for (const auto& c : out.grid.cells) cells.push_back(cell_json(c));
  manifest["grid"] = cells;
  const GridCell& sel = out.grid.cells[out.grid.selected];
  manifest["selected"] = {{"cell", sel.arch.tag()}, {"seed", sel.seeds[sel.best_seed]},
                          {"score", sel.score}, {"conditional", sel.arch.conditions > 0}};
  manifest["best_unconditional"] =
      out.grid.best_unconditional ? ordered_json(out.grid.cells[*out.grid.best_unconditional].arch.tag()) : ordered_json();
  manifest["best_conditional"] =
      out.grid.best_conditional ? ordered_json(out.grid.cells[*out.grid.best_conditional].arch.tag()) : ordered_json();
  ordered_json rows = ordered_json::array();
  for (std::size_t i = 0; i < out.rows.size(); ++i) {
    const EvalRow& e = out.report.rows[i];
    rows.push_back({{"model", e.label},
                    {"cell", e.cell},
                    {"train_loss", number_or_null(out.rows[i].fitted.final_loss)},
                    {"benchmark_train_loss", number_or_null(out.rows[i].fitted.benchmark_loss)},
                    {"ins_r2", number_or_null(e.ins.r2)},
                    {"vld_r2", number_or_null(e.vld.r2)},
                    {"test_r2", number_or_null(e.test.r2)},
                    {"test_rmse", number_or_null(e.test.alphas.rmse)}});
  }
  manifest["models"] = rows;
  manifest["warnings"] = out.warnings;
  manifest["outputs"] = outputs;
  out.manifest = manifest.dump(2) + "\n";
  detail::write_text_file(out_dir / "manifest.json", out.manifest);
  return out;
}

ReportBundle run_evaluate(const std::filesystem::path& run_dir, const std::filesystem::path& out_dir,
                          const std::vector<std::filesystem::path>& extra_holdout) {
  const auto cfg_path = run_dir / "run_config.txt";
  if (!std::filesystem::exists(cfg_path)) {
    throw UsageError(fmt::format("{} is not a training run directory (no run_config.txt)", run_dir.string()));
  }
  const RunConfig config = RunConfig::from_key_values(read_key_values(cfg_path));
  LoadedRun run = load_run_data(config);
  const std::string base = benchmark_label(config.benchmark);
  std::vector<RowModels> rows;
  const std::pair<const char*, std::string> stems[] = {
      {"benchmark", base}, {"dl", base + "+DL"}, {"dlcond", base + "+DL+Cond"}};
  for (const auto& [stem, label] : stems) {
    const auto fitted = run_dir / "checkpoints" / fmt::format("{}_train.json", stem);
    const auto refit = run_dir / "checkpoints" / fmt::format("{}_refit.json", stem);
    if (!std::filesystem::exists(fitted) || !std::filesystem::exists(refit)) continue;
    rows.push_back({label, load_checkpoint(fitted), load_checkpoint(refit)});
  }
  if (rows.empty()) throw DataError(fmt::format("no checkpoints found under {}", run_dir.string()));
  std::vector<std::filesystem::path> holdouts = config.holdout;
  for (const auto& h : extra_holdout) {
    const bool seen = std::any_of(holdouts.begin(), holdouts.end(), [&](const auto& p) {
      return std::filesystem::exists(p) && std::filesystem::equivalent(p, h);
    });
    if (!seen) holdouts.push_back(h);
  }
  std::vector<std::string> warnings;
  ReportBundle report = build_report(config, run, rows, holdouts, warnings);
  render_report(report, out_dir);
  return report;
}

}  // namespace deepfactor
