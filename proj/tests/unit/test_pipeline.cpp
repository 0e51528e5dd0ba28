#include <fstream>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "deepfactor/errors.hpp"
#include "deepfactor/pipeline.hpp"
#include "deepfactor/simulate.hpp"
#include "support.hpp"

using namespace deepfactor;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

// Small simulated dataset with a holdout grid and a pure-noise anomaly table.
fs::path dataset(const std::string& name) {
  const auto dir = deepfactor::fixtures::scratch_dir(name);
  SimConfig c;
  c.firms = 80;
  c.months = 120;
  const auto sim = simulate_market(c, 21);
  write_simulation(sim, dir, true);
  std::mt19937_64 rng(5);
  const Matrix noise = deepfactor::fixtures::random_matrix(120, 6, rng, 0.03);
  write_series_table(dir / "anomalies.csv", sim.data.dates, {"a1", "a2", "a3", "a4", "a5", "a6"},
                     noise);
  return dir;
}

RunConfig small_run(const fs::path& data) {
  KeyValues kv{{"data", data.string()},
               {"anomalies", (data / "anomalies.csv").string()},
               {"holdout", (data / "holdout.csv").string()},
               {"epochs", "2"},
               {"batch_months", "24"},
               {"layers", "1"},
               {"factors", "1"},
               {"conditions", "0,1"},
               {"seeds", "1"}};
  return RunConfig::from_key_values(kv);
}

}  // namespace

TEST(RunConfig, KeyValuesRoundTrip) {
  KeyValues kv{{"data", "d"}, {"benchmark", "ff3"}, {"train_end", "1990-12"},
               {"valid_end", "1995-12"}, {"layers", "1,3"}, {"step_size", "0.003"}};
  const auto c = RunConfig::from_key_values(kv);
  EXPECT_EQ(c.benchmark, Benchmark::ff3);
  EXPECT_EQ(c.grid.layers, (std::vector<int>{1, 3}));
  EXPECT_EQ(c.train.step_size, 0.003);
  const auto again = RunConfig::from_key_values(c.to_key_values());
  EXPECT_EQ(again.to_key_values(), c.to_key_values());
  EXPECT_EQ(c.to_key_values().size(), run_config_keys().size());
  EXPECT_THROW(RunConfig::from_key_values({{"epoch", "3"}}), UsageError);
  EXPECT_THROW(RunConfig::from_key_values({{"layers", "6"}}), UsageError);
  EXPECT_THROW(RunConfig::from_key_values({{"train_sort", "hard"}}), UsageError);
}

TEST(Pipeline, MissingInputsAreUsageErrors) {
  RunConfig c;
  EXPECT_THROW(load_run_data(c), UsageError);
  c.data_dir = "/nonexistent/deepfactor";
  EXPECT_THROW(load_run_data(c), UsageError);
  EXPECT_THROW(run_evaluate("/nonexistent/deepfactor", "/tmp"), UsageError);
}

TEST(Pipeline, TrainWritesOutputsAndIsReproducible) {
  const auto data = dataset("pipeline_data");
  const auto cfg = small_run(data);
  const auto out1 = deepfactor::fixtures::scratch_dir("pipeline_run1");
  const auto out2 = deepfactor::fixtures::scratch_dir("pipeline_run2");
  const auto run = run_train_pipeline(cfg, out1);
  ASSERT_EQ(run.rows.size(), 3u);
  EXPECT_EQ(run.rows[0].label, "CAPM");
  EXPECT_EQ(run.rows[1].label, "CAPM+DL");
  EXPECT_EQ(run.rows[2].label, "CAPM+DL+Cond");
  ASSERT_EQ(run.report.significance.size(), 3u);
  EXPECT_EQ(run.report.significance[0].anomalies, 6);
  ASSERT_EQ(run.report.dissect.size(), 3u);
  EXPECT_EQ(run.report.holdout_sets, std::vector<std::string>{"holdout"});
  EXPECT_TRUE(fs::exists(out1 / "checkpoints" / "cell_L1-P1-C0.json"));
  EXPECT_TRUE(fs::exists(out1 / "checkpoints" / "dlcond_refit.json"));
  EXPECT_EQ(run.rows[1].refit.fit_window.end, run.rows[1].fitted.fit_window.end + 24);

  run_train_pipeline(cfg, out2);
  EXPECT_EQ(slurp(out1 / "manifest.json"), slurp(out2 / "manifest.json"));
  for (const char* f : {"summary.txt", "table_oos.csv", "table_sig.csv", "table_dissect.csv",
                        "loss_curves.csv", "alphas.csv"}) {
    EXPECT_EQ(slurp(out1 / "report" / f), slurp(out2 / "report" / f)) << f;
  }
  EXPECT_EQ(slurp(out1 / "checkpoints" / "dl_refit.json"), slurp(out2 / "checkpoints" / "dl_refit.json"));

  // Re-evaluating from checkpoints reproduces the report exactly.
  const auto eval_dir = deepfactor::fixtures::scratch_dir("pipeline_eval");
  run_evaluate(out1, eval_dir);
  EXPECT_EQ(slurp(eval_dir / "table_oos.csv"), slurp(out1 / "report" / "table_oos.csv"));
  EXPECT_EQ(slurp(eval_dir / "table_dissect.csv"), slurp(out1 / "report" / "table_dissect.csv"));
  // A holdout file the run already uses is not priced twice.
  const auto again = run_evaluate(out1, eval_dir, cfg.holdout);
  EXPECT_EQ(again.holdout_sets, std::vector<std::string>{"holdout"});

  // Final DL training loss never exceeds the benchmark OLS loss on the same window.
  for (const auto& r : run.rows) EXPECT_LE(r.fitted.final_loss, r.fitted.benchmark_loss);
}

TEST(Pipeline, HoldoutDuplicatingTrainingPortfolioWarns) {
  const auto data = deepfactor::fixtures::scratch_dir("pipeline_dup");
  SimConfig c;
  c.firms = 80;
  c.months = 120;
  const auto sim = simulate_market(c, 22);
  write_simulation(sim, data, false);
  write_series_table(data / "dup.csv", sim.data.dates, {"copy"}, sim.data.portfolios.leftCols(1));
  auto kv = small_run(data).to_key_values();
  kv["anomalies"] = "";
  kv["holdout"] = (data / "dup.csv").string();
  kv["conditions"] = "0";
  const auto run = run_train_pipeline(RunConfig::from_key_values(kv),
                                      deepfactor::fixtures::scratch_dir("pipeline_dup_out"));
  ASSERT_FALSE(run.warnings.empty());
  EXPECT_NE(run.warnings[0].find("duplicates a training portfolio"), std::string::npos);
}
