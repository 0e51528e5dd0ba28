#include <cmath>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "deepfactor/errors.hpp"
#include "deepfactor/simulate.hpp"
#include "deepfactor/training.hpp"
#include "support.hpp"

using namespace deepfactor;

namespace {

PreparedPanel tiny_panel(std::uint64_t seed) {
  const auto d = tiny_dataset(8, 3, 12, 3, 1, 1, seed);
  return PreparedPanel(d, MacroScaler::fit(d.macro, 0, d.months()), Benchmark::capm);
}

FactorModel random_head_model(const PreparedPanel& data, const ModelArch& arch,
                              std::uint64_t seed) {
  TrainConfig cfg;
  cfg.seed = seed;
  cfg.batch_months = 1;
  FactorModel model = initial_model(data, arch, {0, data.months()}, cfg);
  Rng rng(seed + 1);
  std::normal_distribution<double> normal(0.0, 0.5);
  Vector theta = pack_parameters(model);
  const Eigen::Index net = arch.factors > 0 ? model.net.parameter_count() : 0;
  for (Eigen::Index i = net; i < theta.size(); ++i) theta[i] += normal(rng);
  unpack_parameters(theta, model);
  return model;
}

struct SimFixture {
  PanelDataset normalized;
  SampleSplit split;
  PreparedPanel data;
};

SimFixture small_market(std::uint64_t seed) {
  SimConfig c;
  c.firms = 80;
  c.months = 120;
  const auto sim = simulate_market(c, seed);
  auto normalized = rank_normalize(sim.data);
  const auto s = split(normalized.dates, {});
  const auto scaler = MacroScaler::fit(normalized.macro, s.train.begin, s.train.end);
  PreparedPanel data(normalized, scaler, Benchmark::capm);
  return {std::move(normalized), s, std::move(data)};
}

TrainConfig quick_config() {
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.batch_months = 24;
  return cfg;
}

}  // namespace

TEST(PreparedPanel, RequiresNormalizedDataAndEnoughFactors) {
  SimConfig c;
  c.firms = 40;
  c.months = 24;
  const auto sim = simulate_market(c, 1);
  const auto scaler = MacroScaler::fit(sim.data.macro, 0, 12);
  EXPECT_THROW(PreparedPanel(sim.data, scaler, Benchmark::capm), UsageError);
  const auto norm = rank_normalize(sim.data);
  ASSERT_EQ(norm.benchmarks(), 4);
  const PreparedPanel p(norm, scaler, Benchmark::ff3);
  EXPECT_EQ(p.benchmark_factors(), 3);
  EXPECT_EQ(p.input_size(), input_rows(5, 2));
  auto one_factor = norm;
  one_factor.factors = norm.factors.leftCols(1);
  one_factor.factor_names.resize(1);
  EXPECT_THROW(PreparedPanel(one_factor, scaler, Benchmark::ff4), DataError);
}

TEST(Benchmark, ParseAndColumns) {
  EXPECT_EQ(parse_benchmark("ff4"), Benchmark::ff4);
  EXPECT_EQ(benchmark_columns(Benchmark::ff3), 3);
  EXPECT_THROW(parse_benchmark("ff5"), UsageError);
  EXPECT_EQ(parse_optimizer("sgd"), OptimizerKind::sgd);
  EXPECT_THROW(parse_optimizer("rmsprop"), UsageError);
}

TEST(ModelArch, TagAndValidation) {
  ModelArch a;
  a.layers = 2;
  a.factors = 3;
  a.conditions = 1;
  EXPECT_EQ(a.tag(), "L2-P3-C1");
  EXPECT_EQ(a.hidden_sizes(), (std::vector<int>{128, 64}));
  a.hidden = {8};
  EXPECT_THROW(a.validate(), UsageError);
  a.hidden = {8, 4};
  EXPECT_EQ(a.hidden_sizes(), (std::vector<int>{8, 4}));
  a.conditions = 9;
  EXPECT_THROW(a.validate(), UsageError);
}

TEST(TrainConfig, TemperatureScheduleAndValidation) {
  TrainConfig c;
  c.epochs = 5;
  EXPECT_DOUBLE_EQ(c.temperature(0), 1.0);
  EXPECT_NEAR(c.temperature(4), 0.1, 1e-15);
  EXPECT_NEAR(c.temperature(2), std::sqrt(0.1), 1e-15);
  EXPECT_THROW(c.validate(100), UsageError);  // batch 120 > 100 months
  c.batch_months = 10;
  EXPECT_NO_THROW(c.validate(100));
  c.keep_probability = 0.0;
  EXPECT_THROW(c.validate(100), UsageError);
}

TEST(Parameters, PackUnpackRoundTrip) {
  const auto data = tiny_panel(3);
  ModelArch arch;
  arch.layers = 2;
  arch.hidden = {4, 3};
  arch.factors = 2;
  arch.conditions = 2;
  const auto model = random_head_model(data, arch, 5);
  const Vector theta = pack_parameters(model);
  EXPECT_EQ(theta.size(), model.net.parameter_count() + 3 * 2 + 3 * 1 + 2 * 3 + 3 * 2 * 2);
  FactorModel other = model;
  unpack_parameters(Vector::Zero(theta.size()), other);
  unpack_parameters(theta, other);
  EXPECT_EQ(pack_parameters(other), theta);
  EXPECT_THROW(unpack_parameters(theta.head(3), other), DimensionError);
}

TEST(GradientCheck, TwoLayerSoftSort) {
  const auto data = tiny_panel(1);
  ModelArch arch;
  arch.layers = 2;
  arch.hidden = {8, 4};
  const auto model = random_head_model(data, arch, 1);
  const auto check = gradient_check_full(model, data, {0, data.months()}, SortMode::soft, 1.0);
  EXPECT_EQ(check.status, CheckStatus::ok);
  EXPECT_LT(check.max_relative_error, 1e-4);
}

TEST(GradientCheck, LinearStack) {
  const auto data = tiny_panel(2);
  ModelArch arch;
  arch.layers = 0;
  arch.activation = Activation::identity;
  const auto model = random_head_model(data, arch, 2);
  const auto check = gradient_check_full(model, data, {0, data.months()}, SortMode::soft, 1.0);
  EXPECT_LT(check.max_relative_error, 1e-8);
}

TEST(GradientCheck, ConditionalHeadAndSeveralFactors) {
  const auto data = tiny_panel(4);
  ModelArch arch;
  arch.layers = 1;
  arch.hidden = {6};
  arch.factors = 2;
  arch.conditions = 2;
  const auto model = random_head_model(data, arch, 4);
  const auto check = gradient_check_full(model, data, {0, data.months()}, SortMode::soft, 0.7);
  EXPECT_LT(check.max_relative_error, 1e-4);
}

TEST(GradientCheck, HardSortIsReportedNotChecked) {
  const auto data = tiny_panel(1);
  const auto model = random_head_model(data, ModelArch{}, 1);
  const auto check = gradient_check_full(model, data, {0, data.months()}, SortMode::hard, 1.0);
  EXPECT_EQ(check.status, CheckStatus::non_differentiable);
}

TEST(DeepFactors, ReadOnlyTheRequestedMonths) {
  auto fx = small_market(3);
  auto model = initial_model(fx.data, ModelArch{}, fx.split.train, quick_config());
  AccessLog log;
  fx.data.set_access_log(&log);
  const auto panel = deep_factors(model, fx.data, {50, 60});
  fx.data.set_access_log(nullptr);
  EXPECT_EQ(panel.f.cols(), 10);
  EXPECT_FALSE(log.outside({50, 60}));
  EXPECT_EQ(log.first(), 50u);
  EXPECT_EQ(log.last(), 59u);
}

TEST(DeepFactors, SoftApproachesHardAtLowTemperature) {
  auto fx = small_market(4);
  const auto model = initial_model(fx.data, ModelArch{}, fx.split.train, quick_config());
  const MonthRange r{10, 30};
  const Matrix hard = deep_factors(model, fx.data, r).f;
  const Matrix soft = deep_factors(model, fx.data, r, SortMode::soft, 1e-9).f;
  EXPECT_LT((hard - soft).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Optimizer, ZeroStepLeavesParametersUnchanged) {
  auto fx = small_market(5);
  for (auto kind : {OptimizerKind::sgd, OptimizerKind::adam}) {
    auto cfg = quick_config();
    cfg.optimizer = kind;
    cfg.step_size = 0.0;
    auto model = initial_model(fx.data, ModelArch{}, fx.split.train, cfg);
    const Vector before = pack_parameters(model);
    OptimizerState state;
    Rng rng(1);
    std::vector<std::size_t> months{10, 11, 12, 13};
    const double loss = sgd_step(model, state, fx.data, months, cfg, 1.0, rng);
    EXPECT_TRUE(std::isfinite(loss));
    EXPECT_EQ(pack_parameters(model), before);
    EXPECT_EQ(state.step, 1);
  }
}

TEST(Optimizer, SgdStepMovesAgainstTheGradient) {
  auto fx = small_market(6);
  auto cfg = quick_config();
  cfg.optimizer = OptimizerKind::sgd;
  cfg.step_size = 1e-3;
  cfg.keep_probability = 1.0;
  auto model = initial_model(fx.data, ModelArch{}, fx.split.train, cfg);
  std::vector<std::size_t> months{20, 21, 22};
  GradientOptions opts;
  opts.mode = Mode::train;
  opts.dropout.keep_probability = 1.0;
  Rng r0(9);
  opts.rng = &r0;
  const Vector grad = loss_and_gradient(model, fx.data, months, opts).gradient;
  const Vector before = pack_parameters(model);
  OptimizerState state;
  Rng r1(9);
  sgd_step(model, state, fx.data, months, cfg, 1.0, r1);
  EXPECT_LT((pack_parameters(model) - (before - 1e-3 * grad)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Train, BenchmarkOnlyModelIsOls) {
  auto fx = small_market(7);
  ModelArch arch;
  arch.layers = 0;
  arch.factors = 0;
  const auto model = train(fx.data, arch, fx.split.train, quick_config());
  EXPECT_NEAR(model.final_loss, model.benchmark_loss, 1e-15);
  const Matrix r = fx.data.returns(fx.split.train);
  const Matrix g = fx.data.benchmarks(fx.split.train);
  const auto ols = fit_ols(r, Matrix(0, g.cols()), g);
  EXPECT_LT((model.coeffs.gamma - ols.gamma).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Train, DeterministicAndNoWorseThanBenchmarkInSample) {
  auto fx = small_market(8);
  ModelArch arch;
  arch.conditions = 1;
  const auto a = train(fx.data, arch, fx.split.train, quick_config());
  const auto b = train(fx.data, arch, fx.split.train, quick_config());
  EXPECT_EQ(pack_parameters(a), pack_parameters(b));
  EXPECT_EQ(a.loss_curve, b.loss_curve);
  EXPECT_EQ(a.loss_curve.size(), 4u);
  EXPECT_LE(a.final_loss, a.benchmark_loss);
  auto cfg = quick_config();
  cfg.seed = 2;
  EXPECT_NE(pack_parameters(train(fx.data, arch, fx.split.train, cfg)), pack_parameters(a));
}

TEST(Train, EnsembleHeadAveragesMembers) {
  auto fx = small_market(9);
  auto cfg = quick_config();
  cfg.ensemble = 3;
  const auto model = train(fx.data, ModelArch{}, fx.split.train, cfg);
  EXPECT_EQ(model.ensemble, 3);
  EXPECT_TRUE(std::isfinite(model.final_loss));
}

TEST(Train, RefitUsesTrainAndValidation) {
  auto fx = small_market(10);
  const auto fitted = train(fx.data, ModelArch{}, fx.split.train, quick_config());
  const auto refit = refit_and_test(fitted, fx.data, fx.split, quick_config());
  EXPECT_EQ(refit.model.fit_window.begin, fx.split.train.begin);
  EXPECT_EQ(refit.model.fit_window.end, fx.split.valid.end);
  EXPECT_EQ(refit.test.alphas.alpha.size(), fx.data.assets());
  EXPECT_GT(validation_rmse(fitted, fx.data, fx.split.valid), 0.0);
}

TEST(Grid, PreferCellTieBreaks) {
  GridCell a, b;
  a.ok = b.ok = true;
  a.score = b.score = 0.01;
  a.arch.layers = 1;
  b.arch.layers = 2;
  EXPECT_TRUE(prefer_cell(a, b));
  EXPECT_FALSE(prefer_cell(b, a));
  b.arch.layers = 1;
  b.arch.factors = 2;
  EXPECT_TRUE(prefer_cell(a, b));
  b.arch.factors = 1;
  b.arch.conditions = 1;
  EXPECT_TRUE(prefer_cell(a, b));
  b.score = 0.009;
  EXPECT_TRUE(prefer_cell(b, a));
}

TEST(Grid, SelectsAndRecordsEveryCell) {
  auto fx = small_market(11);
  GridConfig grid;
  grid.layers = {1};
  grid.factors = {1, 2};
  grid.conditions = {0};
  grid.seeds = 2;
  grid.jobs = 2;
  const auto res = grid_select(fx.data, fx.split, grid, quick_config());
  ASSERT_EQ(res.cells.size(), 2u);
  for (const auto& c : res.cells) {
    EXPECT_EQ(c.seeds.size(), 2u);
    EXPECT_TRUE(c.ok);
  }
  const auto& sel = res.cells[res.selected];
  for (const auto& c : res.cells) EXPECT_FALSE(prefer_cell(c, sel));
  EXPECT_TRUE(res.best_unconditional.has_value());
  EXPECT_FALSE(res.best_conditional.has_value());
  grid.jobs = 1;
  const auto serial = grid_select(fx.data, fx.split, grid, quick_config());
  EXPECT_EQ(serial.cells[0].valid_rmse, res.cells[0].valid_rmse);
  grid.factors = {6};
  EXPECT_THROW(grid.validate(), UsageError);
}

TEST(Checkpoint, RoundTripPreservesPredictions) {
  auto fx = small_market(12);
  ModelArch arch;
  arch.conditions = 1;
  const auto model = train(fx.data, arch, fx.split.train, quick_config());
  const auto dir = deepfactor::fixtures::scratch_dir("checkpoint");
  save_checkpoint(model, dir / "m.json");
  const auto back = load_checkpoint(dir / "m.json");
  EXPECT_EQ(pack_parameters(back), pack_parameters(model));
  EXPECT_EQ(back.loss_curve, model.loss_curve);
  EXPECT_EQ(back.arch.tag(), model.arch.tag());
  EXPECT_EQ(model_loss(back, fx.data, fx.split.valid), model_loss(model, fx.data, fx.split.valid));
  EXPECT_EQ(checkpoint_json(back), checkpoint_json(model));
  std::ofstream(dir / "bad.json") << "{\"format\": \"other\"}";
  EXPECT_THROW(load_checkpoint(dir / "bad.json"), DataError);
  EXPECT_THROW(load_checkpoint(dir / "missing.json"), DataError);
}

TEST(Train, SgdOnLinearToyConvergesToOls) {
  std::mt19937_64 rng(13);
  const Matrix f = fixtures::random_matrix(1, 200, rng, 0.05);
  const Matrix r = 0.9 * f + fixtures::random_matrix(1, 200, rng, 0.01);
  const Matrix none(0, 200);
  const auto ols = fit_ols(r, f, none);
  EnsembleOptions opt;
  opt.epochs = 5000;
  opt.batch_months = 200;
  const auto head = fit_ensemble(r, f, none, 1, 3, opt);
  EXPECT_NEAR(head.members[0].beta(0, 0), ols.beta(0, 0), 1e-4);
}

TEST(Train, FullWindowLossFallsAcrossEpochs) {
  auto fx = small_market(14);
  auto cfg = quick_config();
  cfg.epochs = 10;
  const auto model = train(fx.data, ModelArch{}, fx.split.train, cfg);
  ASSERT_EQ(model.loss_curve.size(), 10u);
  EXPECT_LT(model.loss_curve.back(), model.loss_curve.front());
}
