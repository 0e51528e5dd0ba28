#include "deepfactor/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "deepfactor/errors.hpp"
#include "text_table.hpp"

namespace deepfactor {

using detail::format_double;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

SplitScore out_of_sample(const Matrix& residuals, const Matrix& all_returns,
                         std::size_t history_begin, const MonthRange& window) {
  SplitScore s;
  s.alphas = alpha_stats(residuals);
  s.baseline_rmse = historical_average_baseline(all_returns, history_begin, window).stats.rmse;
  s.r2 = oos_r_squared(s.alphas.rmse, s.baseline_rmse);
  return s;
}

Matrix full_returns(const PreparedPanel& data) {
  return data.returns({0, data.months()});
}

// Per-row least squares of `y` (N x T) on `x` (k x T) over `fit`, residuals over `eval`.
Matrix ols_residuals(const Matrix& y, const Matrix& x, const MonthRange& fit,
                     const MonthRange& eval) {
  const auto fb = static_cast<Eigen::Index>(fit.begin);
  const auto fn = static_cast<Eigen::Index>(fit.size());
  const auto eb = static_cast<Eigen::Index>(eval.begin);
  const auto en = static_cast<Eigen::Index>(eval.size());
  const Matrix coef = least_squares(x.middleCols(fb, fn).transpose(),
                                    y.middleCols(fb, fn).transpose());  // k x N
  return y.middleCols(eb, en) - coef.transpose() * x.middleCols(eb, en);
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string percent(double x) { return std::isfinite(x) ? fmt::format("{:.2f}", 100.0 * x) : "-"; }

}  // namespace

BaselineResult historical_average_baseline(const Matrix& returns, std::size_t history_begin,
                                           const MonthRange& eval, AccessLog* log) {
  if (eval.empty()) throw UsageError("historical_average_baseline: empty evaluation window");
  if (eval.begin <= history_begin) {
    throw UsageError("historical_average_baseline: no history before the evaluation window");
  }
  if (eval.end > static_cast<std::size_t>(returns.cols())) {
    throw UsageError("historical_average_baseline: window exceeds the sample");
  }
  const auto n = returns.rows();
  Vector sum = Vector::Zero(n);
  std::size_t count = 0;
  for (std::size_t t = history_begin; t < eval.begin; ++t) {
    if (log != nullptr) log->mark(t);
    sum += returns.col(static_cast<Eigen::Index>(t));
    ++count;
  }
  BaselineResult out;
  out.residuals.resize(n, static_cast<Eigen::Index>(eval.size()));
  for (std::size_t t = eval.begin; t < eval.end; ++t) {
    // The prediction is formed before month t is read.
    const Vector prediction = sum / static_cast<double>(count);
    if (log != nullptr) log->mark(t);
    const Vector realized = returns.col(static_cast<Eigen::Index>(t));
    out.residuals.col(static_cast<Eigen::Index>(t - eval.begin)) = realized - prediction;
    sum += realized;
    ++count;
  }
  out.stats = alpha_stats(out.residuals);
  return out;
}

double in_sample_r2(const Matrix& returns, const Matrix& residuals) {
  require_dims("in_sample_r2: rows", residuals.rows(), returns.rows());
  require_dims("in_sample_r2: cols", residuals.cols(), returns.cols());
  const double total = returns.squaredNorm();
  if (!(total > 0.0)) throw NumericalError("in_sample_r2: zero return variation");
  return 1.0 - residuals.squaredNorm() / total;
}

EvalRow evaluate_splits(const std::string& label, const FactorModel& fitted,
                        const FactorModel& refit, const PreparedPanel& data,
                        const SampleSplit& split) {
  if (split.train.empty() || split.valid.empty() || split.test.empty()) {
    throw UsageError("evaluate_splits: every split must be non-empty");
  }
  EvalRow row;
  row.label = label;
  row.cell = fitted.deep_factors() > 0 || fitted.cond.conditions() > 0 ? fitted.arch.tag() : "";
  row.seed = fitted.seed;
  const Matrix all = full_returns(data);

  const Matrix ins = model_residuals(fitted, data, split.train);
  row.ins.alphas = alpha_stats(ins);
  row.ins.r2 = in_sample_r2(data.returns(split.train), ins);

  row.vld = out_of_sample(model_residuals(fitted, data, split.valid), all, split.train.begin,
                          split.valid);
  row.test = out_of_sample(model_residuals(refit, data, split.test), all, split.train.begin,
                           split.test);
  return row;
}

SignificanceCount count_significant(const Matrix& anomalies, const Matrix& factors,
                                    const MonthRange& fit, const MonthRange& eval,
                                    double threshold) {
  require_dims("count_significant: months", anomalies.cols(), factors.cols());
  if (fit.end > static_cast<std::size_t>(factors.cols()) ||
      eval.end > static_cast<std::size_t>(factors.cols())) {
    throw UsageError("count_significant: window exceeds the sample");
  }
  SignificanceCount out;
  out.tstat = Vector::Constant(anomalies.rows(), kNaN);
  if (fit.size() <= static_cast<std::size_t>(factors.rows())) {
    throw NumericalError("count_significant: loading window shorter than the factor count");
  }
  std::vector<Eigen::Index> usable;
  for (Eigen::Index a = 0; a < anomalies.rows(); ++a) {
    const bool finite =
        anomalies.row(a).segment(static_cast<Eigen::Index>(fit.begin), static_cast<Eigen::Index>(fit.size())).allFinite() &&
        anomalies.row(a).segment(static_cast<Eigen::Index>(eval.begin), static_cast<Eigen::Index>(eval.size())).allFinite();
    if (finite && eval.size() >= 2) {
      usable.push_back(a);
    } else {
      out.excluded.push_back(static_cast<std::size_t>(a));
    }
  }
  if (usable.empty()) return out;
  Matrix y(static_cast<Eigen::Index>(usable.size()), anomalies.cols());
  for (std::size_t i = 0; i < usable.size(); ++i) y.row(static_cast<Eigen::Index>(i)) = anomalies.row(usable[i]);
  const Matrix e = ols_residuals(y, factors, fit, eval);
  for (std::size_t i = 0; i < usable.size(); ++i) {
    const Vector r = e.row(static_cast<Eigen::Index>(i)).transpose();
    const double t = alpha_tstat(as_span(r));
    out.tstat[usable[i]] = t;
    if (std::abs(t) > threshold) ++out.count;
  }
  return out;
}

Matrix model_factor_panel(const FactorModel& model, const PreparedPanel& data) {
  const MonthRange all{0, data.months()};
  const Matrix f = deep_factors(model, data, all).f;
  const Matrix g = data.benchmarks(all);
  Matrix x(f.rows() + g.rows(), g.cols());
  x << f, g;
  return x;
}

SignificanceRow significance_row(const std::string& label, const FactorModel& fitted,
                                 const FactorModel& refit, const PreparedPanel& data,
                                 const SampleSplit& split, const Matrix& anomalies) {
  SignificanceRow row;
  row.label = label;
  row.anomalies = static_cast<int>(anomalies.rows());
  const Matrix xf = model_factor_panel(fitted, data);
  const Matrix xr = model_factor_panel(refit, data);
  row.ins = count_significant(anomalies, xf, split.train, split.train).count;
  row.vld = count_significant(anomalies, xf, split.train, split.valid).count;
  row.test = count_significant(anomalies, xr, split.train_valid(), split.test).count;
  return row;
}

DissectScore dissect_holdout(const FactorModel& fitted, const FactorModel& refit,
                             const PreparedPanel& data, const SampleSplit& split,
                             const Matrix& holdout) {
  require_dims("dissect_holdout: months", holdout.cols(), static_cast<Eigen::Index>(data.months()));
  if (!holdout.allFinite()) throw DataError("dissect_holdout: non-finite holdout return");
  DissectScore out;
  const Matrix ev = ols_residuals(holdout, model_factor_panel(fitted, data), split.train, split.valid);
  const Matrix et = ols_residuals(holdout, model_factor_panel(refit, data), split.train_valid(), split.test);
  out.vld_r2 = out_of_sample(ev, holdout, split.train.begin, split.valid).r2;
  out.test_r2 = out_of_sample(et, holdout, split.train.begin, split.test).r2;
  return out;
}

std::vector<std::string> holdout_overlap(const Matrix& holdout,
                                         const std::vector<std::string>& holdout_names,
                                         const PreparedPanel& data) {
  require_dims("holdout_overlap: names", static_cast<Eigen::Index>(holdout_names.size()), holdout.rows());
  const Matrix r = full_returns(data);
  std::vector<std::string> out;
  for (Eigen::Index h = 0; h < holdout.rows(); ++h) {
    for (Eigen::Index i = 0; i < r.rows(); ++i) {
      if ((holdout.row(h) - r.row(i)).cwiseAbs().maxCoeff() <= 1e-12) {
        out.push_back(holdout_names[static_cast<std::size_t>(h)]);
        break;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rendering

void render_report(const ReportBundle& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);

  std::string oos =
      "model,cell,seed,ins_r2,vld_r2,test_r2,vld_rmse,test_rmse,baseline_vld_rmse,"
      "baseline_test_rmse,vld_sig,test_sig\n";
  for (const auto& r : report.rows) {
    oos += fmt::format("{},{},{},{},{},{},{},{},{},{},{},{}\n", csv_field(r.label), csv_field(r.cell),
                       r.seed, format_double(r.ins.r2), format_double(r.vld.r2),
                       format_double(r.test.r2), format_double(r.vld.alphas.rmse),
                       format_double(r.test.alphas.rmse), format_double(r.vld.baseline_rmse),
                       format_double(r.test.baseline_rmse), r.vld.alphas.significant_count(),
                       r.test.alphas.significant_count());
  }
  detail::write_text_file(dir / "table_oos.csv", oos);

  std::string alphas = "model,split,asset,alpha,tstat\n";
  for (const auto& r : report.rows) {
    const std::pair<const char*, const SplitScore*> splits[] = {
        {"ins", &r.ins}, {"vld", &r.vld}, {"test", &r.test}};
    for (const auto& [name, s] : splits) {
      for (Eigen::Index i = 0; i < s->alphas.alpha.size(); ++i) {
        const std::string asset = static_cast<std::size_t>(i) < report.asset_names.size()
                                      ? report.asset_names[static_cast<std::size_t>(i)]
                                      : fmt::format("R{}", i + 1);
        alphas += fmt::format("{},{},{},{},{}\n", csv_field(r.label), name, csv_field(asset),
                              format_double(s->alphas.alpha[i]), format_double(s->alphas.tstat[i]));
      }
    }
  }
  detail::write_text_file(dir / "alphas.csv", alphas);

  std::string sig = "model,anomalies,ins_sig,vld_sig,test_sig\n";
  for (const auto& s : report.significance) {
    sig += fmt::format("{},{},{},{},{}\n", csv_field(s.label), s.anomalies, s.ins, s.vld, s.test);
  }
  detail::write_text_file(dir / "table_sig.csv", sig);

  std::string dis = "model";
  for (const auto& h : report.holdout_sets) dis += fmt::format(",{0}_vld_r2,{0}_test_r2", csv_field(h));
  dis += '\n';
  for (const auto& d : report.dissect) {
    dis += csv_field(d.label);
    for (const auto& s : d.sets) dis += fmt::format(",{},{}", format_double(s.vld_r2), format_double(s.test_r2));
    dis += '\n';
  }
  detail::write_text_file(dir / "table_dissect.csv", dis);

  std::size_t epochs = 0;
  for (const auto& c : report.curves) epochs = std::max(epochs, c.loss.size());
  std::string curves = "model,epoch,loss\n";
  for (const auto& c : report.curves) {
    for (std::size_t e = 0; e < c.loss.size(); ++e) {
      curves += fmt::format("{},{},{}\n", csv_field(c.model), e + 1, format_double(c.loss[e]));
    }
  }
  for (const auto& [name, loss] : report.reference_losses) {
    for (std::size_t e = 0; e < epochs; ++e) {
      curves += fmt::format("{},{},{}\n", csv_field(name), e + 1, format_double(loss));
    }
  }
  detail::write_text_file(dir / "loss_curves.csv", curves);

  std::string txt;
  for (const auto& [key, value] : report.notes) txt += fmt::format("{}: {}\n", key, value);
  if (!report.notes.empty()) txt += '\n';
  txt += "Out-of-sample pricing (R^2 in %; VLD and Test relative to the historical average)\n";
  txt += fmt::format("{:<18} {:<12} {:>9} {:>9} {:>9}\n", "Model", "Cell", "INS", "VLD", "Test");
  for (const auto& r : report.rows) {
    txt += fmt::format("{:<18} {:<12} {:>9} {:>9} {:>9}\n", r.label, r.cell.empty() ? "-" : r.cell,
                       percent(r.ins.r2), percent(r.vld.r2), percent(r.test.r2));
  }
  if (!report.significance.empty()) {
    txt += "\nSignificant anomaly alphas (|t| > 1.96)\n";
    txt += fmt::format("{:<18} {:>9} {:>9} {:>9} {:>9}\n", "Model", "Anomalies", "INS Sig.",
                       "VLD Sig.", "Test Sig.");
    for (const auto& s : report.significance) {
      txt += fmt::format("{:<18} {:>9} {:>9} {:>9} {:>9}\n", s.label, s.anomalies, s.ins, s.vld, s.test);
    }
  }
  if (!report.dissect.empty()) {
    txt += "\nHoldout portfolios (R^2 in %)\n";
    txt += fmt::format("{:<18}", "Model");
    for (const auto& h : report.holdout_sets) txt += fmt::format(" {:>12} {:>12}", h + " VLD", h + " Test");
    txt += '\n';
    for (const auto& d : report.dissect) {
      txt += fmt::format("{:<18}", d.label);
      for (const auto& s : d.sets) txt += fmt::format(" {:>12} {:>12}", percent(s.vld_r2), percent(s.test_r2));
      txt += '\n';
    }
  }
  if (!report.reference_losses.empty() || !report.curves.empty()) {
    txt += "\nTraining loss\n";
    for (const auto& c : report.curves) {
      if (c.loss.empty()) continue;
      txt += fmt::format("{:<18} first {:.6e}  last {:.6e}\n", c.model, c.loss.front(), c.loss.back());
    }
    for (const auto& [name, loss] : report.reference_losses) {
      txt += fmt::format("{:<18} OLS   {:.6e}\n", name, loss);
    }
  }
  detail::write_text_file(dir / "summary.txt", txt);
}

namespace {

std::vector<std::string> parse_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(field));
      field.clear();
    } else {
      field += c;
    }
  }
  out.push_back(std::move(field));
  return out;
}

double number(const std::string& text, const detail::LineReader& in) {
  double v = kNaN;
  if (!text.empty() && !detail::parse_double(text, v)) {
    throw DataError(fmt::format("{}: bad number '{}'", in.where(), text));
  }
  return v;
}

}  // namespace

std::vector<OosRecord> load_oos_table(const std::filesystem::path& path) {
  detail::LineReader in(path);
  std::string line;
  if (!in.next(line)) throw DataError(fmt::format("{}: empty file", path.string()));
  std::vector<OosRecord> out;
  while (in.next(line)) {
    const auto f = parse_csv_line(line);
    if (f.size() != 12) throw DataError(fmt::format("{}: expected 12 fields", in.where()));
    OosRecord r;
    r.label = f[0];
    r.cell = f[1];
    r.ins_r2 = number(f[3], in);
    r.vld_r2 = number(f[4], in);
    r.test_r2 = number(f[5], in);
    r.vld_rmse = number(f[6], in);
    r.test_rmse = number(f[7], in);
    r.baseline_vld_rmse = number(f[8], in);
    r.baseline_test_rmse = number(f[9], in);
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<LossPoint> load_loss_curves(const std::filesystem::path& path) {
  detail::LineReader in(path);
  std::string line;
  if (!in.next(line)) throw DataError(fmt::format("{}: empty file", path.string()));
  std::vector<LossPoint> out;
  while (in.next(line)) {
    const auto f = parse_csv_line(line);
    if (f.size() != 3) throw DataError(fmt::format("{}: expected 3 fields", in.where()));
    LossPoint p;
    p.model = f[0];
    p.epoch = static_cast<int>(number(f[1], in));
    p.loss = number(f[2], in);
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace deepfactor
