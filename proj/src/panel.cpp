#include "deepfactor/panel.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <unordered_map>

#include <fmt/format.h>

#include "deepfactor/errors.hpp"
#include "text_table.hpp"

namespace deepfactor {

using detail::format_double;
using detail::LineReader;
using detail::parse_double;
using detail::split_fields;
using detail::trim;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct FirmRow {
  YearMonth date;
  std::string id;
  double ret = 0.0;
  double me = 0.0;
  std::vector<double> chars;
};

struct SeriesTable {
  std::vector<std::string> names;
  std::vector<YearMonth> dates;
  std::vector<std::vector<double>> rows;  // NaN for empty cells
};

SeriesTable read_series(const std::filesystem::path& path, std::string_view prefix_hint) {
  LineReader reader(path);
  std::string line;
  if (!reader.next(line)) {
    throw DataError(fmt::format("{}: empty file", path.string()));
  }
  const auto header = split_fields(line);
  if (header.size() < 2 || trim(header[0]) != "date") {
    throw DataError(fmt::format("{}: header must be date,{}1..", reader.where(), prefix_hint));
  }
  SeriesTable table;
  for (std::size_t c = 1; c < header.size(); ++c) {
    table.names.emplace_back(trim(header[c]));
  }
  while (reader.next(line)) {
    const auto fields = split_fields(line);
    if (fields.size() != header.size()) {
      throw DataError(fmt::format("{}: expected {} fields, found {}", reader.where(),
                                  header.size(), fields.size()));
    }
    YearMonth date;
    try {
      date = YearMonth::parse(trim(fields[0]));
    } catch (const DataError& e) {
      throw DataError(fmt::format("{}: {}", reader.where(), e.what()));
    }
    if (!table.dates.empty() && !(table.dates.back() < date)) {
      throw DataError(fmt::format("{}: dates must be strictly increasing ({} after {})",
                                  reader.where(), date.str(), table.dates.back().str()));
    }
    std::vector<double> row(table.names.size(), kNaN);
    for (std::size_t c = 1; c < fields.size(); ++c) {
      if (trim(fields[c]).empty()) {
        continue;
      }
      if (!parse_double(fields[c], row[c - 1])) {
        throw DataError(fmt::format("{}: unparseable value '{}' in column {}", reader.where(),
                                    fields[c], table.names[c - 1]));
      }
    }
    table.dates.push_back(date);
    table.rows.push_back(std::move(row));
  }
  return table;
}

// Aligns a table to the panel months. Missing cells either error or forward-fill.
Matrix align_series(const SeriesTable& table, const std::vector<YearMonth>& dates,
                    const std::filesystem::path& path, std::string_view what, bool forward_fill,
                    MaskMatrix* filled) {
  std::map<YearMonth, std::size_t> index;
  for (std::size_t i = 0; i < table.dates.size(); ++i) {
    index.emplace(table.dates[i], i);
  }
  const auto cols = static_cast<Eigen::Index>(table.names.size());
  Matrix out(static_cast<Eigen::Index>(dates.size()), cols);
  if (filled != nullptr) {
    filled->setConstant(out.rows(), cols, false);
  }
  for (std::size_t t = 0; t < dates.size(); ++t) {
    const auto it = index.find(dates[t]);
    if (it == index.end()) {
      throw DataError(fmt::format("{}: {} data missing for month {}", path.string(), what,
                                  dates[t].str()));
    }
    const auto& row = table.rows[it->second];
    for (Eigen::Index c = 0; c < cols; ++c) {
      double v = row[static_cast<std::size_t>(c)];
      if (std::isnan(v)) {
        if (!forward_fill) {
          throw DataError(fmt::format("{}: missing {} value for {} in month {}", path.string(),
                                      what, table.names[static_cast<std::size_t>(c)],
                                      dates[t].str()));
        }
        // Forward fill from the previous table row, not the previous panel month.
        std::size_t r = it->second;
        while (r > 0 && std::isnan(v)) {
          --r;
          v = table.rows[r][static_cast<std::size_t>(c)];
        }
        if (std::isnan(v)) {
          throw DataError(fmt::format("{}: {} value for {} missing in month {} with nothing to "
                                      "forward-fill from",
                                      path.string(), what,
                                      table.names[static_cast<std::size_t>(c)], dates[t].str()));
        }
        (*filled)(static_cast<Eigen::Index>(t), c) = true;
      }
      out(static_cast<Eigen::Index>(t), c) = v;
    }
  }
  return out;
}

std::string series_text(const std::vector<YearMonth>& dates, const std::vector<std::string>& names,
                        const Matrix& values) {
  std::string out = "date";
  for (const auto& n : names) {
    out += ',';
    out += n;
  }
  out += '\n';
  for (std::size_t t = 0; t < dates.size(); ++t) {
    out += dates[t].str();
    for (Eigen::Index c = 0; c < values.cols(); ++c) {
      out += ',';
      out += format_double(values(static_cast<Eigen::Index>(t), c));
    }
    out += '\n';
  }
  return out;
}

}  // namespace

YearMonth YearMonth::parse(std::string_view text) {
  text = trim(text);
  int year = 0;
  int month = 0;
  if (text.size() != 7 || text[4] != '-') {
    throw DataError(fmt::format("invalid date '{}', expected YYYY-MM", text));
  }
  const auto y = std::from_chars(text.data(), text.data() + 4, year);
  const auto m = std::from_chars(text.data() + 5, text.data() + 7, month);
  if (y.ec != std::errc() || y.ptr != text.data() + 4 || m.ec != std::errc() ||
      m.ptr != text.data() + 7 || month < 1 || month > 12) {
    throw DataError(fmt::format("invalid date '{}', expected YYYY-MM", text));
  }
  return {year, month};
}

std::string YearMonth::str() const { return fmt::format("{:04d}-{:02d}", year, month); }

YearMonth YearMonth::next() const {
  return month == 12 ? YearMonth{year + 1, 1} : YearMonth{year, month + 1};
}

Mask CrossSection::eligible() const {
  Mask out(firms());
  for (Eigen::Index j = 0; j < firms(); ++j) {
    out[j] = observed.rows() == 0 || observed.col(j).all();
  }
  return out;
}

void PanelDataset::validate() const {
  const auto t = static_cast<Eigen::Index>(dates.size());
  if (panel.size() != dates.size()) {
    throw DataError("dataset: panel month count differs from dates");
  }
  require_dims("dataset macro rows", macro.rows(), t);
  require_dims("dataset macro cols", macro.cols(), macros());
  require_dims("dataset factor rows", factors.rows(), t);
  require_dims("dataset factor cols", factors.cols(), benchmarks());
  require_dims("dataset portfolio rows", portfolios.rows(), t);
  require_dims("dataset portfolio cols", portfolios.cols(), assets());
  for (std::size_t i = 1; i < dates.size(); ++i) {
    if (!(dates[i - 1] < dates[i])) {
      throw DataError(fmt::format("dataset: months not strictly increasing at {}", dates[i].str()));
    }
  }
  for (std::size_t i = 0; i < panel.size(); ++i) {
    const auto& cs = panel[i];
    const auto m = cs.firms();
    if (static_cast<Eigen::Index>(cs.firm_ids.size()) != m || cs.me.size() != m ||
        cs.chars.rows() != chars() || cs.chars.cols() != m || cs.observed.rows() != chars() ||
        cs.observed.cols() != m) {
      throw DimensionError(fmt::format("dataset: inconsistent cross-section in {}", dates[i].str()));
    }
  }
}

PanelPaths PanelPaths::in_directory(const std::filesystem::path& dir) {
  return {dir / "firms.csv", dir / "macro.csv", dir / "factors.csv", dir / "portfolios.csv"};
}

PanelDataset load_panel(const PanelPaths& paths, const LoadOptions& options) {
  PanelDataset data;
  std::vector<FirmRow> rows;
  {
    LineReader reader(paths.firms);
    std::string line;
    if (!reader.next(line)) {
      throw DataError(fmt::format("{}: empty file", paths.firms.string()));
    }
    const auto header = split_fields(line);
    static constexpr std::string_view kFixed[] = {"date", "firm_id", "ret", "me"};
    if (header.size() < 5) {
      throw DataError(fmt::format("{}: header must be date,firm_id,ret,me,c1..cK", reader.where()));
    }
    for (std::size_t c = 0; c < 4; ++c) {
      if (trim(header[c]) != kFixed[c]) {
        throw DataError(fmt::format("{}: column {} must be '{}', found '{}'", reader.where(), c + 1,
                                    kFixed[c], trim(header[c])));
      }
    }
    for (std::size_t c = 4; c < header.size(); ++c) {
      data.char_names.emplace_back(trim(header[c]));
    }
    const std::size_t k = data.char_names.size();
    while (reader.next(line)) {
      const auto fields = split_fields(line);
      if (fields.size() != header.size()) {
        throw DataError(fmt::format("{}: expected {} fields, found {}", reader.where(),
                                    header.size(), fields.size()));
      }
      FirmRow row;
      try {
        row.date = YearMonth::parse(fields[0]);
      } catch (const DataError& e) {
        throw DataError(fmt::format("{}: {}", reader.where(), e.what()));
      }
      if (!rows.empty() && row.date < rows.back().date) {
        throw DataError(fmt::format("{}: dates must be non-decreasing ({} after {})",
                                    reader.where(), row.date.str(), rows.back().date.str()));
      }
      row.id = std::string(trim(fields[1]));
      if (row.id.empty()) {
        throw DataError(fmt::format("{}: empty firm_id", reader.where()));
      }
      if (!parse_double(fields[2], row.ret)) {
        throw DataError(fmt::format("{}: unparseable or missing return '{}'", reader.where(),
                                    fields[2]));
      }
      if (!parse_double(fields[3], row.me)) {
        throw DataError(fmt::format("{}: unparseable or missing market equity '{}'",
                                    reader.where(), fields[3]));
      }
      row.chars.assign(k, kNaN);
      for (std::size_t c = 0; c < k; ++c) {
        if (trim(fields[4 + c]).empty()) {
          continue;
        }
        if (!parse_double(fields[4 + c], row.chars[c])) {
          throw DataError(fmt::format("{}: unparseable value '{}' in column {}", reader.where(),
                                      fields[4 + c], data.char_names[c]));
        }
      }
      if (!rows.empty() && rows.back().date == row.date && rows.back().id == row.id) {
        throw DataError(fmt::format("{}: duplicate firm {} in {}", reader.where(), row.id,
                                    row.date.str()));
      }
      rows.push_back(std::move(row));
    }
  }

  // Negative or zero lagged market equity rows are excluded.
  std::erase_if(rows, [](const FirmRow& r) { return !(r.me > 0.0); });

  std::unordered_map<std::string, int> history;
  for (const auto& r : rows) {
    ++history[r.id];
  }
  std::erase_if(rows, [&](const FirmRow& r) { return history[r.id] < options.min_history; });

  const auto k = static_cast<Eigen::Index>(data.char_names.size());
  std::size_t i = 0;
  while (i < rows.size()) {
    std::size_t j = i;
    while (j < rows.size() && rows[j].date == rows[i].date) {
      ++j;
    }
    std::vector<std::size_t> members(j - i);
    std::iota(members.begin(), members.end(), i);
    if (members.size() > options.universe_cap) {
      std::stable_sort(members.begin(), members.end(),
                       [&](std::size_t a, std::size_t b) { return rows[a].me > rows[b].me; });
      members.resize(options.universe_cap);
      std::sort(members.begin(), members.end());
    }
    {
      std::vector<std::string_view> ids;
      for (std::size_t idx : members) ids.push_back(rows[idx].id);
      std::sort(ids.begin(), ids.end());
      if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
        throw DataError(fmt::format("{}: duplicate firm id in month {}", paths.firms.string(),
                                    rows[i].date.str()));
      }
    }
    CrossSection cs;
    const auto m = static_cast<Eigen::Index>(members.size());
    cs.ret.resize(m);
    cs.me.resize(m);
    cs.chars.resize(k, m);
    cs.observed.resize(k, m);
    for (Eigen::Index c = 0; c < m; ++c) {
      const auto& r = rows[members[static_cast<std::size_t>(c)]];
      cs.firm_ids.push_back(r.id);
      cs.ret[c] = r.ret;
      cs.me[c] = r.me;
      for (Eigen::Index q = 0; q < k; ++q) {
        cs.chars(q, c) = r.chars[static_cast<std::size_t>(q)];
        cs.observed(q, c) = !std::isnan(cs.chars(q, c));
      }
    }
    data.dates.push_back(rows[i].date);
    data.panel.push_back(std::move(cs));
    i = j;
  }
  if (data.dates.empty()) {
    throw DataError(fmt::format("{}: no firm-months left after filtering", paths.firms.string()));
  }

  const auto macro = read_series(paths.macro, "x");
  const auto factors = read_series(paths.factors, "g");
  const auto ports = read_series(paths.portfolios, "R");
  data.macro_names = macro.names;
  data.factor_names = factors.names;
  data.portfolio_names = ports.names;
  data.macro = align_series(macro, data.dates, paths.macro, "macro", true, &data.macro_filled);
  data.factors = align_series(factors, data.dates, paths.factors, "factor", false, nullptr);
  data.portfolios = align_series(ports, data.dates, paths.portfolios, "portfolio", false, nullptr);
  data.validate();
  return data;
}

void write_panel(const PanelDataset& data, const PanelPaths& paths) {
  data.validate();
  std::string firms = "date,firm_id,ret,me";
  for (const auto& n : data.char_names) {
    firms += ',';
    firms += n;
  }
  firms += '\n';
  for (std::size_t t = 0; t < data.months(); ++t) {
    const auto& cs = data.panel[t];
    const std::string date = data.dates[t].str();
    for (Eigen::Index j = 0; j < cs.firms(); ++j) {
      firms += date;
      firms += ',';
      firms += cs.firm_ids[static_cast<std::size_t>(j)];
      firms += ',';
      firms += format_double(cs.ret[j]);
      firms += ',';
      firms += format_double(cs.me[j]);
      for (Eigen::Index q = 0; q < data.chars(); ++q) {
        firms += ',';
        if (cs.observed(q, j)) {
          firms += format_double(cs.chars(q, j));
        }
      }
      firms += '\n';
    }
  }
  detail::write_text_file(paths.firms, firms);
  detail::write_text_file(paths.macro, series_text(data.dates, data.macro_names, data.macro));
  detail::write_text_file(paths.factors, series_text(data.dates, data.factor_names, data.factors));
  detail::write_text_file(paths.portfolios,
                          series_text(data.dates, data.portfolio_names, data.portfolios));
}

Matrix load_series_table(const std::filesystem::path& path, const std::vector<YearMonth>& dates,
                         std::vector<std::string>* names) {
  const auto table = read_series(path, "c");
  if (names != nullptr) {
    *names = table.names;
  }
  return align_series(table, dates, path, "series", false, nullptr);
}

void write_series_table(const std::filesystem::path& path, const std::vector<YearMonth>& dates,
                        const std::vector<std::string>& names, const Matrix& values) {
  require_dims("write_series_table rows", values.rows(), static_cast<Eigen::Index>(dates.size()));
  require_dims("write_series_table cols", values.cols(), static_cast<Eigen::Index>(names.size()));
  detail::write_text_file(path, series_text(dates, names, values));
}

void rank_normalize_row(Eigen::Ref<Eigen::RowVectorXd> values,
                        Eigen::Ref<Eigen::Array<bool, 1, Eigen::Dynamic>> observed) {
  std::vector<double> present;
  std::vector<Eigen::Index> where;
  for (Eigen::Index j = 0; j < values.size(); ++j) {
    if (observed[j] && std::isfinite(values[j])) {
      present.push_back(values[j]);
      where.push_back(j);
    } else {
      observed[j] = false;
    }
  }
  if (present.size() < 2) {
    values.setZero();
    observed.setConstant(false);
    return;
  }
  const auto ranks = rank_ascending(present);
  const double m = static_cast<double>(present.size());
  values.setZero();
  for (std::size_t i = 0; i < present.size(); ++i) {
    values[where[i]] = (2.0 * ranks[i] - m - 1.0) / (m - 1.0);
  }
}

PanelDataset rank_normalize(const PanelDataset& data) {
  PanelDataset out = data;
  for (auto& cs : out.panel) {
    for (Eigen::Index q = 0; q < cs.chars.rows(); ++q) {
      Eigen::RowVectorXd row = cs.chars.row(q);
      Eigen::Array<bool, 1, Eigen::Dynamic> obs = cs.observed.row(q);
      rank_normalize_row(row, obs);
      cs.chars.row(q) = row;
      cs.observed.row(q) = obs;
    }
  }
  out.normalized = true;
  return out;
}

MacroScaler MacroScaler::fit(const Matrix& macro, std::size_t begin, std::size_t end) {
  if (end <= begin || end > static_cast<std::size_t>(macro.rows())) {
    throw UsageError("MacroScaler::fit: invalid month range");
  }
  MacroScaler s;
  const auto e = macro.cols();
  s.mean = Vector::Zero(e);
  s.sd = Vector::Ones(e);
  const double n = static_cast<double>(end - begin);
  for (Eigen::Index c = 0; c < e; ++c) {
    double sum = 0.0;
    for (std::size_t t = begin; t < end; ++t) sum += macro(static_cast<Eigen::Index>(t), c);
    const double m = sum / n;
    double ss = 0.0;
    for (std::size_t t = begin; t < end; ++t) {
      const double d = macro(static_cast<Eigen::Index>(t), c) - m;
      ss += d * d;
    }
    s.mean[c] = m;
    const double sd = std::sqrt(ss / n);
    s.sd[c] = sd > 0.0 ? sd : 1.0;
  }
  return s;
}

Vector MacroScaler::apply(const Vector& raw) const {
  require_dims("MacroScaler::apply", raw.size(), mean.size());
  Vector out(raw.size());
  for (Eigen::Index c = 0; c < raw.size(); ++c) {
    out[c] = std::clamp((raw[c] - mean[c]) / sd[c], -1.0, 1.0);
  }
  return out;
}

InputTensor build_input(const Matrix& chars, const MaskMatrix& observed, const Vector& macro) {
  const auto k = chars.rows();
  const auto m = chars.cols();
  const auto e = macro.size();
  require_dims("build_input mask rows", observed.rows(), k);
  require_dims("build_input mask cols", observed.cols(), m);
  InputTensor in;
  in.z.resize(input_rows(k, e), m);
  in.mask.resize(in.z.rows(), m);
  for (Eigen::Index j = 0; j < m; ++j) {
    for (Eigen::Index q = 0; q < k; ++q) {
      const bool obs = observed(q, j);
      in.z(q, j) = obs ? chars(q, j) : 0.0;
      in.mask(q, j) = obs;
    }
    for (Eigen::Index c = 0; c < e; ++c) {
      in.z(k + c, j) = macro[c];
      in.mask(k + c, j) = true;
    }
    for (Eigen::Index c = 0; c < e; ++c) {
      for (Eigen::Index q = 0; q < k; ++q) {
        const Eigen::Index row = k + e + c * k + q;
        in.z(row, j) = in.z(q, j) * macro[c];
        in.mask(row, j) = in.mask(q, j);
      }
    }
  }
  return in;
}

SplitConfig SplitConfig::calendar(YearMonth train_end, YearMonth valid_end) {
  SplitConfig c;
  c.train_end = train_end;
  c.valid_end = valid_end;
  return c;
}

SampleSplit split(const std::vector<YearMonth>& dates, const SplitConfig& config) {
  const std::size_t t = dates.size();
  if (t < 3) {
    throw UsageError("split: need at least three months");
  }
  SampleSplit s;
  s.train.begin = 0;
  s.test.end = t;
  if (config.train_end && config.valid_end) {
    if (config.test_start && *config.test_start <= *config.valid_end) {
      throw UsageError(fmt::format("split: test start {} overlaps validation ending {}",
                                   config.test_start->str(), config.valid_end->str()));
    }
    if (config.test_start && *config.test_start != config.valid_end->next()) {
      throw UsageError(fmt::format("split: gap between validation end {} and test start {}",
                                   config.valid_end->str(), config.test_start->str()));
    }
    if (!(*config.train_end < *config.valid_end)) {
      throw UsageError("split: validation must end after training");
    }
    auto upper = [&](YearMonth ym) {
      return static_cast<std::size_t>(std::upper_bound(dates.begin(), dates.end(), ym) -
                                      dates.begin());
    };
    s.train.end = upper(*config.train_end);
    s.valid = {s.train.end, upper(*config.valid_end)};
  } else {
    if (!(config.train_fraction > 0.0) || !(config.valid_fraction > 0.0) ||
        config.train_fraction + config.valid_fraction >= 1.0) {
      throw UsageError("split: fractions must be positive and sum to less than one");
    }
    s.train.end = static_cast<std::size_t>(std::lround(config.train_fraction * static_cast<double>(t)));
    s.valid = {s.train.end, static_cast<std::size_t>(std::lround(
                                (config.train_fraction + config.valid_fraction) *
                                static_cast<double>(t)))};
  }
  s.test.begin = s.valid.end;
  if (s.train.empty() || s.valid.empty() || s.test.empty()) {
    throw UsageError(fmt::format("split: empty range (train {}, validation {}, test {})",
                                 s.train.size(), s.valid.size(), s.test.size()));
  }
  return s;
}

}  // namespace deepfactor
