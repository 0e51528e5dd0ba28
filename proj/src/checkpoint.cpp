#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "deepfactor/errors.hpp"
#include "deepfactor/training.hpp"
#include "text_table.hpp"

namespace deepfactor {

namespace {

using nlohmann::json;

constexpr int kCheckpointVersion = 1;

json matrix_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(rows)}};
}

Matrix matrix_from(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const json& data = j.at("data");
  if (static_cast<Eigen::Index>(data.size()) != rows) {
    throw DataError("checkpoint: matrix row count mismatch");
  }
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const json& row = data.at(static_cast<std::size_t>(i));
    if (static_cast<Eigen::Index>(row.size()) != cols) {
      throw DataError("checkpoint: matrix column count mismatch");
    }
    for (Eigen::Index k = 0; k < cols; ++k) m(i, k) = row.at(static_cast<std::size_t>(k)).get<double>();
  }
  return m;
}

json vector_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vector vector_from(const json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

json model_json(const FactorModel& model) {
  json layers = json::array();
  for (const auto& l : model.net.layers) {
    layers.push_back({{"weight", matrix_json(l.weight)}, {"bias", vector_json(l.bias)}});
  }
  return {
      {"format", "deepfactor-checkpoint"},
      {"version", kCheckpointVersion},
      {"arch",
       {{"layers", model.arch.layers},
        {"factors", model.arch.factors},
        {"conditions", model.arch.conditions},
        {"hidden", model.arch.hidden},
        {"activation", std::string(to_string(model.arch.activation))}}},
      {"benchmark", std::string(to_string(model.benchmark))},
      {"tau", model.tau},
      {"seed", model.seed},
      {"ensemble", model.ensemble},
      {"fit_window", {model.fit_window.begin, model.fit_window.end}},
      {"network", {{"seed", model.net.seed}, {"layers", std::move(layers)}}},
      {"beta", matrix_json(model.coeffs.beta)},
      {"gamma", matrix_json(model.coeffs.gamma)},
      {"conditions",
       {{"directions", matrix_json(model.cond.spec.directions)},
        {"beta_plus", matrix_json(model.cond.beta_plus)},
        {"beta_minus", matrix_json(model.cond.beta_minus)}}},
      {"macro_scaler", {{"mean", vector_json(model.scaler.mean)}, {"sd", vector_json(model.scaler.sd)}}},
      {"loss_curve", model.loss_curve},
      {"final_loss", model.final_loss},
      {"benchmark_loss", model.benchmark_loss},
      {"empty_leg_months", model.empty_leg_months},
  };
}

}  // namespace

std::string checkpoint_json(const FactorModel& model) { return model_json(model).dump(1) + "\n"; }

void save_checkpoint(const FactorModel& model, const std::filesystem::path& path) {
  detail::write_text_file(path, checkpoint_json(model));
}

FactorModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(fmt::format("cannot open checkpoint {}", path.string()));
  json j;
  try {
    j = json::parse(in);
    if (j.at("format") != "deepfactor-checkpoint") {
      throw DataError(fmt::format("{}: not a deepfactor checkpoint", path.string()));
    }
    if (j.at("version").get<int>() != kCheckpointVersion) {
      throw DataError(fmt::format("{}: unsupported checkpoint version", path.string()));
    }
    FactorModel m;
    const json& a = j.at("arch");
    m.arch.layers = a.at("layers").get<int>();
    m.arch.factors = a.at("factors").get<int>();
    m.arch.conditions = a.at("conditions").get<int>();
    m.arch.hidden = a.at("hidden").get<std::vector<int>>();
    m.arch.activation = parse_activation(a.at("activation").get<std::string>());
    m.benchmark = parse_benchmark(j.at("benchmark").get<std::string>());
    m.tau = j.at("tau").get<double>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.ensemble = j.at("ensemble").get<int>();
    const auto window = j.at("fit_window").get<std::vector<std::size_t>>();
    if (window.size() != 2) throw DataError("checkpoint: fit_window needs two entries");
    m.fit_window = {window[0], window[1]};
    m.net.activation = m.arch.activation;
    m.net.seed = j.at("network").at("seed").get<std::uint64_t>();
    for (const json& l : j.at("network").at("layers")) {
      m.net.layers.push_back({matrix_from(l.at("weight")), vector_from(l.at("bias"))});
    }
    m.coeffs.beta = matrix_from(j.at("beta"));
    m.coeffs.gamma = matrix_from(j.at("gamma"));
    const json& c = j.at("conditions");
    m.cond.spec.directions = matrix_from(c.at("directions"));
    m.cond.beta_plus = matrix_from(c.at("beta_plus"));
    m.cond.beta_minus = matrix_from(c.at("beta_minus"));
    m.scaler.mean = vector_from(j.at("macro_scaler").at("mean"));
    m.scaler.sd = vector_from(j.at("macro_scaler").at("sd"));
    m.loss_curve = j.at("loss_curve").get<std::vector<double>>();
    m.final_loss = j.at("final_loss").get<double>();
    m.benchmark_loss = j.at("benchmark_loss").get<double>();
    m.empty_leg_months = j.at("empty_leg_months").get<int>();
    m.arch.validate();
    return m;
  } catch (const json::exception& e) {
    throw DataError(fmt::format("{}: malformed checkpoint ({})", path.string(), e.what()));
  }
}

}  // namespace deepfactor
