#include "deepfactor/network.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include <fmt/format.h>

#include "deepfactor/errors.hpp"
#include "text_table.hpp"

namespace deepfactor {

namespace {

constexpr std::string_view kFormatTag = "deepfactor-network";
constexpr int kFormatVersion = 1;

// 1 - 2 / (exp(2x) + 1): vectorizes in double precision where Eigen's tanh does not.
Matrix tanh_of(const Matrix& x) {
  return (1.0 - 2.0 / ((2.0 * x.array()).exp() + 1.0)).matrix();
}

Matrix activate(const Matrix& pre, Activation a) {
  switch (a) {
    case Activation::tanh:
      return tanh_of(pre);
    case Activation::relu:
      return pre.cwiseMax(0.0);
    case Activation::identity:
      return pre;
  }
  return pre;
}

// Elementwise derivative of the activation evaluated at the pre-activation.
Matrix activation_slope(const Matrix& pre, Activation a) {
  switch (a) {
    case Activation::tanh:
      return (1.0 - tanh_of(pre).array().square()).matrix();
    case Activation::relu:
      return (pre.array() > 0.0).cast<double>().matrix();
    case Activation::identity:
      return Matrix::Ones(pre.rows(), pre.cols());
  }
  return Matrix::Ones(pre.rows(), pre.cols());
}

}  // namespace

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::tanh:
      return "tanh";
    case Activation::relu:
      return "relu";
    case Activation::identity:
      return "identity";
  }
  return "tanh";
}

Activation parse_activation(std::string_view name) {
  if (name == "tanh") return Activation::tanh;
  if (name == "relu") return Activation::relu;
  if (name == "identity" || name == "linear") return Activation::identity;
  throw UsageError(fmt::format("unknown activation '{}'", name));
}

Eigen::Index NetworkParams::input_size() const {
  return layers.empty() ? 0 : layers.front().weight.cols();
}

Eigen::Index NetworkParams::output_size() const {
  return layers.empty() ? 0 : layers.back().weight.rows();
}

std::vector<int> NetworkParams::sizes() const {
  std::vector<int> out;
  if (layers.empty()) return out;
  out.push_back(static_cast<int>(input_size()));
  for (const auto& l : layers) out.push_back(static_cast<int>(l.weight.rows()));
  return out;
}

Eigen::Index NetworkParams::parameter_count() const {
  Eigen::Index n = 0;
  for (const auto& l : layers) n += l.weight.size() + l.bias.size();
  return n;
}

std::vector<int> default_hidden_sizes(int layers) {
  if (layers < 0 || layers > 7) {
    throw UsageError(fmt::format("default_hidden_sizes: layer count {} outside 0..7", layers));
  }
  std::vector<int> out;
  for (int l = 1; l <= layers; ++l) out.push_back(1 << (8 - l));
  return out;
}

NetworkParams init_params(const std::vector<int>& sizes, Activation activation,
                          std::uint64_t seed) {
  if (sizes.size() < 2) {
    throw UsageError("init_params: need at least input and output sizes");
  }
  for (int s : sizes) {
    if (s <= 0) {
      throw UsageError(fmt::format("init_params: layer size must be positive, got {}", s));
    }
  }
  NetworkParams params;
  params.activation = activation;
  params.seed = seed;
  Rng rng(seed);
  for (std::size_t l = 1; l < sizes.size(); ++l) {
    const double bound = std::sqrt(6.0 / static_cast<double>(sizes[l - 1] + sizes[l]));
    std::uniform_real_distribution<double> dist(-bound, bound);
    DenseLayer layer;
    layer.weight.resize(sizes[l], sizes[l - 1]);
    for (Eigen::Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = dist(rng);
    layer.bias = Vector::Zero(sizes[l]);
    params.layers.push_back(std::move(layer));
  }
  return params;
}

Matrix forward(const Matrix& z0, const NetworkParams& params, Mode mode,
               const DropoutConfig& dropout, Rng* rng, ForwardCache* cache) {
  if (params.layers.empty()) {
    throw UsageError("forward: network has no layers");
  }
  require_dims("forward: input rows", z0.rows(), params.input_size());
  const bool drop = mode == Mode::train && dropout.keep_probability < 1.0;
  if (drop && rng == nullptr) {
    throw UsageError("forward: train-mode dropout needs a random generator");
  }
  if (drop && !(dropout.keep_probability > 0.0)) {
    throw UsageError("forward: keep probability must be positive");
  }
  if (cache != nullptr) {
    cache->inputs.clear();
    cache->pre_activation.clear();
    cache->dropout.clear();
  }
  // Two 32-bit uniform draws per generator call; keep when the draw falls below the threshold.
  const auto threshold = static_cast<std::uint64_t>(
      std::ldexp(drop ? dropout.keep_probability : 1.0, 32));
  Matrix z = z0;
  const std::size_t last = params.layers.size() - 1;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& layer = params.layers[l];
    require_dims("forward: layer input", z.rows(), layer.weight.cols());
    if (drop) {
      Matrix mask(z.rows(), z.cols());
      const double scale = 1.0 / dropout.keep_probability;
      double* out = mask.data();
      for (Eigen::Index i = 0; i < mask.size(); i += 2) {
        const std::uint64_t bits = (*rng)();
        out[i] = (bits & 0xffffffffULL) < threshold ? scale : 0.0;
        if (i + 1 < mask.size()) out[i + 1] = (bits >> 32) < threshold ? scale : 0.0;
      }
      z = z.cwiseProduct(mask);
      if (cache != nullptr) cache->dropout.push_back(std::move(mask));
    }
    Matrix pre = layer.weight * z;
    pre.colwise() += layer.bias;
    if (cache != nullptr) {
      cache->inputs.push_back(z);
    }
    z = l == last ? pre : activate(pre, params.activation);
    if (cache != nullptr) {
      cache->pre_activation.push_back(std::move(pre));
    }
  }
  return z;
}

NetworkGradients backward(const ForwardCache& cache, const NetworkParams& params,
                          const Matrix& grad_y) {
  const std::size_t depth = params.layers.size();
  if (cache.inputs.size() != depth || cache.pre_activation.size() != depth ||
      (!cache.dropout.empty() && cache.dropout.size() != depth)) {
    throw DimensionError("backward: cache does not match the network depth");
  }
  require_dims("backward: grad rows", grad_y.rows(), params.output_size());
  require_dims("backward: grad cols", grad_y.cols(), cache.pre_activation.back().cols());
  NetworkGradients grads;
  grads.weight.resize(depth);
  grads.bias.resize(depth);
  Matrix delta = grad_y;  // gradient w.r.t. the layer output
  for (std::size_t l = depth; l-- > 0;) {
    const auto& layer = params.layers[l];
    require_dims("backward: cached input", cache.inputs[l].rows(), layer.weight.cols());
    if (l != depth - 1) {
      delta = delta.cwiseProduct(activation_slope(cache.pre_activation[l], params.activation));
    }
    grads.weight[l] = delta * cache.inputs[l].transpose();
    grads.bias[l] = delta.rowwise().sum();
    Matrix grad_in = layer.weight.transpose() * delta;
    if (!cache.dropout.empty()) {
      grad_in = grad_in.cwiseProduct(cache.dropout[l]);
    }
    delta = std::move(grad_in);
  }
  grads.input = std::move(delta);
  return grads;
}

void save_params(std::ostream& out, const NetworkParams& params) {
  out << kFormatTag << ' ' << kFormatVersion << '\n';
  out << "activation " << to_string(params.activation) << '\n';
  out << "seed " << params.seed << '\n';
  out << "sizes";
  for (int s : params.sizes()) out << ' ' << s;
  out << '\n';
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& layer = params.layers[l];
    out << "layer " << l + 1 << '\n';
    for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) {
      for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) {
        out << (j == 0 ? "" : " ") << detail::format_double(layer.weight(i, j));
      }
      out << '\n';
    }
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) {
      out << (i == 0 ? "" : " ") << detail::format_double(layer.bias[i]);
    }
    out << '\n';
  }
}

NetworkParams load_params(std::istream& in) {
  auto fail = [](const std::string& what) {
    return DataError(fmt::format("load_params: {}", what));
  };
  std::string tag;
  int version = 0;
  if (!(in >> tag >> version) || tag != kFormatTag) throw fail("missing format header");
  if (version != kFormatVersion) throw fail(fmt::format("unsupported version {}", version));
  std::string key;
  std::string act;
  NetworkParams params;
  if (!(in >> key >> act) || key != "activation") throw fail("missing activation");
  params.activation = parse_activation(act);
  if (!(in >> key >> params.seed) || key != "seed") throw fail("missing seed");
  if (!(in >> key) || key != "sizes") throw fail("missing sizes");
  std::string line;
  std::getline(in, line);
  std::istringstream sizes_in(line);
  std::vector<int> sizes;
  for (int s; sizes_in >> s;) sizes.push_back(s);
  if (sizes.size() < 2) throw fail("need at least two sizes");
  for (std::size_t l = 1; l < sizes.size(); ++l) {
    std::size_t index = 0;
    if (!(in >> key >> index) || key != "layer" || index != l) {
      throw fail(fmt::format("missing layer {} block", l));
    }
    DenseLayer layer;
    layer.weight.resize(sizes[l], sizes[l - 1]);
    layer.bias.resize(sizes[l]);
    for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) {
      for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) {
        if (!(in >> layer.weight(i, j))) throw fail(fmt::format("truncated weights in layer {}", l));
      }
    }
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) {
      if (!(in >> layer.bias[i])) throw fail(fmt::format("truncated biases in layer {}", l));
    }
    params.layers.push_back(std::move(layer));
  }
  return params;
}

Vector pack(const NetworkParams& params) {
  Vector out(params.parameter_count());
  Eigen::Index at = 0;
  for (const auto& l : params.layers) {
    out.segment(at, l.weight.size()) = l.weight.reshaped();
    at += l.weight.size();
    out.segment(at, l.bias.size()) = l.bias;
    at += l.bias.size();
  }
  return out;
}

void unpack(const Vector& flat, Eigen::Index offset, NetworkParams& params) {
  if (offset + params.parameter_count() > flat.size()) {
    throw DimensionError("unpack: flat vector too short for the network");
  }
  Eigen::Index at = offset;
  for (auto& l : params.layers) {
    l.weight.reshaped() = flat.segment(at, l.weight.size());
    at += l.weight.size();
    l.bias = flat.segment(at, l.bias.size());
    at += l.bias.size();
  }
}

Vector pack(const NetworkGradients& grads) {
  Eigen::Index n = 0;
  for (std::size_t l = 0; l < grads.weight.size(); ++l) n += grads.weight[l].size() + grads.bias[l].size();
  Vector out(n);
  Eigen::Index at = 0;
  for (std::size_t l = 0; l < grads.weight.size(); ++l) {
    out.segment(at, grads.weight[l].size()) = grads.weight[l].reshaped();
    at += grads.weight[l].size();
    out.segment(at, grads.bias[l].size()) = grads.bias[l];
    at += grads.bias[l].size();
  }
  return out;
}

}  // namespace deepfactor
