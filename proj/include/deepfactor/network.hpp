#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "deepfactor/core_math.hpp"

namespace deepfactor {

using Rng = std::mt19937_64;

enum class Activation { tanh, relu, identity };

std::string_view to_string(Activation a);
Activation parse_activation(std::string_view name);

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out
};

/// Affine layers applied column by column (one column per firm). Every layer but
/// the last uses the hidden activation; the last one is linear.
struct NetworkParams {
  std::vector<DenseLayer> layers;
  Activation activation = Activation::tanh;
  std::uint64_t seed = 0;

  Eigen::Index input_size() const;
  Eigen::Index output_size() const;
  /// Layer widths including the input: {K0, K1, ..., KL}.
  std::vector<int> sizes() const;
  Eigen::Index parameter_count() const;
};

/// Hidden widths 2^(8 - l) for l = 1..layers, e.g. 128-64-32-16 for four layers.
std::vector<int> default_hidden_sizes(int layers);

/// Glorot-uniform weights, zero biases. `sizes` is {K0, hidden..., P}.
NetworkParams init_params(const std::vector<int>& sizes, Activation activation,
                          std::uint64_t seed);

enum class Mode { train, eval };

struct ForwardCache {
  std::vector<Matrix> inputs;          // input to each layer, after dropout
  std::vector<Matrix> pre_activation;  // A z + b for each layer
  std::vector<Matrix> dropout;         // scaled keep masks (train mode only)
};

struct DropoutConfig {
  double keep_probability = 0.9;
};

/// Y = network(Z0). Train mode applies inverted dropout to every layer input.
Matrix forward(const Matrix& z0, const NetworkParams& params, Mode mode,
               const DropoutConfig& dropout = {}, Rng* rng = nullptr,
               ForwardCache* cache = nullptr);

struct NetworkGradients {
  std::vector<Matrix> weight;
  std::vector<Vector> bias;
  Matrix input;
};

NetworkGradients backward(const ForwardCache& cache, const NetworkParams& params,
                          const Matrix& grad_y);

/// Versioned text format: header with sizes, activation and seed, then one line per row.
void save_params(std::ostream& out, const NetworkParams& params);
NetworkParams load_params(std::istream& in);

/// Flattened parameter vector in layer order (weights column-major, then bias).
Vector pack(const NetworkParams& params);
void unpack(const Vector& flat, Eigen::Index offset, NetworkParams& params);
Vector pack(const NetworkGradients& grads);

}  // namespace deepfactor
