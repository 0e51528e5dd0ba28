#include <cmath>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "deepfactor/errors.hpp"
#include "deepfactor/network.hpp"
#include "deepfactor/panel.hpp"
#include "support.hpp"

using namespace deepfactor;
using deepfactor::fixtures::random_matrix;

TEST(Network, DefaultHiddenWidths) {
  EXPECT_EQ(default_hidden_sizes(4), (std::vector<int>{128, 64, 32, 16}));
  EXPECT_EQ(default_hidden_sizes(1), (std::vector<int>{128}));
  EXPECT_TRUE(default_hidden_sizes(0).empty());
  EXPECT_THROW(default_hidden_sizes(8), UsageError);
  EXPECT_EQ(input_rows(15, 10), 175);
}

TEST(Network, InitShapesAndGlorotBounds) {
  const auto p = init_params({6, 4, 2}, Activation::tanh, 3);
  EXPECT_EQ(p.sizes(), (std::vector<int>{6, 4, 2}));
  EXPECT_EQ(p.parameter_count(), 6 * 4 + 4 + 4 * 2 + 2);
  EXPECT_LE(p.layers[0].weight.cwiseAbs().maxCoeff(), std::sqrt(6.0 / 10.0));
  EXPECT_EQ(p.layers[0].bias, Vector::Zero(4));
  const auto q = init_params({6, 4, 2}, Activation::tanh, 3);
  EXPECT_EQ(p.layers[1].weight, q.layers[1].weight);
  EXPECT_THROW(init_params({6}, Activation::tanh, 3), UsageError);
}

TEST(Network, TanhMatchesStandardLibrary) {
  NetworkParams p;
  p.activation = Activation::tanh;
  p.layers.push_back({Matrix::Identity(1, 1), Vector::Zero(1)});
  p.layers.push_back({Matrix::Identity(1, 1), Vector::Zero(1)});
  Matrix z(1, 7);
  z << -800.0, -3.0, -0.5, 0.0, 1e-9, 2.0, 800.0;
  const Matrix y = forward(z, p, Mode::eval);
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    EXPECT_NEAR(y(0, j), std::tanh(z(0, j)), 1e-15);
  }
}

TEST(Network, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(19);
  for (auto act : {Activation::tanh, Activation::relu}) {
    auto p = init_params({5, 4, 3, 2}, act, 8);
    for (auto& l : p.layers) l.bias = deepfactor::fixtures::random_vector(l.bias.size(), rng, 0.1);
    const Matrix z = random_matrix(5, 7, rng);
    const Matrix w = random_matrix(2, 7, rng);
    ForwardCache cache;
    forward(z, p, Mode::eval, {}, nullptr, &cache);
    const auto grads = backward(cache, p, w);
    const Vector analytic = pack(grads);
    const Vector theta = pack(p);
    const double h = 1e-6;
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
      Vector tp = theta, tm = theta;
      tp[i] += h;
      tm[i] -= h;
      auto pp = p, pm = p;
      unpack(tp, 0, pp);
      unpack(tm, 0, pm);
      const double fd = ((forward(z, pp, Mode::eval).cwiseProduct(w)).sum() -
                         (forward(z, pm, Mode::eval).cwiseProduct(w)).sum()) / (2 * h);
      EXPECT_NEAR(analytic[i], fd, 1e-7) << "parameter " << i;
    }
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      Matrix zp = z, zm = z;
      zp.data()[i] += h;
      zm.data()[i] -= h;
      const double fd = ((forward(zp, p, Mode::eval).cwiseProduct(w)).sum() -
                         (forward(zm, p, Mode::eval).cwiseProduct(w)).sum()) / (2 * h);
      EXPECT_NEAR(grads.input.data()[i], fd, 1e-7);
    }
  }
}

TEST(Network, DropoutIsInvertedAndSeeded) {
  NetworkParams p;
  p.activation = Activation::identity;
  p.layers.push_back({Matrix::Identity(1, 1), Vector::Zero(1)});
  const Matrix z = Matrix::Ones(1, 200000);
  Rng rng(4);
  const Matrix y = forward(z, p, Mode::train, {0.9}, &rng);
  for (Eigen::Index j = 0; j < y.cols(); ++j) {
    ASSERT_TRUE(y(0, j) == 0.0 || std::abs(y(0, j) - 1.0 / 0.9) < 1e-15);
  }
  EXPECT_NEAR(y.mean(), 1.0, 5e-3);
  Rng again(4);
  EXPECT_EQ(forward(z, p, Mode::train, {0.9}, &again), y);
  EXPECT_EQ(forward(z, p, Mode::eval), z);
  EXPECT_THROW(forward(z, p, Mode::train, {0.9}, nullptr), UsageError);
}

TEST(Network, SaveLoadRoundTrip) {
  const auto p = init_params({3, 5, 1}, Activation::relu, 77);
  std::stringstream s;
  save_params(s, p);
  const auto q = load_params(s);
  EXPECT_EQ(q.activation, Activation::relu);
  EXPECT_EQ(q.seed, 77u);
  EXPECT_EQ(pack(q), pack(p));
  std::stringstream bad("deepfactor-network 2\n");
  EXPECT_THROW(load_params(bad), DataError);
}

TEST(Network, ParseActivation) {
  EXPECT_EQ(parse_activation("identity"), Activation::identity);
  EXPECT_EQ(to_string(Activation::tanh), "tanh");
  EXPECT_THROW(parse_activation("sigmoid"), UsageError);
}
