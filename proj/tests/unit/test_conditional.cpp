#include <random>

#include <gtest/gtest.h>

#include "deepfactor/conditional.hpp"
#include "deepfactor/errors.hpp"
#include "support.hpp"

using namespace deepfactor;
using deepfactor::fixtures::random_matrix;
using deepfactor::fixtures::random_vector;

namespace {

ConditionalHead random_head(Eigen::Index n, Eigen::Index inputs, Eigen::Index c,
                            std::mt19937_64& rng) {
  ConditionalHead h;
  h.spec.directions = random_matrix(c, inputs, rng);
  h.beta_plus = random_matrix(n, c, rng);
  h.beta_minus = random_matrix(n, c, rng);
  return h;
}

}  // namespace

TEST(ConditionalHead, UnwrappedRegionsReproduceForward) {
  std::mt19937_64 rng(7);
  for (Eigen::Index c = 1; c <= 3; ++c) {
    const auto head = random_head(4, 3, c, rng);
    const auto unwrapped = unwrap_regions(head);
    ASSERT_EQ(unwrapped.coeffs.size(), std::size_t{1} << c);
    for (int rep = 0; rep < 200; ++rep) {
      const Vector x = random_vector(3, rng);
      const auto q = region_index(x, head.spec);
      EXPECT_LT((relu_pairs_forward(x, head) - unwrapped.evaluate(q, x)).cwiseAbs().maxCoeff(),
                1e-12);
    }
  }
}

TEST(ConditionalHead, UpAndDownMarketSlopes) {
  ConditionalHead head;
  head.spec.directions = Matrix::Ones(1, 1);
  head.beta_plus = Matrix::Constant(1, 1, 1.3);
  head.beta_minus = Matrix::Constant(1, 1, -0.7);
  Vector up(1), down(1);
  up << 0.04;
  down << -0.05;
  EXPECT_EQ(relu_pairs_forward(up, head)[0], 1.3 * 0.04);
  EXPECT_EQ(relu_pairs_forward(down, head)[0], 0.7 * -0.05);
  const auto u = unwrap_regions(head);
  EXPECT_EQ(u.coeffs[1](0, 0), 1.3);   // region 2: market up
  EXPECT_EQ(u.coeffs[0](0, 0), 0.7);   // region 1: market down
}

TEST(ConditionalHead, RegionIndexAndPatterns) {
  ConditionSpec spec;
  spec.directions = Matrix::Identity(2, 2);
  Vector x(2);
  x << 1.0, -1.0;
  EXPECT_EQ(region_index(x, spec), 2u);
  x << 0.0, 0.0;
  EXPECT_EQ(region_index(x, spec), 4u);
  EXPECT_EQ(ConditionalCoeffs::sign_pattern(1, 2), "--");
  EXPECT_EQ(ConditionalCoeffs::sign_pattern(2, 2), "+-");
  EXPECT_EQ(ConditionalCoeffs::sign_pattern(4, 2), "++");
}

TEST(ConditionalHead, ZeroDirectionRejected) {
  ConditionSpec spec;
  spec.directions = Matrix::Zero(1, 2);
  EXPECT_THROW(spec.validate(), UsageError);
}

TEST(ConditionalHead, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(13);
  auto head = random_head(3, 4, 2, rng);
  const Vector x = random_vector(4, rng);
  const Vector w = random_vector(3, rng);
  ConditionalGradients g;
  relu_pairs_backward(x, head, w, g);
  const auto loss = [&](const ConditionalHead& h, const Vector& xx) {
    return w.dot(relu_pairs_forward(xx, h));
  };
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < head.spec.directions.size(); ++i) {
    auto hp = head, hm = head;
    hp.spec.directions.data()[i] += h;
    hm.spec.directions.data()[i] -= h;
    EXPECT_NEAR(g.directions.data()[i], (loss(hp, x) - loss(hm, x)) / (2 * h), 1e-8);
  }
  for (Eigen::Index i = 0; i < head.beta_plus.size(); ++i) {
    auto hp = head, hm = head;
    hp.beta_plus.data()[i] += h;
    hm.beta_plus.data()[i] -= h;
    EXPECT_NEAR(g.beta_plus.data()[i], (loss(hp, x) - loss(hm, x)) / (2 * h), 1e-8);
    hp = head;
    hm = head;
    hp.beta_minus.data()[i] += h;
    hm.beta_minus.data()[i] -= h;
    EXPECT_NEAR(g.beta_minus.data()[i], (loss(hp, x) - loss(hm, x)) / (2 * h), 1e-8);
  }
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Vector xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    EXPECT_NEAR(g.x[i], (loss(head, xp) - loss(head, xm)) / (2 * h), 1e-8);
  }
}

TEST(ConditionalHead, CsvExportLabelsRegions) {
  ConditionalHead head;
  head.spec.directions = Matrix::Ones(1, 2);
  head.beta_plus = Matrix::Constant(1, 1, 2.0);
  head.beta_minus = Matrix::Constant(1, 1, 1.0);
  const auto csv = conditional_coeffs_csv(unwrap_regions(head), {"p1"}, {"f1", "mkt"});
  EXPECT_EQ(csv, "region,pattern,asset,f1,mkt\n1,-,p1,-1,-1\n2,+,p1,2,2\n");
  EXPECT_THROW(conditional_coeffs_csv(unwrap_regions(head), {"p1", "p2"}, {"f1", "mkt"}),
               DimensionError);
}
