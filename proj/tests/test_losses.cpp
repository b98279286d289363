#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "antispoof/errors.hpp"
#include "antispoof/losses.hpp"

using namespace antispoof;

namespace {

constexpr double kStep = 1e-4;
constexpr double kRelTol = 1e-4;

::testing::AssertionResult close(double numeric, double analytic) {
  const double tol = kRelTol * std::max({std::abs(numeric), std::abs(analytic), 1e-3});
  if (std::abs(numeric - analytic) <= tol) return ::testing::AssertionSuccess();
  return ::testing::AssertionFailure() << "numeric " << numeric << " analytic " << analytic;
}

Eigen::VectorXd random_vec(std::mt19937_64& rng, int n) {
  std::normal_distribution<double> d(0.0, 1.0);
  Eigen::VectorXd v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

Label random_label(std::mt19937_64& rng) { return (rng() & 1) ? Label::kSpoofed : Label::kGenuine; }

}  // namespace

TEST(WeightedCe, HalfScoreGivesLog2) {
  EXPECT_NEAR(weighted_ce(0.5, Label::kGenuine, 1.0), std::log(2.0), 1e-12);
  EXPECT_NEAR(weighted_ce(0.5, Label::kSpoofed, 1.0), std::log(2.0), 1e-12);
}

TEST(WeightedCe, SpoofedWeightOneNinth) {
  EXPECT_NEAR(weighted_ce(0.5, Label::kSpoofed, 1.0 / 9.0), 0.07702, 1e-5);
  EXPECT_NEAR(weighted_ce(0.5, Label::kGenuine, 1.0 / 9.0), std::log(2.0), 1e-12);
}

TEST(WeightedCe, GradientAtPointEightGenuine) {
  EXPECT_NEAR(weighted_ce_grad(0.8, Label::kGenuine, 1.0), 5.0, 1e-12);
  const double fd = (weighted_ce(0.8 + kStep, Label::kGenuine, 1.0) - weighted_ce(0.8 - kStep, Label::kGenuine, 1.0)) /
                    (2 * kStep);
  EXPECT_TRUE(close(fd, 5.0));
}

TEST(WeightedCe, ClampKeepsLossFinite) {
  EXPECT_TRUE(std::isfinite(weighted_ce(0.0, Label::kSpoofed, 1.0)));
  EXPECT_TRUE(std::isfinite(weighted_ce(1.0, Label::kGenuine, 1.0)));
  EXPECT_NEAR(weighted_ce(0.0, Label::kSpoofed, 1.0), -std::log(1e-7), 1e-9);
  EXPECT_EQ(weighted_ce_grad(0.0, Label::kSpoofed, 1.0), 0.0);
}

TEST(WeightedCe, FiniteDifferencesOnRandomInputs) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.01, 0.99), w(0.05, 2.0);
  for (int i = 0; i < 100; ++i) {
    const double s = u(rng), pw = w(rng);
    const Label y = random_label(rng);
    const double fd = (weighted_ce(s + kStep, y, pw) - weighted_ce(s - kStep, y, pw)) / (2 * kStep);
    EXPECT_TRUE(close(fd, weighted_ce_grad(s, y, pw))) << i;
  }
}

TEST(Hinge, IdenticalSameLabelIsZero) {
  Eigen::VectorXd e(3);
  e << 1, 2, 3;
  EXPECT_DOUBLE_EQ(snn_hinge(e, e, Label::kGenuine, Label::kGenuine, 0.5).loss, 0.0);
}

TEST(Hinge, OrthogonalDifferentLabelsIsMargin) {
  Eigen::VectorXd a(2), b(2);
  a << 1, 0;
  b << 0, 3;
  EXPECT_DOUBLE_EQ(snn_hinge(a, b, Label::kGenuine, Label::kSpoofed, 0.5).loss, 0.5);
}

TEST(Hinge, IdenticalDifferentLabelsAndItsGradient) {
  Eigen::VectorXd e(4);
  e << 0.3, -1.2, 0.7, 2.0;
  const auto r = snn_hinge(e, e, Label::kGenuine, Label::kSpoofed, 0.5);
  EXPECT_NEAR(r.loss, 1.5, 1e-12);
  for (int i = 0; i < 4; ++i) {
    Eigen::VectorXd up = e, down = e;
    up[i] += kStep;
    down[i] -= kStep;
    const double fd = (snn_hinge(up, e, Label::kGenuine, Label::kSpoofed, 0.5).loss -
                       snn_hinge(down, e, Label::kGenuine, Label::kSpoofed, 0.5).loss) /
                      (2 * kStep);
    EXPECT_NEAR(fd, r.grad_e1[i], 1e-5);
  }
}

TEST(Hinge, ZeroNormEmbeddingHasZeroCosine) {
  const Eigen::VectorXd z = Eigen::VectorXd::Zero(3);
  Eigen::VectorXd e(3);
  e << 1, 1, 1;
  EXPECT_EQ(cosine_similarity(z, e), 0.0);
  const auto r = snn_hinge(z, e, Label::kGenuine, Label::kGenuine, 0.5);
  EXPECT_DOUBLE_EQ(r.loss, 0.5);
  EXPECT_EQ(r.grad_e1.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(r.grad_e2.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Hinge, DeadZoneHasZeroGradient) {
  Eigen::VectorXd a(3), b(3);
  a << 1, 0.1, 0;
  b << 1, 0, 0.1;
  const auto r = snn_hinge(a, b, Label::kSpoofed, Label::kSpoofed, 0.5);
  EXPECT_EQ(r.loss, 0.0);
  EXPECT_EQ(r.grad_e1.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(r.grad_e2.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Hinge, SymmetricAndScaleInvariant) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 50; ++i) {
    const Eigen::VectorXd a = random_vec(rng, 8), b = random_vec(rng, 8);
    const Label ya = random_label(rng), yb = random_label(rng);
    const double l = snn_hinge(a, b, ya, yb, 0.5).loss;
    EXPECT_NEAR(l, snn_hinge(b, a, yb, ya, 0.5).loss, 1e-12);
    EXPECT_NEAR(l, snn_hinge(3.7 * a, b, ya, yb, 0.5).loss, 1e-12);
    EXPECT_GE(l, 0.0);
  }
}

TEST(Hinge, FiniteDifferencesOnRandomInputs) {
  std::mt19937_64 rng(3);
  int tested = 0;
  while (tested < 100) {
    const Eigen::VectorXd a = random_vec(rng, 16), b = random_vec(rng, 16);
    const Label ya = random_label(rng), yb = random_label(rng);
    const auto r = snn_hinge(a, b, ya, yb, 0.5);
    // Skip the kink itself, where the one-sided derivatives differ.
    const double ld = ya == yb ? 1.0 : -1.0;
    if (std::abs(0.5 - ld * cosine_similarity(a, b)) < 1e-3) continue;
    for (int i = 0; i < 16; ++i) {
      Eigen::VectorXd up = a, down = a;
      up[i] += kStep;
      down[i] -= kStep;
      const double fd1 = (snn_hinge(up, b, ya, yb, 0.5).loss - snn_hinge(down, b, ya, yb, 0.5).loss) / (2 * kStep);
      EXPECT_TRUE(close(fd1, r.grad_e1[i]));
      up = b;
      down = b;
      up[i] += kStep;
      down[i] -= kStep;
      const double fd2 = (snn_hinge(a, up, ya, yb, 0.5).loss - snn_hinge(a, down, ya, yb, 0.5).loss) / (2 * kStep);
      EXPECT_TRUE(close(fd2, r.grad_e2[i]));
    }
    ++tested;
  }
}

TEST(Reconstruction, ZeroForExactCopy) {
  const Eigen::MatrixXd x = Eigen::MatrixXd::Random(4, 6);
  EXPECT_EQ(reconstruction_loss(x, x), 0.0);
}

TEST(Reconstruction, ZerosVersusOnes) {
  EXPECT_DOUBLE_EQ(reconstruction_loss(Eigen::MatrixXd::Zero(2, 2), Eigen::MatrixXd::Ones(2, 2)), 4.0);
}

TEST(Reconstruction, MatchesLoopAndIsSymmetric) {
  const Eigen::MatrixXd x = Eigen::MatrixXd::Random(5, 5), y = Eigen::MatrixXd::Random(5, 5);
  double sum = 0.0;
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) sum += (x(i, j) - y(i, j)) * (x(i, j) - y(i, j));
  EXPECT_NEAR(reconstruction_loss(x, y), sum, 1e-9);
  EXPECT_EQ(reconstruction_loss(x, y), reconstruction_loss(y, x));
}

TEST(Reconstruction, ShapeMismatchThrows) {
  EXPECT_THROW(reconstruction_loss(Eigen::MatrixXd::Zero(2, 3), Eigen::MatrixXd::Zero(3, 2)), InvalidInput);
}

TEST(Reconstruction, FiniteDifferencesOnRandomInputs) {
  for (int t = 0; t < 100; ++t) {
    std::srand(static_cast<unsigned>(t + 1));
    const Eigen::MatrixXd x = Eigen::MatrixXd::Random(3, 4), xh = Eigen::MatrixXd::Random(3, 4);
    const Eigen::MatrixXd g = reconstruction_loss_grad(x, xh);
    for (Eigen::Index i = 0; i < xh.size(); ++i) {
      Eigen::MatrixXd up = xh, down = xh;
      up(i) += kStep;
      down(i) -= kStep;
      const double fd = (reconstruction_loss(x, up) - reconstruction_loss(x, down)) / (2 * kStep);
      EXPECT_TRUE(close(fd, g(i)));
    }
  }
}

TEST(CenterLoss, ZeroAtCentroid) {
  ClassCentroids c(3, 0.5);
  c.spoofed << 1, 2, 3;
  EXPECT_EQ(center_loss(c.spoofed, Label::kSpoofed, c), 0.0);
}

TEST(CenterLoss, HalfSquaredDistance) {
  ClassCentroids c(3, 0.5);
  c.genuine << 1, 1, 1;
  Eigen::VectorXd e = c.genuine;
  e[0] += 2.0;
  EXPECT_DOUBLE_EQ(center_loss(e, Label::kGenuine, c), 2.0);
}

TEST(CenterLoss, CentroidConvergesToBatchClassMean) {
  Eigen::MatrixXd e(4, 2);
  e << 1, 0, 3, 2, -1, -1, 5, 5;
  const std::vector<Label> y = {Label::kGenuine, Label::kGenuine, Label::kSpoofed, Label::kSpoofed};
  ClassCentroids c(2, 0.5);
  const Eigen::Vector2d mean_g(2, 1), mean_s(2, 2);
  for (int t = 1; t <= 40; ++t) {
    c = center_loss_batch(e, y, c).updated;
    // c_t = mean + (1 - rate)^t (c_0 - mean), with c_0 = 0.
    const double decay = std::pow(0.5, t);
    EXPECT_NEAR((c.genuine - (1 - decay) * mean_g).norm(), 0.0, 1e-12);
    EXPECT_NEAR((c.spoofed - (1 - decay) * mean_s).norm(), 0.0, 1e-12);
  }
  EXPECT_NEAR((c.genuine - mean_g).norm(), 0.0, 1e-9);
}

TEST(CenterLoss, FiniteDifferencesOnRandomInputs) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 100; ++t) {
    ClassCentroids c(6, 0.5);
    c.genuine = random_vec(rng, 6);
    c.spoofed = random_vec(rng, 6);
    Eigen::MatrixXd e(3, 6);
    for (int i = 0; i < 3; ++i) e.row(i) = random_vec(rng, 6).transpose();
    const std::vector<Label> y = {random_label(rng), random_label(rng), random_label(rng)};
    const auto r = center_loss_batch(e, y, c);
    for (Eigen::Index i = 0; i < e.size(); ++i) {
      Eigen::MatrixXd up = e, down = e;
      up(i) += kStep;
      down(i) -= kStep;
      const double fd = (center_loss_batch(up, y, c).loss - center_loss_batch(down, y, c).loss) / (2 * kStep);
      EXPECT_TRUE(close(fd, r.grad(i)));
    }
  }
}

TEST(Composite, SnnSumsItsParts) {
  LossParts p;
  p.ce1 = 0.3;
  p.ce2 = 0.4;
  p.snn = 0.1;
  EXPECT_NEAR(composite_loss(LossMode::kSnn, p, LossWeights{}), 0.8, 1e-12);
}

TEST(Composite, CenterLossWeightedByGamma) {
  LossParts p;
  p.ce = 1.0;
  p.cl = 2.0;
  EXPECT_NEAR(composite_loss(LossMode::kCl, p, LossWeights{}), 1.002, 1e-12);
}

TEST(Composite, SnnRelAllZero) {
  LossParts p;
  p.ce1 = p.ce2 = p.snn = p.rel1 = p.rel2 = 0.0;
  EXPECT_EQ(composite_loss(LossMode::kSnnRel, p, LossWeights{}), 0.0);
  p.rel1 = 0.01;
  EXPECT_NEAR(composite_loss(LossMode::kSnnRel, p, LossWeights{}), 0.5, 1e-12);
}

TEST(Composite, MissingPartThrows) {
  LossParts p;
  p.ce1 = 0.3;
  p.snn = 0.1;
  EXPECT_THROW(composite_loss(LossMode::kSnn, p, LossWeights{}), InvalidConfig);
  EXPECT_THROW(composite_loss(LossMode::kCl, LossParts{.ce = 1.0}, LossWeights{}), InvalidConfig);
}

TEST(Weights, DefaultsAndValidation) {
  const LossWeights w;
  EXPECT_EQ(w.cl_gamma, 0.001);
  EXPECT_EQ(w.rel_weight, 50.0);
  EXPECT_EQ(w.margin, 0.5);
  EXPECT_DOUBLE_EQ(w.ce_pos_weight, 1.0 / 9.0);
  LossWeights bad;
  bad.margin = 1.5;
  EXPECT_THROW(bad.validate(), InvalidConfig);
  bad = LossWeights{};
  bad.rel_weight = -1;
  EXPECT_THROW(bad.validate(), InvalidConfig);
}
