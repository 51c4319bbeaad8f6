#include <gtest/gtest.h>

#include "support.hpp"

using namespace protact;

namespace {

Matrix ones(Eigen::Index r, Eigen::Index c) { return Matrix::Ones(r, c); }

// Three traits, column 0 plays Overall; columns 1 and 2 perfectly correlated.
struct Batch {
  Matrix y, yhat, mask;
};

Batch correlated_batch(Rng& rng, Eigen::Index n) {
  Batch b{Matrix(n, 3), Matrix(n, 3), ones(n, 3)};
  for (Eigen::Index i = 0; i < n; ++i) {
    const double q = rng.uniform();
    b.y.row(i) << q, q, 0.5 * q + 0.1;
    b.yhat.row(i) << rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95);
  }
  return b;
}

}  // namespace

TEST(MaskedMse, HandExample) {
  Matrix y(1, 2), yhat(1, 2), mask(1, 2);
  y << 1, 0;
  yhat << 0.5, 0.5;
  mask << 1, 0;
  EXPECT_NEAR(masked_mse(y, yhat, mask).value, 0.125, 1e-12);
  EXPECT_EQ(masked_mse(y, y, ones(1, 2)).value, 0.0);
}

TEST(MaskedMse, ShapeMismatchThrows) {
  EXPECT_THROW(masked_mse(Matrix::Zero(2, 2), Matrix::Zero(2, 3), Matrix::Zero(2, 2)), std::invalid_argument);
}

TEST(Similarity, PearsonAndCosine) {
  Vector a(3), b(3), c(3);
  a << 1, 2, 3;
  b << 2, 4, 6;
  c << 3, 2, 1;
  EXPECT_NEAR(*pearson(a, b), 1.0, 1e-12);
  EXPECT_NEAR(*pearson(a, c), -1.0, 1e-12);
  Vector e1(2), e2(2);
  e1 << 1, 0;
  e2 << 0, 1;
  EXPECT_NEAR(*cosine(e1, e2), 0.0, 1e-12);
  EXPECT_FALSE(pearson(Vector::Constant(3, 2.0), a).has_value());
  EXPECT_FALSE(cosine(Vector::Zero(2), e1).has_value());
}

TEST(TraitSimilarity, ParallelPredictionsGiveZero) {
  LossConfig cfg;
  Matrix y(3, 3), yhat(3, 3);
  y << 0.5, 0.1, 0.2, 0.5, 0.2, 0.4, 0.5, 0.3, 0.6;
  yhat << 0.9, 0.1, 0.2, 0.1, 0.3, 0.6, 0.4, 0.2, 0.4;
  auto ts = trait_similarity_loss(y, yhat, ones(3, 3), cfg);
  EXPECT_NEAR(ts.value, 0.0, 1e-12);
}

TEST(TraitSimilarity, OrthogonalPredictionsGiveOne) {
  LossConfig cfg;
  Matrix y(2, 3), yhat(2, 3);
  y << 0.3, 0.2, 0.4, 0.3, 0.6, 0.8;
  yhat << 0.5, 1, 0, 0.5, 0, 1;
  auto ts = trait_similarity_loss(y, yhat, ones(2, 3), cfg);
  EXPECT_NEAR(ts.value, 1.0, 1e-12);
  EXPECT_EQ(ts.terms, 1);
}

TEST(TraitSimilarity, PairBelowThresholdContributesNothing) {
  LossConfig cfg;
  Matrix y(4, 3), yhat(4, 3);
  y.col(0).setConstant(0.5);
  y.col(1) << 1, 2, 3, 4;
  y.col(2) << 3, 1, 2, 4;
  ASSERT_NEAR(*pearson(y.col(1), y.col(2)), 0.4, 1e-12);
  yhat.setRandom();
  EXPECT_EQ(trait_similarity_loss(y, yhat, ones(4, 3), cfg).value, 0.0);
}

TEST(TotalLoss, Interpolation) {
  LossConfig cfg;
  Matrix y(2, 3), yhat(2, 3), mask = ones(2, 3);
  y << 0.3, 0.2, 0.4, 0.3, 0.6, 0.8;
  yhat << 0.3, 1, 0, 0.3, 0, 1;
  auto tl = total_loss(y, yhat, mask, cfg);
  EXPECT_NEAR(tl.total, 0.7 * tl.mse + 0.3 * tl.ts, 1e-12);
  cfg.lambda = 1.0;
  EXPECT_EQ(total_loss(y, yhat, mask, cfg).total, masked_mse(y, yhat, mask).value);
  cfg.lambda = 0.7;
  cfg.use_ts_loss = false;
  EXPECT_EQ(total_loss(y, yhat, mask, cfg).total, masked_mse(y, yhat, mask).value);
}

TEST(TotalLoss, ComposesToWorkedValue) {
  LossConfig cfg;
  Matrix y(2, 3), yhat(2, 3), mask = ones(2, 3);
  y << 0.5, 0.5, 0.5, 0.5, 0, 0;
  yhat << 0, 0.5, 0, 0.5, 0, 0.5;
  auto tl = total_loss(y, yhat, mask, cfg);
  EXPECT_NEAR(tl.mse, 0.125, 1e-12);
  EXPECT_NEAR(tl.ts, 1.0, 1e-12);
  EXPECT_NEAR(tl.total, 0.3875, 1e-12);
}

TEST(TotalLoss, GradientMatchesFiniteDifferences) {
  Rng rng(5);
  LossConfig cfg;
  int checked = 0;
  for (int trial = 0; trial < 100; ++trial) {
    auto b = correlated_batch(rng, 5);
    for (Eigen::Index i = 0; i < 5; ++i) {
      for (Eigen::Index j = 0; j < 3; ++j) b.mask(i, j) = rng.uniform() < 0.15 ? 0.0 : 1.0;
    }
    auto base = total_loss(b.y, b.yhat, b.mask, cfg);
    const double h = 1e-5;
    for (Eigen::Index i = 0; i < 5; ++i) {
      for (Eigen::Index j = 0; j < 3; ++j) {
        Matrix p = b.yhat, m = b.yhat;
        p(i, j) += h;
        m(i, j) -= h;
        const double fd = (total_loss(b.y, p, b.mask, cfg).total - total_loss(b.y, m, b.mask, cfg).total) / (2 * h);
        if (std::abs(fd) < 1e-7 && std::abs(base.grad(i, j)) < 1e-7) continue;
        EXPECT_LT(fixtures::relative_error(fd, base.grad(i, j)), 1e-4) << "trial " << trial;
        ++checked;
      }
    }
  }
  EXPECT_GT(checked, 1000);
}

TEST(TotalLoss, MaskedCellsDoNotMatter) {
  Rng rng(9);
  LossConfig cfg;
  for (int trial = 0; trial < 50; ++trial) {
    auto b = correlated_batch(rng, 6);
    b.mask(trial % 6, 1 + trial % 2) = 0;
    b.mask((trial + 3) % 6, 0) = 0;
    const double before = total_loss(b.y, b.yhat, b.mask, cfg).total;
    for (Eigen::Index i = 0; i < 6; ++i) {
      for (Eigen::Index j = 0; j < 3; ++j) {
        if (b.mask(i, j) == 0) {
          b.y(i, j) = rng.uniform();
          b.yhat(i, j) = rng.uniform();
        }
      }
    }
    EXPECT_EQ(total_loss(b.y, b.yhat, b.mask, cfg).total, before);
  }
}

TEST(TraitSimilarity, BoundedAndScaleInvariant) {
  Rng rng(11);
  LossConfig cfg;
  for (int trial = 0; trial < 100; ++trial) {
    auto b = correlated_batch(rng, 8);
    auto ts = trait_similarity_loss(b.y, b.yhat, b.mask, cfg);
    EXPECT_GE(ts.value, 0.0);
    EXPECT_LE(ts.value, 2.0);
    Matrix scaled = b.yhat;
    scaled.col(1) *= 3.0;
    EXPECT_LT(std::abs(trait_similarity_loss(b.y, scaled, b.mask, cfg).value - ts.value), 1e-9);
  }
}

TEST(TraitSimilarity, OverallExcludedAndGateHelper) {
  LossConfig cfg;
  Matrix y(3, 3);
  y << 0.1, 0.1, 0.9, 0.5, 0.5, 0.5, 0.9, 0.9, 0.1;
  auto gate = trait_gate(y, ones(3, 3), cfg);
  EXPECT_EQ(gate(0, 1), 0.0);
  EXPECT_EQ(gate(1, 2), 0.0);
  cfg.exclude_overall = false;
  EXPECT_EQ(trait_gate(y, ones(3, 3), cfg)(0, 1), 1.0);
}

TEST(LossConfig, RejectsOutOfRangeValues) {
  LossConfig cfg;
  cfg.lambda = 1.5;
  EXPECT_THROW(cfg.validate(), ConfigError);
  LossConfig c2;
  EXPECT_THROW(merge_json(c2, nlohmann::json{{"criterion", "spearman"}}), ConfigError);
}
