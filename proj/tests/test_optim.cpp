#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "ffr/optim.hpp"

using namespace ffr;
using ad::Tensor;

namespace {

std::vector<ad::Parameter> params(std::vector<double> w, std::vector<double> g) {
  std::vector<ad::Parameter> p;
  p.emplace_back("w", Tensor::row(std::move(w)));
  p[0].grad() = Tensor::row(std::move(g));
  return p;
}

}  // namespace

TEST(AdamW, ZeroGradientZeroDecayLeavesWeights) {
  auto p = params({0.5, -1.0, 2.0}, {0.0, 0.0, 0.0});
  AdamW opt({0.9, 0.999, 1e-8, 0.0});
  for (int i = 0; i < 5; ++i) opt.step(p, 1e-3);
  EXPECT_EQ(p[0].value().data, (std::vector<double>{0.5, -1.0, 2.0}));
  EXPECT_EQ(opt.steps(), 5u);
}

TEST(AdamW, FirstStepMovesByLearningRate) {
  auto p = params({1.0, 1.0, 1.0}, {3.0, -0.02, 1e-3});
  AdamW opt({0.9, 0.999, 1e-8, 0.0});
  opt.step(p, 1e-3);
  // m_hat = g, v_hat = g^2: the step is lr * g / (|g| + eps).
  const std::vector<double> g{3.0, -0.02, 1e-3};
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR(p[0].value().data[i], 1.0 - 1e-3 * g[i] / (std::abs(g[i]) + 1e-8), 1e-15);
    EXPECT_NEAR(std::abs(p[0].value().data[i] - 1.0), 1e-3, 1e-7);
  }
}

TEST(AdamW, DecayOnlyShrinksByFactor) {
  auto p = params({2.0, -4.0}, {0.0, 0.0});
  AdamW opt;  // weight decay 0.01
  opt.step(p, 5e-4);
  EXPECT_NEAR(p[0].value().data[0], 2.0 * (1 - 5e-4 * 0.01), 1e-15);
  EXPECT_NEAR(p[0].value().data[1], -4.0 * (1 - 5e-4 * 0.01), 1e-15);
}

TEST(AdamW, SecondStepMatchesHandRecursion) {
  auto p = params({0.3}, {0.5});
  AdamWConfig cfg;
  AdamW opt(cfg);
  opt.step(p, 1e-2);
  p[0].grad() = Tensor::row({-0.2});
  opt.step(p, 2e-2);

  double w = 0.3, m = 0, v = 0;
  const double gs[2] = {0.5, -0.2}, lrs[2] = {1e-2, 2e-2};
  for (int t = 1; t <= 2; ++t) {
    const double g = gs[t - 1], lr = lrs[t - 1];
    w *= 1 - lr * cfg.weight_decay;
    m = cfg.beta1 * m + (1 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1 - cfg.beta2) * g * g;
    w -= lr * (m / (1 - std::pow(cfg.beta1, t))) / (std::sqrt(v / (1 - std::pow(cfg.beta2, t))) + cfg.eps);
  }
  EXPECT_NEAR(p[0].value().data[0], w, 1e-15);
}

TEST(AdamW, ParameterSetMismatchIsAnError) {
  auto p = params({1.0}, {1.0});
  AdamW opt;
  opt.step(p, 1e-3);
  p.emplace_back("extra", Tensor::row({1.0}));
  EXPECT_THROW(opt.step(p, 1e-3), std::invalid_argument);
}

TEST(CyclicLR, HandValues) {
  const CyclicLR s;
  EXPECT_DOUBLE_EQ(lr_at(0, s), 5e-4);
  EXPECT_DOUBLE_EQ(lr_at(20, s), 1e-5);
  EXPECT_NEAR(lr_at(10, s), 2.55e-4, 1e-18);
  EXPECT_DOUBLE_EQ(lr_at(40, s), 5e-4);
  EXPECT_NEAR(lr_at(30, s), 2.55e-4, 1e-18);
  EXPECT_THROW(lr_at(-1, s), std::invalid_argument);
}

TEST(CyclicLR, PeriodicAndBounded) {
  const CyclicLR s;
  for (double e = 0; e < 150; e += 0.37) {
    EXPECT_GE(s.at(e), 1e-5 - 1e-18);
    EXPECT_LE(s.at(e), 5e-4 + 1e-18);
    EXPECT_NEAR(s.at(e), s.at(e + 40), 1e-15);
  }
}

TEST(CyclicLR, PhaseOptionStartsAtMinimum) {
  CyclicLR s;
  s.start_at_max = false;
  EXPECT_DOUBLE_EQ(s.at(0), 1e-5);
  EXPECT_DOUBLE_EQ(s.at(20), 5e-4);
}

TEST(CyclicLR, Validation) {
  CyclicLR s;
  s.lr_min = 0;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = {};
  s.period_epochs = 0;
  EXPECT_THROW(s.validate(), std::invalid_argument);
}
