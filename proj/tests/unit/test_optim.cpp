#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>

#include "funmatch/linalg.hpp"
#include "funmatch/optim.hpp"
#include "funmatch/schedule.hpp"
#include "shampoo_oracle.hpp"
#include "test_support.hpp"

namespace funmatch {
namespace {

using testing::random_spd;
using testing::random_tensor;

// Schedule

ScheduleConfig schedule(Decay decay) { return ScheduleConfig{0.4, 1800, 10000, decay}; }

TEST(Schedule, Anchors) {
  for (Decay d : {Decay::quadratic, Decay::cosine}) {
    const ScheduleConfig s = schedule(d);
    EXPECT_NEAR(lr_at(1799, s), 0.4, 1e-12);
    EXPECT_NEAR(lr_at(1800, s), 0.4, 1e-12);
    EXPECT_NEAR(lr_at(10000, s), 0.0, 1e-12);
    EXPECT_NEAR(lr_at(0, s), 0.4 / 1800.0, 1e-12);
  }
  EXPECT_NEAR(lr_at(1800 + 4100, schedule(Decay::quadratic)), 0.1, 1e-12);
  EXPECT_NEAR(lr_at(1800 + 4100, schedule(Decay::cosine)), 0.2, 1e-12);
}

TEST(Schedule, MonotoneAfterWarmup) {
  for (Decay d : {Decay::quadratic, Decay::cosine}) {
    const ScheduleConfig s = schedule(d);
    for (std::size_t step = 0; step < 1799; ++step) EXPECT_LT(lr_at(step, s), lr_at(step + 1, s));
    for (std::size_t step = 1800; step < 10000; ++step) EXPECT_GE(lr_at(step, s), lr_at(step + 1, s));
  }
}

TEST(Schedule, Errors) {
  EXPECT_THROW(lr_at(10001, schedule(Decay::quadratic)), ConfigError);
  ScheduleConfig bad = schedule(Decay::cosine);
  bad.warmup_steps = bad.total_steps;
  EXPECT_THROW(bad.validate(), ConfigError);
  EXPECT_THROW(parse_decay("linear"), ConfigError);
}

TEST(Schedule, ScaledWarmup) {
  EXPECT_EQ(scaled_warmup(100000), 1800u);
  EXPECT_EQ(scaled_warmup(5000), 500u);
  EXPECT_EQ(scaled_warmup(9), 0u);
}

// Inverse pth root

Tensor<double> identity(std::size_t n) {
  Tensor<double> eye({n, n});
  for (std::size_t i = 0; i < n; ++i) eye[i * n + i] = 1.0;
  return eye;
}

TEST(InverseRoot, IdentityIsExact) {
  for (int p : {2, 4, 6, 8}) {
    for (std::size_t n : {1u, 5u, 128u}) EXPECT_EQ(inverse_pth_root(identity(n), p, 0.0), identity(n));
  }
}

TEST(InverseRoot, ScalarArithmetic) {
  const Tensor<double> x = inverse_pth_root(Tensor<double>({1, 1}, {4.0}), 4, 0.0);
  EXPECT_NEAR(x[0], 0.7071067811865476, 1e-15);
}

TEST(InverseRoot, ResidualForRandomSpd) {
  std::mt19937_64 rng(1);
  for (std::size_t n : {8u, 64u, 128u}) {
    for (double cond : {10.0, 1e3, 1e6}) {
      const Tensor<double> a = random_spd(n, cond, rng);
      for (int p : {2, 4}) {
        const double residual = testing::inverse_root_residual(inverse_pth_root(a, p, 0.0), a, p, 0.0);
        EXPECT_LT(residual, 1e-6) << "n=" << n << " cond=" << cond << " p=" << p;
      }
    }
  }
}

TEST(InverseRoot, DampingEntersTheResidual) {
  std::mt19937_64 rng(2);
  const Tensor<double> a = random_spd(16, 100.0, rng);
  EXPECT_LT(testing::inverse_root_residual(inverse_pth_root(a, 4, 0.5), a, 4, 0.5), 1e-10);
}

TEST(InverseRoot, Errors) {
  EXPECT_THROW(inverse_pth_root(identity(3), 3, 0.0), ConfigError);
  EXPECT_THROW(inverse_pth_root(Tensor<double>({2, 3}), 2, 0.0), ShapeError);
  Tensor<double> asym = identity(2);
  asym[1] = 1e-6;
  EXPECT_THROW(inverse_pth_root(asym, 2, 0.0), NumericError);
  EXPECT_THROW(inverse_pth_root(Tensor<double>({2, 2}, {1.0, 0.0, 0.0, -0.1}), 2, 1e-3), NumericError);
  EXPECT_THROW(inverse_pth_root(Tensor<double>({2, 2}), 2, 0.0), NumericError);
}

// Optimizers

Parameters<double> single(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Parameters<double> p;
  p.add("w", random_tensor(std::move(shape), rng));
  return p;
}

OptimConfig config(OptimizerKind kind) {
  OptimConfig c;
  c.kind = kind;
  return c;
}

TEST(Sgd, ZeroGradientZeroDecayLeavesParamsUnchanged) {
  for (OptimizerKind kind : {OptimizerKind::sgd, OptimizerKind::adam}) {
    Parameters<double> p = single({3, 4}, 1);
    const Parameters<double> before = p;
    auto opt = make_optimizer<double>(config(kind));
    const std::vector<Tensor<double>> g{Tensor<double>({3, 4})};
    for (int i = 0; i < 3; ++i) opt->step(p, g, 0.1);
    EXPECT_EQ(p, before);
  }
}

TEST(Sgd, NesterovWithZeroMomentumIsGradientDescent) {
  OptimConfig c = config(OptimizerKind::sgd);
  c.momentum = 0.0;
  Parameters<double> p = single({5}, 2);
  const Tensor<double> w0 = p.at("w");
  std::mt19937_64 rng(3);
  const std::vector<Tensor<double>> g{random_tensor({5}, rng)};
  make_optimizer<double>(c)->step(p, g, 0.25);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_DOUBLE_EQ(p.at("w")[i], w0[i] - 0.25 * g[0][i]);
}

TEST(Sgd, DecoupledWeightDecay) {
  OptimConfig c = config(OptimizerKind::sgd);
  c.weight_decay = 0.1;
  Parameters<double> p;
  p.add("w", Tensor<double>({1}, {2.0}));
  make_optimizer<double>(c)->step(p, std::vector<Tensor<double>>{Tensor<double>({1})}, 0.5);
  EXPECT_DOUBLE_EQ(p.at("w")[0], 2.0 * (1.0 - 0.5 * 0.1));
}

TEST(Sgd, TwoStepMomentumByHand) {
  OptimConfig c = config(OptimizerKind::sgd);
  c.momentum = 0.5;
  for (bool nesterov : {false, true}) {
    c.nesterov = nesterov;
    Parameters<double> p;
    p.add("w", Tensor<double>({1}, {0.0}));
    auto opt = make_optimizer<double>(c);
    const std::vector<Tensor<double>> g{Tensor<double>({1}, {1.0})};
    opt->step(p, g, 1.0);
    opt->step(p, g, 1.0);
    // m1 = 1, m2 = 1.5. Heavy ball: -(1 + 1.5). Nesterov: -(1 + 0.5) - (1 + 0.75).
    EXPECT_DOUBLE_EQ(p.at("w")[0], nesterov ? -3.25 : -2.5);
  }
}

TEST(Adam, ZeroBetasGiveNormalizedStep) {
  OptimConfig c = config(OptimizerKind::adam);
  c.adam_beta1 = 0.0;
  c.adam_beta2 = 0.0;
  c.adam_eps = 1e-3;
  Parameters<double> p = single({6}, 4);
  const Tensor<double> w0 = p.at("w");
  const std::vector<Tensor<double>> g{Tensor<double>({6}, {0.5, -2.0, 1e-4, -1e-3, 3.0, 0.0})};
  make_optimizer<double>(c)->step(p, g, 0.1);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_NEAR(p.at("w")[i], w0[i] - 0.1 * g[0][i] / (std::abs(g[0][i]) + 1e-3), 1e-7);
  }
}

TEST(Adam, FirstStepIsBiasCorrected) {
  Parameters<double> p;
  p.add("w", Tensor<double>({2}, {0.0, 0.0}));
  make_optimizer<double>(config(OptimizerKind::adam))->step(p, std::vector<Tensor<double>>{Tensor<double>({2}, {3.0, -0.01})}, 0.1);
  EXPECT_NEAR(p.at("w")[0], -0.1, 1e-7);
  EXPECT_NEAR(p.at("w")[1], 0.1, 1e-5);
}

TEST(Clip, GlobalNorm) {
  std::vector<Tensor<double>> g{Tensor<double>({2}, {3.0, 0.0}), Tensor<double>({1}, {4.0})};
  EXPECT_DOUBLE_EQ(clip_global_norm<double>(g, 10.0), 5.0);
  EXPECT_EQ(g[0][0], 3.0);
  EXPECT_DOUBLE_EQ(clip_global_norm<double>(g, 2.5), 5.0);
  EXPECT_DOUBLE_EQ(g[0][0], 1.5);
  EXPECT_DOUBLE_EQ(g[1][0], 2.0);
  std::mt19937_64 rng(5);
  for (double max_norm : {0.1, 1.0, 100.0}) {
    std::vector<Tensor<double>> r{random_tensor({4, 4}, rng), random_tensor({7}, rng)};
    const double before = clip_global_norm<double>(r, max_norm);
    EXPECT_NEAR(global_norm<double>(r), std::min(before, max_norm), 1e-6);
  }
}

TEST(Optimizer, ShapeDriftIsAnError) {
  for (OptimizerKind kind : {OptimizerKind::sgd, OptimizerKind::adam, OptimizerKind::shampoo}) {
    auto opt = make_optimizer<double>(config(kind));
    Parameters<double> p = single({2, 3}, 6);
    opt->step(p, std::vector<Tensor<double>>{Tensor<double>({2, 3})}, 0.1);
    Parameters<double> q = single({3, 2}, 6);
    EXPECT_THROW(opt->step(q, std::vector<Tensor<double>>{Tensor<double>({3, 2})}, 0.1), ShapeError);
    EXPECT_THROW(opt->step(p, std::vector<Tensor<double>>{}, 0.1), ShapeError);
  }
}

TEST(Optimizer, DeterministicAcrossRuns) {
  for (OptimizerKind kind : {OptimizerKind::sgd, OptimizerKind::adam, OptimizerKind::shampoo}) {
    const auto run = [&] {
      Parameters<double> p = single({20, 9}, 7);
      auto opt = make_optimizer<double>(config(kind));
      std::mt19937_64 rng(8);
      for (int i = 0; i < 5; ++i) opt->step(p, std::vector<Tensor<double>>{random_tensor({20, 9}, rng)}, 0.05);
      return p;
    };
    EXPECT_EQ(run(), run());
  }
}

TEST(Optimizer, StateRoundTripResumesIdentically) {
  for (OptimizerKind kind : {OptimizerKind::sgd, OptimizerKind::adam, OptimizerKind::shampoo}) {
    std::mt19937_64 rng(9);
    std::vector<Tensor<double>> grads;
    for (int i = 0; i < 4; ++i) grads.push_back(random_tensor({6, 5}, rng));
    // The state is exported as f32, so start from f32-representable statistics.
    for (auto& g : grads) g = g.cast<float>().cast<double>();
    Parameters<double> a = single({6, 5}, 10);
    auto full = make_optimizer<double>(config(kind));
    for (const auto& g : grads) full->step(a, std::span(&g, 1), 0.1);

    Parameters<double> b = single({6, 5}, 10);
    auto first = make_optimizer<double>(config(kind));
    for (int i = 0; i < 2; ++i) first->step(b, std::span(&grads[i], 1), 0.1);
    const auto state = first->export_state();
    auto resumed = make_optimizer<double>(config(kind));
    resumed->import_state(b, state);
    EXPECT_EQ(resumed->steps(), 2u);
    for (int i = 2; i < 4; ++i) resumed->step(b, std::span(&grads[i], 1), 0.1);
    for (std::size_t j = 0; j < a.at("w").size(); ++j) EXPECT_NEAR(a.at("w")[j], b.at("w")[j], 1e-5) << to_string(kind);
  }
}

// Shampoo

TEST(Shampoo, EpsDominatedFirstStepIsMomentumSgd) {
  OptimConfig sh = config(OptimizerKind::shampoo);
  sh.shampoo_eps = 1.0;
  OptimConfig sgd = config(OptimizerKind::sgd);
  std::mt19937_64 rng(11);
  const std::vector<Tensor<double>> g{random_tensor({10, 7}, rng, -1e-3, 1e-3)};
  Parameters<double> a = single({10, 7}, 12), b = a;
  make_optimizer<double>(sh)->step(a, g, 0.5);
  make_optimizer<double>(sgd)->step(b, g, 0.5);
  for (std::size_t j = 0; j < 70; ++j) EXPECT_NEAR(a.at("w")[j], b.at("w")[j], 1e-6);
}

TEST(Shampoo, MatricizationAndBlocks) {
  EXPECT_EQ(matricized_extent({3, 3, 16, 32}), (std::pair<std::size_t, std::size_t>{144, 32}));
  EXPECT_EQ(matricized_extent({300, 10}), (std::pair<std::size_t, std::size_t>{300, 10}));
  ShampooOptimizer<double> opt(config(OptimizerKind::shampoo));
  Parameters<double> p;
  p.add("kernel", Tensor<double>({3, 3, 32, 64}));
  p.add("bias", Tensor<double>({200}));
  opt.step(p, std::vector<Tensor<double>>{Tensor<double>({3, 3, 32, 64}), Tensor<double>({200})}, 0.0);
  const auto kb = opt.blocks(0);
  ASSERT_EQ(kb.size(), 3u);  // 288 rows -> 128 + 128 + 32
  EXPECT_EQ(kb[2].row_begin, 256u);
  EXPECT_EQ(kb[2].row_end, 288u);
  for (const auto& b : kb) {
    EXPECT_LE(b.left.dim(0), 128u);
    EXPECT_LE(b.right.dim(0), 128u);
  }
  const auto bb = opt.blocks(1);
  ASSERT_EQ(bb.size(), 2u);
  EXPECT_TRUE(bb[0].vector);
  EXPECT_EQ(bb[1].left.shape(), (Shape{72, 72}));
}

TEST(Shampoo, BlockedEqualsUnblockedForSmallParams) {
  std::mt19937_64 rng(13);
  std::vector<std::vector<Tensor<double>>> grads(4);
  for (auto& g : grads) g = {random_tensor({3, 3, 4, 8}, rng), random_tensor({8}, rng), random_tensor({100, 128}, rng)};
  const auto run = [&](std::size_t block) {
    OptimConfig c = config(OptimizerKind::shampoo);
    c.block_size = block;
    c.weight_decay = 1e-3;
    auto opt = make_optimizer<double>(c);
    std::mt19937_64 init(14);
    Parameters<double> p;
    p.add("k", random_tensor({3, 3, 4, 8}, init));
    p.add("b", random_tensor({8}, init));
    p.add("d", random_tensor({100, 128}, init));
    for (const auto& g : grads) opt->step(p, g, 0.01);
    return p;
  };
  EXPECT_EQ(run(128), run(1000));
}

TEST(Shampoo, WideLayerMatchesNaivePerBlockOracle) {
  const std::size_t n = 256;
  std::mt19937_64 rng(15);
  Parameters<double> params;
  params.add("w", random_tensor({n, n}, rng));
  Eigen::MatrixXd w(n, n);
  for (std::size_t i = 0; i < n * n; ++i) w(static_cast<Eigen::Index>(i / n), static_cast<Eigen::Index>(i % n)) = params.at("w")[i];

  OptimConfig c = config(OptimizerKind::shampoo);
  c.shampoo_eps = 1e-4;
  ShampooOptimizer<double> opt(c);
  testing::NaiveShampoo oracle(n, n, 128, c.shampoo_eps, c.momentum);
  for (int s = 0; s < 3; ++s) {
    const Tensor<double> g = random_tensor({n, n}, rng);
    Eigen::MatrixXd ge(n, n);
    for (std::size_t i = 0; i < n * n; ++i) ge(static_cast<Eigen::Index>(i / n), static_cast<Eigen::Index>(i % n)) = g[i];
    opt.step(params, std::span(&g, 1), 0.01);
    oracle.step(w, ge, 0.01);
  }
  ASSERT_EQ(opt.blocks(0).size(), 4u);
  double worst = 0.0;
  for (std::size_t i = 0; i < n * n; ++i) {
    worst = std::max(worst, std::abs(params.at("w")[i] - w(static_cast<Eigen::Index>(i / n), static_cast<Eigen::Index>(i % n))));
  }
  EXPECT_LT(worst, 1e-10);
}

TEST(Shampoo, StatisticsStaySymmetricPsd) {
  ShampooOptimizer<double> opt(config(OptimizerKind::shampoo));
  Parameters<double> p = single({40, 30}, 16);
  std::mt19937_64 rng(17);
  for (int s = 0; s < 10; ++s) {
    opt.step(p, std::vector<Tensor<double>>{random_tensor({40, 30}, rng)}, 0.01);
    for (const ShampooBlock& b : opt.blocks(0)) {
      for (const Tensor<double>* stat : {&b.left, &b.right}) {
        const std::size_t n = stat->dim(0);
        Eigen::MatrixXd m(n, n);
        for (std::size_t i = 0; i < n * n; ++i) m(static_cast<Eigen::Index>(i / n), static_cast<Eigen::Index>(i % n)) = (*stat)[i];
        EXPECT_LT((m - m.transpose()).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_GE(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(m).eigenvalues().minCoeff(), -1e-9);
      }
    }
  }
}

// f(w) = 1/2 w^T diag(1, 100) w from w = (1, 1). Returns the first step with f < 1e-8, or -1.
int steps_to_converge(const OptimConfig& c, bool scheduled, double lr, std::size_t max_steps) {
  auto opt = make_optimizer<double>(c);
  Parameters<double> p;
  p.add("w", Tensor<double>({2}, {1.0, 1.0}));
  for (std::size_t s = 0; s < max_steps; ++s) {
    const Tensor<double>& w = p.at("w");
    const double f = 0.5 * (w[0] * w[0] + 100.0 * w[1] * w[1]);
    if (f < 1e-8) return static_cast<int>(s);
    if (!std::isfinite(f) || f > 1e6) return -1;
    const std::vector<Tensor<double>> g{Tensor<double>({2}, {w[0], 100.0 * w[1]})};
    opt->step(p, g, scheduled ? lr_at(s, c.schedule) : lr);
  }
  return -1;
}

// Thresholds come from an oracle run of this exact setup: Shampoo (warmup 20,
// quadratic decay over 200 steps, peak 1.0) converged in 39 steps; the best
// SGD over lr {0.3, 0.1, 0.03, 0.01} with and without Nesterov momentum took
// 98 steps (lr 0.01, momentum 0.9), every larger lr diverged.
TEST(Shampoo, BeatsBestSgdOnIllConditionedQuadratic) {
  OptimConfig sh = config(OptimizerKind::shampoo);
  sh.schedule = ScheduleConfig{1.0, scaled_warmup(200), 200, Decay::quadratic};
  const int shampoo = steps_to_converge(sh, true, 0.0, 200);
  int best_sgd = -1;
  for (double momentum : {0.0, 0.9}) {
    OptimConfig sgd = config(OptimizerKind::sgd);
    sgd.momentum = momentum;
    for (double lr : {0.3, 0.1, 0.03, 0.01}) {
      const int steps = steps_to_converge(sgd, false, lr, 5000);
      if (steps >= 0 && (best_sgd < 0 || steps < best_sgd)) best_sgd = steps;
    }
  }
  ASSERT_GE(shampoo, 0);
  ASSERT_GE(best_sgd, 0);
  EXPECT_LE(shampoo, 45);
  EXPECT_GE(best_sgd, 90);
  EXPECT_LT(shampoo, best_sgd);
}

TEST(Shampoo, RefreshIntervalReusesRoots) {
  std::mt19937_64 rng(18);
  std::vector<Tensor<double>> grads;
  for (int i = 0; i < 3; ++i) grads.push_back(random_tensor({5, 4}, rng));
  const auto run = [&](std::size_t interval) {
    OptimConfig c = config(OptimizerKind::shampoo);
    c.refresh_interval = interval;
    auto opt = make_optimizer<double>(c);
    Parameters<double> p = single({5, 4}, 19);
    for (const auto& g : grads) opt->step(p, std::span(&g, 1), 0.1);
    return p;
  };
  EXPECT_NE(run(1), run(10));
  EXPECT_EQ(run(1), run(1));
}

TEST(OptimConfig, Validation) {
  OptimConfig c;
  c.weight_decay = -1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = OptimConfig{};
  c.block_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_EQ(parse_optimizer("shampoo"), OptimizerKind::shampoo);
  EXPECT_THROW(parse_optimizer("lamb"), ConfigError);
}

}  // namespace
}  // namespace funmatch
