#include <gtest/gtest.h>

#include <cmath>

#include "sparseflow/c2f/refine.hpp"
#include "sparseflow/core/error.hpp"
#include "test_util.hpp"

using namespace sparseflow;
using namespace sparseflow::c2f;

namespace {

GridSignal random_grid(SeededRng& rng, std::size_t t, std::size_t h, std::size_t w, std::size_t c) {
  return GridSignal(testutil::random_tensor(rng, {t, h, w, c}));
}

GridSignal affine_grid(std::size_t T, std::size_t H, std::size_t W) {
  GridSignal g(T, H, W, 2);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t w = 0; w < W; ++w) {
        g.at(t, h, w, 0) = 0.5 + 2.0 * t - 1.0 * h + 0.25 * w;
        g.at(t, h, w, 1) = -3.0 + 0.1 * t + 0.7 * w;
      }
  return g;
}

template <typename Fn>
ErrorKind kind_of(Fn fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  return ErrorKind::Io;
}

}  // namespace

TEST(Upsample, ConstantStaysConstant) {
  GridSignal c(2, 4, 4, 3, 1.75);
  auto up = upsample_trilinear(c, {2.0, 1.5, 1.5});
  EXPECT_EQ(up.frames(), 4u);
  EXPECT_EQ(up.height(), 6u);
  EXPECT_EQ(up.width(), 6u);
  for (double v : up.tensor().data()) EXPECT_EQ(v, 1.75);
}

TEST(Upsample, RampIsReproduced) {
  GridSignal ramp(1, 1, 4, 1);
  for (std::size_t w = 0; w < 4; ++w) ramp.at(0, 0, w, 0) = static_cast<double>(w);
  auto up = upsample_trilinear(ramp, {1.0, 1.0, 2.0});
  ASSERT_EQ(up.width(), 8u);
  for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(up.at(0, 0, j, 0), 3.0 * j / 7.0, 1e-15);
  EXPECT_EQ(up.at(0, 0, 0, 0), 0.0);
  EXPECT_EQ(up.at(0, 0, 7, 0), 3.0);
}

TEST(Upsample, AffineSignalsAreExact) {
  auto g = affine_grid(3, 4, 6);
  auto up = upsample_trilinear(g, {2.0, 1.5, 1.5});
  const double st = 2.0 / 5.0, sh = 3.0 / 5.0, sw = 5.0 / 8.0;  // (n_in - 1) / (n_out - 1)
  for (std::size_t t = 0; t < up.frames(); ++t)
    for (std::size_t h = 0; h < up.height(); ++h)
      for (std::size_t w = 0; w < up.width(); ++w) {
        const double pt = t * st, ph = h * sh, pw = w * sw;
        EXPECT_NEAR(up.at(t, h, w, 0), 0.5 + 2.0 * pt - 1.0 * ph + 0.25 * pw, 1e-12);
        EXPECT_NEAR(up.at(t, h, w, 1), -3.0 + 0.1 * pt + 0.7 * pw, 1e-12);
      }
}

TEST(Upsample, NonIntegralTarget) {
  GridSignal g(2, 3, 3, 1);
  EXPECT_EQ(kind_of([&] { upsample_trilinear(g, {2.0, 1.5, 1.5}); }), ErrorKind::NonIntegralTarget);
  EXPECT_EQ(kind_of([&] { downsample_trilinear(GridSignal(2, 6, 6, 1), {2.0, 1.5, 1.5}); }),
            ErrorKind::NonIntegralTarget);
}

TEST(Downsample, BoxAverageAndRoundTrip) {
  GridSignal g(1, 2, 2, 1);
  g.at(0, 0, 0, 0) = 1.0;
  g.at(0, 0, 1, 0) = 2.0;
  g.at(0, 1, 0, 0) = 3.0;
  g.at(0, 1, 1, 0) = 6.0;
  auto d = downsample_trilinear(g, {1.0, 2.0, 2.0});
  EXPECT_EQ(d.at(0, 0, 0, 0), 3.0);
  GridSignal c(4, 6, 6, 2, -0.3);
  EXPECT_EQ(upsample_trilinear(downsample_trilinear(c, {2.0, 3.0, 2.0}), {2.0, 3.0, 2.0}), c);
}

TEST(RefinementInput, EndpointsAndMidpoint) {
  SeededRng rng(1);
  RefinementConfig cfg;
  auto x_lr = random_grid(rng, 2, 4, 4, 2);
  auto x0 = random_grid(rng, 4, 6, 6, 2);
  auto eps = random_grid(rng, 4, 6, 6, 2);
  const auto x_thresh = add_noise(upsample_lowres(x_lr, cfg), eps, cfg.t_thresh);
  EXPECT_EQ(make_refinement_input(x0, x_lr, eps, 0.0, cfg), x0);
  EXPECT_EQ(make_refinement_input(x0, x_lr, eps, cfg.t_thresh, cfg), x_thresh);
  auto mid = make_refinement_input(x0, x_lr, eps, cfg.t_thresh / 2, cfg);
  for (std::size_t i = 0; i < mid.tensor().size(); ++i)
    EXPECT_NEAR(mid.tensor()[i], 0.5 * (x0.tensor()[i] + x_thresh.tensor()[i]), 1e-15);
  EXPECT_EQ(kind_of([&] { make_refinement_input(x0, x_lr, eps, 0.6, cfg); }), ErrorKind::TimeAboveThreshold);
  EXPECT_EQ(kind_of([&] { make_refinement_input(GridSignal(4, 6, 5, 2), x_lr, eps, 0.1, cfg); }),
            ErrorKind::ExtentMismatch);
}

TEST(RefinementTarget, Examples) {
  SeededRng rng(2);
  auto x0 = random_grid(rng, 2, 3, 3, 1);
  auto eps = random_grid(rng, 2, 3, 3, 1);
  auto up = random_grid(rng, 2, 3, 3, 1);
  // t_thresh = 1: x_up drops out and the target is the base x0 - eps.
  auto v1 = refinement_target(x0, add_noise(up, eps, 1.0), 1.0);
  for (std::size_t i = 0; i < v1.tensor().size(); ++i)
    EXPECT_NEAR(v1.tensor()[i], x0.tensor()[i] - eps.tensor()[i], 1e-12);
  const auto still = refinement_target(x0, x0, 0.5);
  for (double v : still.tensor().data()) EXPECT_EQ(v, 0.0);
  auto xt = random_grid(rng, 2, 3, 3, 1);
  auto v = refinement_target(x0, xt, 0.5);
  for (std::size_t i = 0; i < v.tensor().size(); ++i)
    EXPECT_NEAR(v.tensor()[i], 2.0 * (x0.tensor()[i] - xt.tensor()[i]), 1e-15);
}

TEST(RefineSample, OracleRecoversTargetAtAnyStepCount) {
  SeededRng rng(3);
  auto x0 = random_grid(rng, 4, 6, 6, 2);
  auto x_thresh = random_grid(rng, 4, 6, 6, 2);
  for (double tt : {0.5, 0.3, 1.0})
    for (std::size_t steps : {1u, 5u, 17u}) {
      RefinementConfig cfg;
      cfg.t_thresh = tt;
      cfg.steps = steps;
      const auto target = refinement_target(x0, x_thresh, tt);
      auto res = refine_sample([&](const GridSignal&, double) { return target; }, x_thresh, cfg);
      EXPECT_LE(max_abs_diff(res.x_sr, x0), 1e-12);
      EXPECT_EQ(res.states.size(), steps + 1);
      EXPECT_EQ(res.times.front(), tt);
      EXPECT_EQ(res.times.back(), 0.0);
    }
}

TEST(RefineSample, ZeroExpertKeepsInput) {
  SeededRng rng(4);
  auto x = random_grid(rng, 2, 2, 2, 1);
  auto res = refine_sample([&](const GridSignal& s, double) { return GridSignal(s.tensor().shape()[0], 2, 2, 1); },
                           x, RefinementConfig{});
  EXPECT_EQ(res.x_sr, x);
}

TEST(RefineSample, StepCountSensitivityWithNonlinearExpert) {
  SeededRng rng(5);
  auto x0 = random_grid(rng, 2, 3, 3, 1);
  auto x_thresh = random_grid(rng, 2, 3, 3, 1);
  // Pulls toward x0 with a mildly nonlinear rate; Lipschitz constant 2.2 / t_thresh.
  auto expert = [&](const GridSignal& x, double) {
    GridSignal v = x;
    for (std::size_t i = 0; i < v.tensor().size(); ++i) {
      const double r = x0.tensor()[i] - x.tensor()[i];
      v.tensor()[i] = 2.0 * (r + 0.1 * std::sin(r));
    }
    return v;
  };
  RefinementConfig five, fifty;
  fifty.steps = 50;
  const double gap = max_abs_diff(refine_sample(expert, x_thresh, five).x_sr, refine_sample(expert, x_thresh, fifty).x_sr);
  EXPECT_GT(gap, 0.0);
  EXPECT_LT(gap, max_abs_diff(x_thresh, x0));
}

TEST(ConditionedRefine, NoConditionMatchesPlainPipeline) {
  SeededRng rng(6);
  RefinementConfig cfg;
  auto x_lr = random_grid(rng, 2, 4, 4, 1);
  auto eps = random_grid(rng, 4, 6, 6, 1);
  auto expert = [](const GridSignal& x, double t) {
    GridSignal v = x;
    for (double& e : v.tensor().data()) e = -t * e;
    return v;
  };
  auto a = conditioned_refine(std::nullopt, x_lr, eps, cfg, expert);
  auto b = refine_sample(expert, add_noise(upsample_lowres(x_lr, cfg), eps, cfg.t_thresh), cfg);
  EXPECT_EQ(a.x_sr, b.x_sr);
}

TEST(ConditionedRefine, ConditionFramesPassThrough) {
  SeededRng rng(7);
  RefinementConfig cfg;
  auto cond = random_grid(rng, 2, 6, 6, 1);
  auto x_lr = random_grid(rng, 2, 4, 4, 1);
  auto eps = random_grid(rng, 6, 6, 6, 1);
  auto expert = [](const GridSignal& x, double) {
    GridSignal v = x;
    for (double& e : v.tensor().data()) e = std::cos(e);
    return v;
  };
  for (auto mode : {ConditionNoise::Repin, ConditionNoise::Clean}) {
    auto res = conditioned_refine(cond, x_lr, eps, cfg, expert, mode);
    ASSERT_EQ(res.x_sr.frames(), 6u);
    for (std::size_t i = 0; i < cond.tensor().size(); ++i) EXPECT_EQ(res.x_sr.tensor()[i], cond.tensor()[i]);
  }
  auto clean = conditioned_refine(cond, x_lr, eps, cfg, expert, ConditionNoise::Clean);
  for (const auto& s : clean.states)
    for (std::size_t i = 0; i < cond.tensor().size(); ++i) EXPECT_EQ(s.tensor()[i], cond.tensor()[i]);
  EXPECT_EQ(kind_of([&] { conditioned_refine(random_grid(rng, 1, 5, 6, 1), x_lr, eps, cfg, expert); }),
            ErrorKind::ExtentMismatch);
}

TEST(ConditionedRefine, ConstantEndToEnd) {
  SeededRng rng(8);
  RefinementConfig cfg;
  GridSignal cond(1, 6, 6, 2, 0.9);
  GridSignal x_lr(2, 4, 4, 2, -1.25);
  auto eps = random_grid(rng, 5, 6, 6, 2);
  GridSignal x0(5, 6, 6, 2, -1.25);
  for (std::size_t i = 0; i < cond.tensor().size(); ++i) x0.tensor()[i] = 0.9;
  const auto x_thresh = add_noise(GridSignal(x0), eps, cfg.t_thresh);
  const auto target = refinement_target(x0, x_thresh, cfg.t_thresh);
  auto res = conditioned_refine(cond, x_lr, eps, cfg, [&](const GridSignal&, double) { return target; });
  EXPECT_LE(max_abs_diff(res.x_sr, x0), 1e-12);
}

TEST(AttentionExpert, FullSelectionEqualsDense) {
  SeededRng rng(9);
  auto x = random_grid(rng, 4, 8, 8, 3);
  const bsa::BlockSpec blocks{2, 4, 4};  // 8 blocks
  auto sparse = AttentionExpert::random(3, 4, blocks, 8, rng);
  auto dense = sparse;
  dense.r = 0;
  EXPECT_LE(max_abs_diff(sparse(x, 0.3), dense(x, 0.3)), 1e-12);
  auto sparser = sparse;
  sparser.r = 1;
  EXPECT_GT(max_abs_diff(sparser(x, 0.3), dense(x, 0.3)), 0.0);
}
