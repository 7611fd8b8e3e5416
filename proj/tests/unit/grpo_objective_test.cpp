#include <gtest/gtest.h>

#include <cmath>

#include "sparseflow/core/error.hpp"
#include "sparseflow/core/ops.hpp"
#include "sparseflow/grpo/grpo.hpp"

using namespace sparseflow;
using namespace sparseflow::grpo;

namespace {

const VelocityNetShape kSmall{2, 2, 3, 4};  // 50 parameters

// Records one stochastic step under `model` at (x, t, dt) with noise eps.
StochasticStep record_step(const GuidedVelocity& model, const Vec& x, const Vec& c, double t, double dt,
                           const Vec& eps, const NoiseSchedule& schedule = {}) {
  const auto s = sde_step(x, t, dt, model, eps, schedule, c);
  return {0, t, dt, x, s.x_next, eps, transition_logprob(s.x_next, s.mean, s.diffusion.coef)};
}

Vec params_of(const VelocityNet& n) { return Vec(n.parameters().begin(), n.parameters().end()); }

Vec perturbed(const VelocityNet& n, SeededRng& rng, double scale) {
  auto p = params_of(n);
  for (double& x : p) x += scale * rng.normal();
  return p;
}

}  // namespace

TEST(Advantages, MaxStdWorkedExample) {
  GroupedScores r{{{1, 2, 3, 4}, {0, 4, 0, 4}}};
  EXPECT_NEAR(population_std(r[0][0]), std::sqrt(1.25), 1e-15);
  auto sigma = max_group_std(r);
  EXPECT_EQ(sigma[0], 2.0);
  auto a = group_advantages(r, sigma);
  EXPECT_EQ(a[0][0][3], 0.75);
  for (const auto& g : a[0]) {
    double s = 0.0;
    for (double x : g) s += x;
    EXPECT_LE(std::abs(s), 1e-12);
  }
}

TEST(Advantages, FlatGroupGetsZeros) {
  GroupedScores r{{{5, 5, 5}, {1, 2, 6}}};
  auto a = group_advantages(r, max_group_std(r));
  for (double x : a[0][0]) EXPECT_EQ(x, 0.0);
}

TEST(Advantages, Errors) {
  GroupedScores flat{{{1, 1}, {3, 3}}};
  try {
    group_advantages(flat, max_group_std(flat));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ZeroDispersion);
  }
  GroupedScores single{{{1}}};
  try {
    max_group_std(single);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::GroupTooSmall);
  }
}

TEST(Advantages, MaxStdNeverExceedsPerGroupScaling) {
  SeededRng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    GroupedScores r(2);
    for (auto& per : r)
      for (int g = 0; g < 5; ++g) {
        std::vector<double> grp;
        const double scale = rng.uniform(0.1, 3.0);
        for (int i = 0; i < 4; ++i) grp.push_back(scale * rng.normal());
        per.push_back(grp);
      }
    auto a = group_advantages(r, max_group_std(r));
    auto b = per_group_std_advantages(r);
    for (std::size_t k = 0; k < 2; ++k)
      for (std::size_t g = 0; g < 5; ++g) {
        double s = 0.0;
        for (std::size_t i = 0; i < 4; ++i) {
          EXPECT_LE(std::abs(a[k][g][i]), std::abs(b[k][g][i]) + 1e-15);
          s += a[k][g][i];
        }
        EXPECT_LE(std::abs(s), 1e-12);
      }
  }
}

TEST(MultiReward, TotalsAndErrors) {
  GroupedScores a{{{0.5, -0.5}}, {{-0.5, 0.5}}};
  auto total = multi_reward_total(a, std::vector<double>{1.0, 1.0});
  EXPECT_EQ(total[0], (std::vector<double>{0.0, 0.0}));
  auto single = multi_reward_total(GroupedScores{{{0.3, -0.3}}}, std::vector<double>{1.0});
  EXPECT_EQ(single[0], (std::vector<double>{0.3, -0.3}));
  try {
    multi_reward_total(a, std::vector<double>{1.0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::WeightCountMismatch);
  }
}

TEST(Reweighting, Lambdas) {
  EXPECT_NEAR(lambda_policy(0.5, 0.1), std::sqrt(10.0), 1e-14);
  EXPECT_NEAR(lambda_kl(0.5, 0.1), 10.0, 1e-13);
  SeededRng rng(2);
  for (int i = 0; i < 20; ++i) {
    const double t = rng.uniform(0.01, 0.99), dt = rng.uniform(1e-3, 0.5);
    const double lp = lambda_policy(t, dt);
    EXPECT_NEAR(lambda_kl(t, dt), lp * lp, 1e-12 * lp * lp);
    EXPECT_NEAR(lp * std::sqrt(dt * (1.0 - t) / t), 1.0, 1e-12);
  }
  EXPECT_THROW(lambda_policy(1.0, 0.1), Error);
}

TEST(KlTerm, ClosedFormMatchesGaussianKl) {
  SeededRng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    auto a = VelocityNet::initialized(kSmall, rng);
    VelocityNet b(kSmall, perturbed(a, rng, 0.1));
    GuidedVelocity pa(a, 4.0), pb(b, 4.0);
    const Vec x{rng.normal(), rng.normal()}, c{rng.uniform(), rng.uniform()};
    const double t = rng.uniform(0.05, 0.95), dt = rng.uniform(0.001, 0.9 * t);
    const NoiseSchedule schedule{rng.uniform(0.5, 2.0), trial % 2 ? 0.45 : 1e9};
    const Vec zero{0.0, 0.0};
    const auto sa = sde_step(x, t, dt, pa, zero, schedule, c);
    const auto sb = sde_step(x, t, dt, pb, zero, schedule, c);
    double sq = 0.0;
    for (int k = 0; k < 2; ++k) sq += (sa.mean[k] - sb.mean[k]) * (sa.mean[k] - sb.mean[k]);
    const double direct = sq / (2.0 * sa.diffusion.coef * sa.diffusion.coef);
    EXPECT_NEAR(kl_term(pa, pb, x, t, dt, schedule, c), direct, 1e-10);
  }
}

TEST(KlTerm, ZeroAndQuadratic) {
  SeededRng rng(4);
  auto a = VelocityNet::initialized(kSmall, rng);
  GuidedVelocity pa(a, 1.0);
  const Vec x{0.1, 0.2}, c{1.0, 0.0};
  EXPECT_EQ(kl_term(pa, pa, x, 0.4, 0.05, {}, c), 0.0);
  // Shifting only the output bias shifts v by a constant vector.
  auto p1 = params_of(a), p2 = params_of(a);
  p1[p1.size() - 1] += 0.1;
  p2[p2.size() - 1] += 0.2;
  VelocityNet b1(kSmall, p1), b2(kSmall, p2);
  const double k1 = kl_term(pa, GuidedVelocity(b1, 1.0), x, 0.4, 0.05, {}, c);
  const double k2 = kl_term(pa, GuidedVelocity(b2, 1.0), x, 0.4, 0.05, {}, c);
  EXPECT_NEAR(k2, 4.0 * k1, 1e-12 * k2);
}

TEST(GrpoObjective, RatioIsOneAtSamplingPolicy) {
  SeededRng rng(5);
  auto net = VelocityNet::initialized(kSmall, rng);
  GuidedVelocity m(net, 4.0);
  std::vector<PolicySample> samples;
  for (int i = 0; i < 5; ++i) {
    const Vec x{rng.normal(), rng.normal()}, c{0.0, 1.0}, eps{rng.normal(), rng.normal()};
    samples.push_back({record_step(m, x, c, 0.7, 0.05, eps), c, rng.normal()});
  }
  const auto obj = grpo_objective(m, m, samples, {});
  EXPECT_EQ(obj.ratio_mean, 1.0);
  EXPECT_EQ(obj.kl_mean, 0.0);
}

TEST(GrpoObjective, GradientMatchesFiniteDifferences) {
  SeededRng rng(6);
  auto ref = VelocityNet::initialized(kSmall, rng);
  auto old = VelocityNet(kSmall, perturbed(ref, rng, 0.05));
  GuidedVelocity m_old(old, 4.0), m_ref(ref, 4.0);
  std::vector<PolicySample> samples;
  for (int i = 0; i < 6; ++i) {
    const Vec x{rng.normal(), rng.normal()}, c{rng.uniform(), rng.uniform()}, eps{rng.normal(), rng.normal()};
    const double t = i % 2 ? 0.95 : 0.3;  // one clipped, one unclipped
    samples.push_back({record_step(m_old, x, c, t, 0.1, eps), c, rng.normal()});
  }
  const ObjectiveOptions opts{{}, 0.5, true};
  VelocityNet cur(kSmall, perturbed(old, rng, 0.02));
  const auto obj = grpo_objective(GuidedVelocity(cur, 4.0), m_ref, samples, opts);
  EXPECT_NE(obj.ratio_mean, 1.0);
  auto fd = finite_difference_gradient(
      [&](const std::vector<double>& p) {
        VelocityNet n(kSmall, p);
        return grpo_objective(GuidedVelocity(n, 4.0), m_ref, samples, opts).value;
      },
      params_of(cur));
  EXPECT_LE(relative_error(obj.grad, fd), 1e-6);
}

TEST(GrpoObjective, ZeroAdvantageLeavesOnlyKl) {
  SeededRng rng(7);
  auto ref = VelocityNet::initialized(kSmall, rng);
  VelocityNet cur(kSmall, perturbed(ref, rng, 0.1));
  GuidedVelocity m(cur, 1.0), r(ref, 1.0);
  const Vec x{0.4, -0.1}, c{1.0, 0.0}, eps{0.3, 0.9};
  const double t = 0.6, dt = 0.05, beta = 0.25;
  std::vector<PolicySample> samples{{record_step(m, x, c, t, dt, eps), c, 0.0}};
  const auto obj = grpo_objective(m, r, samples, {{}, beta, true});
  auto fd = finite_difference_gradient(
      [&](const std::vector<double>& p) {
        VelocityNet n(kSmall, p);
        return -beta * lambda_kl(t, dt) * kl_term(GuidedVelocity(n, 1.0), r, x, t, dt, {}, c);
      },
      params_of(cur));
  EXPECT_LE(relative_error(obj.grad, fd), 1e-6);
}

TEST(PolicyGradient, ClosedFormMatchesAutodiff) {
  SeededRng rng(8);
  auto net = VelocityNet::initialized(kSmall, rng);
  GuidedVelocity m(net, 1.0);
  const Vec x{0.3, -0.7}, c{0.0, 1.0}, eps{0.8, -0.4};
  const double adv = 0.9, dt = 0.01;
  for (double t : {0.1, 0.5, 0.9}) {
    std::vector<PolicySample> s{{record_step(m, x, c, t, dt, eps), c, adv}};
    const auto plain = grpo_objective(m, m, s, {{}, 0.0, false});
    const auto oracle = analytic_policy_grad_oracle(adv, t, dt, eps, m, x, c, {});
    EXPECT_LE(relative_error(plain.grad, oracle), 1e-8) << "t=" << t;
  }
}

TEST(PolicyGradient, ReweightedCoefficientIsTimeInvariant) {
  // v takes t as input, so grad_theta v moves with t; what the reweighting
  // fixes is the factor in front of it, -(3/2) A eps.
  SeededRng rng(11);
  auto net = VelocityNet::initialized(kSmall, rng);
  GuidedVelocity m(net, 1.0);
  const Vec x{0.3, -0.7}, c{0.0, 1.0}, eps{0.8, -0.4};
  const double adv = -1.7;
  const Vec expected{-1.5 * adv * eps[0], -1.5 * adv * eps[1]};
  for (double t : {0.1, 0.5, 0.9})
    for (double dt : {0.001, 0.005, 0.02}) {  // all unclipped at tau = 0.45
      PolicySample s{record_step(m, x, c, t, dt, eps), c, adv};
      const auto v = m(x, t, c);
      const auto terms = policy_sample_terms(s, v, v, {{}, 0.0, true});
      EXPECT_LE(relative_error(terms.dv, expected), 1e-8) << "t=" << t << " dt=" << dt;
      Vec via_net(net.parameters().size(), 0.0);
      m.accumulate_backward(x, t, c, expected, 1.0, via_net);
      EXPECT_LE(relative_error(grpo_objective(m, m, std::vector<PolicySample>{s}, {{}, 0.0, true}).grad, via_net),
                1e-8);
    }
}

TEST(PolicyGradient, OracleEdgeCases) {
  SeededRng rng(9);
  auto net = VelocityNet::initialized(kSmall, rng);
  GuidedVelocity m(net, 1.0);
  const Vec x{0.3, -0.7}, c{0.0, 1.0};
  for (double g : analytic_policy_grad_oracle(1.0, 0.5, 0.01, Vec{0.0, 0.0}, m, x, c, {})) EXPECT_EQ(g, 0.0);
  try {
    analytic_policy_grad_oracle(1.0, 0.5, 0.01, Vec{1.0, 0.0}, m, x, c, {2.0, 0.45});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::RequiresUnitSchedule);
  }
}

TEST(PolicyGradient, MultiRewardLinearity) {
  SeededRng rng(10);
  auto net = VelocityNet::initialized(kSmall, rng);
  GuidedVelocity m(net, 4.0);
  GroupedScores rewards(3);
  for (auto& per : rewards)
    for (int g = 0; g < 2; ++g) per.push_back({rng.normal(), rng.normal(), rng.normal()});
  const auto adv = group_advantages(rewards, max_group_std(rewards));
  const std::vector<double> w{0.7, -1.3, 2.1};

  std::vector<StochasticStep> steps;
  std::vector<Vec> conds;
  for (int i = 0; i < 6; ++i) {
    const Vec x{rng.normal(), rng.normal()}, c{rng.uniform(), rng.uniform()}, eps{rng.normal(), rng.normal()};
    steps.push_back(record_step(m, x, c, rng.uniform(0.2, 0.95), 0.05, eps));
    conds.push_back(c);
  }
  auto grad_for = [&](const std::vector<std::vector<double>>& a) {
    std::vector<PolicySample> s;
    for (int i = 0; i < 6; ++i) s.push_back({steps[i], conds[i], a[i / 3][i % 3]});
    return grpo_objective(m, m, s, {{}, 0.0, true}).grad;
  };
  const auto total = grad_for(multi_reward_total(adv, w));
  Vec combined(total.size(), 0.0);
  for (std::size_t k = 0; k < 3; ++k) {
    const auto g = grad_for(adv[k]);
    for (std::size_t i = 0; i < g.size(); ++i) combined[i] += w[k] * g[i];
  }
  EXPECT_LE(max_abs_diff(total, combined), 1e-10);
}
