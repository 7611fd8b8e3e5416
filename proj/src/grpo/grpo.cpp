#include "sparseflow/grpo/grpo.hpp"

#include <algorithm>
#include <cmath>

#include "sparseflow/core/error.hpp"

namespace sparseflow::grpo {

double population_std(std::span<const double> xs) {
  SF_CHECK(!xs.empty(), ErrorKind::GroupTooSmall, "std of an empty group");
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  return std::sqrt(var / static_cast<double>(xs.size()));
}

namespace {

void check_groups(const GroupedScores& rewards) {
  SF_CHECK(!rewards.empty(), ErrorKind::WeightCountMismatch, "need at least one reward");
  for (const auto& per_reward : rewards) {
    SF_CHECK(per_reward.size() == rewards.front().size(), ErrorKind::DimensionMismatch,
             "rewards disagree on the number of groups");
    for (std::size_t g = 0; g < per_reward.size(); ++g) {
      SF_CHECK(per_reward[g].size() >= 2, ErrorKind::GroupTooSmall,
               "group " + std::to_string(g) + " has " + std::to_string(per_reward[g].size()) + " members");
      SF_CHECK(per_reward[g].size() == rewards.front()[g].size(), ErrorKind::DimensionMismatch,
               "rewards disagree on group sizes");
    }
  }
}

std::vector<double> centered(const std::vector<double>& xs) {
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = xs[i] - mean;
  return out;
}

}  // namespace

std::vector<double> max_group_std(const GroupedScores& rewards) {
  check_groups(rewards);
  std::vector<double> out;
  for (const auto& per_reward : rewards) {
    double m = 0.0;
    for (const auto& g : per_reward) m = std::max(m, population_std(g));
    out.push_back(m);
  }
  return out;
}

GroupedScores group_advantages(const GroupedScores& rewards, std::span<const double> sigma_max) {
  check_groups(rewards);
  SF_CHECK(sigma_max.size() == rewards.size(), ErrorKind::WeightCountMismatch,
           "one sigma_max per reward expected");
  GroupedScores out(rewards.size());
  for (std::size_t k = 0; k < rewards.size(); ++k) {
    SF_CHECK(sigma_max[k] > 0.0, ErrorKind::ZeroDispersion,
             "reward " + std::to_string(k) + " is identical across every group");
    for (const auto& g : rewards[k]) {
      auto a = centered(g);
      for (double& x : a) x /= sigma_max[k];
      out[k].push_back(std::move(a));
    }
  }
  return out;
}

GroupedScores per_group_std_advantages(const GroupedScores& rewards) {
  check_groups(rewards);
  GroupedScores out(rewards.size());
  for (std::size_t k = 0; k < rewards.size(); ++k)
    for (const auto& g : rewards[k]) {
      auto a = centered(g);
      const double s = population_std(g);
      for (double& x : a) x = s > 0.0 ? x / s : 0.0;
      out[k].push_back(std::move(a));
    }
  return out;
}

std::vector<std::vector<double>> multi_reward_total(const GroupedScores& advantages,
                                                    std::span<const double> weights) {
  SF_CHECK(!advantages.empty() && weights.size() == advantages.size(), ErrorKind::WeightCountMismatch,
           std::to_string(weights.size()) + " weights for " + std::to_string(advantages.size()) + " rewards");
  auto total = advantages.front();
  for (auto& g : total)
    for (double& x : g) x = 0.0;
  for (std::size_t k = 0; k < advantages.size(); ++k) {
    SF_CHECK(std::isfinite(weights[k]), ErrorKind::InvalidConfig, "reward weights must be finite");
    SF_CHECK(advantages[k].size() == total.size(), ErrorKind::DimensionMismatch, "group count differs");
    for (std::size_t g = 0; g < total.size(); ++g) {
      SF_CHECK(advantages[k][g].size() == total[g].size(), ErrorKind::DimensionMismatch, "group size differs");
      for (std::size_t i = 0; i < total[g].size(); ++i) total[g][i] += weights[k] * advantages[k][g][i];
    }
  }
  return total;
}

double lambda_policy(double t, double dt) { return std::sqrt(lambda_kl(t, dt)); }

double lambda_kl(double t, double dt) {
  SF_CHECK(t > 0.0 && t < 1.0, ErrorKind::TimeOutOfDomain, "reweighting needs 0 < t < 1");
  SF_CHECK(dt > 0.0, ErrorKind::InvalidConfig, "step size must be positive");
  return t / (dt * (1.0 - t));
}

double kl_coefficient(double t, double dt, double sigma) {
  const double f = sigma * (1.0 - t) / (2.0 * t) + 1.0 / sigma;
  return 0.5 * dt * f * f;
}

double kl_term(const GuidedVelocity& policy, const GuidedVelocity& reference, std::span<const double> x, double t,
               double dt, const NoiseSchedule& schedule, std::span<const double> c) {
  const auto diff = clipped_diffusion(t, dt, schedule);
  const auto v = policy(x, t, c);
  const auto v_ref = reference(x, t, c);
  double sq = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) sq += (v[i] - v_ref[i]) * (v[i] - v_ref[i]);
  return kl_coefficient(t, dt, diff.sigma_eff) * sq;
}

SampleTerms policy_sample_terms(const PolicySample& sample, std::span<const double> v, std::span<const double> v_ref,
                                const ObjectiveOptions& options) {
  const auto& st = sample.step;
  SF_CHECK(v.size() == v_ref.size() && v.size() == st.x.size(), ErrorKind::DimensionMismatch,
           "velocity and state sizes differ");
  const auto step = sde_step_from_velocity(st.x, v, st.t, st.dt, st.eps, options.schedule);
  const double logp = transition_logprob(st.x_next, step.mean, step.diffusion.coef);
  const double sigma = step.diffusion.sigma_eff;
  const double kl_c = kl_coefficient(st.t, st.dt, sigma);
  const double lp = options.reweight ? lambda_policy(st.t, st.dt) : 1.0;
  const double lk = options.reweight ? lambda_kl(st.t, st.dt) : 1.0;

  SampleTerms out;
  out.ratio = std::exp(logp - st.logp_old);
  double sq = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) sq += (v[i] - v_ref[i]) * (v[i] - v_ref[i]);
  out.kl = kl_c * sq;
  out.value = lp * out.ratio * sample.advantage - options.beta * lk * out.kl;

  // d logp / d v = gain * (x_next - mean) / coef^2
  const double gain = mean_velocity_gain(st.t, st.dt, sigma);
  const double var = step.diffusion.coef * step.diffusion.coef;
  out.dv.resize(v.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    out.dv[i] = lp * sample.advantage * out.ratio * gain * (st.x_next[i] - step.mean[i]) / var -
                options.beta * lk * 2.0 * kl_c * (v[i] - v_ref[i]);
  return out;
}

Objective grpo_objective(const GuidedVelocity& policy, const GuidedVelocity& reference,
                         std::span<const PolicySample> samples, const ObjectiveOptions& options) {
  SF_CHECK(!samples.empty(), ErrorKind::InvalidConfig, "no policy samples");
  Objective out;
  out.grad.assign(policy.net().parameters().size(), 0.0);
  const double inv_n = 1.0 / static_cast<double>(samples.size());
  for (const auto& s : samples) {
    const auto v = policy(s.step.x, s.step.t, s.c);
    const auto v_ref = reference(s.step.x, s.step.t, s.c);
    const auto terms = policy_sample_terms(s, v, v_ref, options);
    out.value += terms.value * inv_n;
    out.kl_mean += terms.kl * inv_n;
    out.ratio_mean += terms.ratio * inv_n;
    policy.accumulate_backward(s.step.x, s.step.t, s.c, terms.dv, inv_n, out.grad);
  }
  return out;
}

Vec analytic_policy_grad_oracle(double advantage, double t, double dt, std::span<const double> eps,
                                const GuidedVelocity& model, std::span<const double> x, std::span<const double> c,
                                const NoiseSchedule& schedule) {
  SF_CHECK(schedule.a == 1.0, ErrorKind::RequiresUnitSchedule, "the 3/2 closed form holds only for a = 1");
  SF_CHECK(!clipped_diffusion(t, dt, schedule).clipped, ErrorKind::RequiresUnitSchedule,
           "the 3/2 closed form assumes an unclipped diffusion step");
  const double k = -1.5 * advantage * std::sqrt(dt * (1.0 - t) / t);
  Vec upstream(eps.begin(), eps.end());
  for (double& u : upstream) u *= k;
  Vec grad(model.net().parameters().size(), 0.0);
  model.accumulate_backward(x, t, c, upstream, 1.0, grad);
  return grad;
}

}  // namespace sparseflow::grpo
