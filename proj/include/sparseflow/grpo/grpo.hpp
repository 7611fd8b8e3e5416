#pragma once

#include <span>
#include <vector>

#include "sparseflow/grpo/flow.hpp"

namespace sparseflow::grpo {

// rewards[k][g][i]: reward k, group g, group member i.
using GroupedScores = std::vector<std::vector<std::vector<double>>>;

double population_std(std::span<const double> xs);

// Largest per-group population std, one entry per reward.
std::vector<double> max_group_std(const GroupedScores& rewards);

// (R - group mean) / sigma_max[k]. GroupTooSmall for groups under 2,
// ZeroDispersion if any sigma_max is 0.
GroupedScores group_advantages(const GroupedScores& rewards, std::span<const double> sigma_max);

// Each group divided by its own std; groups with zero spread get zeros.
GroupedScores per_group_std_advantages(const GroupedScores& rewards);

// sum_k w_k A_k, indexed [g][i].
std::vector<std::vector<double>> multi_reward_total(const GroupedScores& advantages,
                                                    std::span<const double> weights);

double lambda_policy(double t, double dt);
double lambda_kl(double t, double dt);

// (dt/2) (sigma (1-t)/(2t) + 1/sigma)^2, the factor multiplying |v - v_ref|^2.
double kl_coefficient(double t, double dt, double sigma);

double kl_term(const GuidedVelocity& policy, const GuidedVelocity& reference, std::span<const double> x, double t,
               double dt, const NoiseSchedule& schedule, std::span<const double> c);

// One stochastic transition recorded at sampling time.
struct StochasticStep {
  std::size_t index = 0;  // position in the time grid
  double t = 0.0;         // time the step was evaluated at
  double dt = 0.0;
  Vec x, x_next, eps;
  double logp_old = 0.0;
};

struct PolicySample {
  StochasticStep step;
  Vec c;
  double advantage = 0.0;
};

struct ObjectiveOptions {
  NoiseSchedule schedule{};
  double beta = 3e-4;
  bool reweight = true;
};

struct Objective {
  double value = 0.0;     // mean_i lambda_p r_i A_i - beta lambda_kl KL_i
  double kl_mean = 0.0;
  double ratio_mean = 0.0;
  Vec grad;               // d value / d theta, to be ascended
};

// One sample's contribution given the policy and reference velocities at
// its step. dv is d(value)/dv, the factor that multiplies grad_theta v.
struct SampleTerms {
  double value = 0.0;
  double kl = 0.0;
  double ratio = 1.0;
  Vec dv;
};
SampleTerms policy_sample_terms(const PolicySample& sample, std::span<const double> v, std::span<const double> v_ref,
                                const ObjectiveOptions& options);

Objective grpo_objective(const GuidedVelocity& policy, const GuidedVelocity& reference,
                         std::span<const PolicySample> samples, const ObjectiveOptions& options);

// -(3/2) A sqrt(dt (1-t)/t) eps . grad v. Needs a = 1 and an unclipped step,
// otherwise RequiresUnitSchedule.
Vec analytic_policy_grad_oracle(double advantage, double t, double dt, std::span<const double> eps,
                                const GuidedVelocity& model, std::span<const double> x, std::span<const double> c,
                                const NoiseSchedule& schedule);

}  // namespace sparseflow::grpo
