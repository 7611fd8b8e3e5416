#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "sparseflow/core/rng.hpp"
#include "sparseflow/core/velocity_net.hpp"
#include "sparseflow/grpo/grpo.hpp"

namespace sparseflow::grpo {

// 2-D Gaussian mixture; prompt k asks for mode k, encoded one-hot.
struct MixtureTask {
  std::size_t modes = 4;
  double radius = 2.0;
  double spread = 0.3;

  Vec center(std::size_t k) const;
  Vec prompt(std::size_t k) const;
  Vec sample(std::size_t k, SeededRng& rng) const;
};

struct Trajectory {
  std::vector<Vec> states;  // x at every grid time, states.front() = x_T
  std::vector<StochasticStep> stochastic;
};

constexpr std::size_t kRewardCount = 3;

// {-|x0 - mu_c|^2, -|x0|^2 / 10, -sum |x_{t-1} - x_t|^2}
std::vector<double> toy_rewards(const MixtureTask& task, std::size_t prompt, const Trajectory& traj);

struct SamplerConfig {
  std::size_t steps = 16;
  double shift = 12.0;
  std::size_t t_prime_max = 6;  // critical step drawn from [0, t_prime_max)
  double guidance = 4.0;
};

struct GroupSample {
  std::size_t prompt = 0;
  Vec c;
  std::size_t t_prime = 0;
  std::vector<Trajectory> members;
  std::vector<std::vector<double>> rewards;  // [k][i]
};

// G trajectories sharing x_T and t'. SDE at t' only unless all_steps_sde.
GroupSample rollout_group(const MixtureTask& task, std::size_t prompt, std::size_t group_size,
                          const SamplerConfig& sampler, const NoiseSchedule& schedule, const GuidedVelocity& model,
                          bool all_steps_sde, SeededRng& rng);

// Deterministic sampling from a given x_T.
Trajectory ode_sample(const Vec& x_T, const Vec& c, const SamplerConfig& sampler, const GuidedVelocity& model);

struct PretrainConfig {
  std::size_t steps = 300;
  std::size_t batch = 64;
  double lr = 3e-3;
  double cond_dropout = 0.1;
};

VelocityNet pretrain_base(const MixtureTask& task, const VelocityNetShape& shape, const PretrainConfig& config,
                          SeededRng& rng);

enum class Variant { Full, NoReweight, PerGroupStd, AllStepsSde, NoTruncation };
std::string variant_name(Variant v);
Variant parse_variant(const std::string& name);

struct GrpoConfig {
  std::size_t group_size = 4;
  std::size_t prompts_per_update = 16;
  std::size_t iterations = 300;
  SamplerConfig sampler{};
  NoiseSchedule schedule{};
  double beta = 3e-4;
  double lr = 1e-4;
  std::vector<double> reward_weights{1.0, 1.0, 1.0};
  std::uint64_t seed = 0;
  Variant variant = Variant::Full;
  std::size_t eval_per_prompt = 32;
  std::size_t eval_every = 1;
  std::size_t hidden = 64;
  PretrainConfig pretrain{};
};

struct CurveRow {
  std::size_t iteration = 0;
  std::vector<double> mean, std;  // per reward, over the fixed evaluation set
  double kl_mean = 0.0;           // over the update's policy samples; 0 before training
};

struct TrainResult {
  std::vector<CurveRow> curve;
  VelocityNet base;
  VelocityNet policy;
};

// Runs GRPO with `base` as both the starting policy and the KL reference;
// without one, a base model is pretrained first.
TrainResult train_grpo(const MixtureTask& task, const GrpoConfig& config, const VelocityNet* base = nullptr);

// Rewards over a fixed ODE evaluation set: modes * per_prompt samples.
CurveRow evaluate(const MixtureTask& task, const GuidedVelocity& model, const SamplerConfig& sampler,
                  const std::vector<Vec>& noises, std::size_t per_prompt);

std::string curve_csv(const std::vector<CurveRow>& curve);

}  // namespace sparseflow::grpo
