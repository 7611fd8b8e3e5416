#include "sparseflow/grpo/toy.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>

#include "sparseflow/core/adam.hpp"
#include "sparseflow/core/error.hpp"

namespace sparseflow::grpo {

Vec MixtureTask::center(std::size_t k) const {
  SF_CHECK(k < modes, ErrorKind::InvalidConfig, "prompt " + std::to_string(k) + " out of range");
  const double angle = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(modes);
  return {radius * std::cos(angle), radius * std::sin(angle)};
}

Vec MixtureTask::prompt(std::size_t k) const {
  SF_CHECK(k < modes, ErrorKind::InvalidConfig, "prompt " + std::to_string(k) + " out of range");
  Vec c(modes, 0.0);
  c[k] = 1.0;
  return c;
}

Vec MixtureTask::sample(std::size_t k, SeededRng& rng) const {
  auto x = center(k);
  for (double& v : x) v += spread * rng.normal();
  return x;
}

std::vector<double> toy_rewards(const MixtureTask& task, std::size_t prompt, const Trajectory& traj) {
  const auto& x0 = traj.states.back();
  const auto mu = task.center(prompt);
  double align = 0.0, norm = 0.0, path = 0.0;
  for (std::size_t i = 0; i < x0.size(); ++i) {
    align += (x0[i] - mu[i]) * (x0[i] - mu[i]);
    norm += x0[i] * x0[i];
  }
  for (std::size_t s = 1; s < traj.states.size(); ++s)
    for (std::size_t i = 0; i < x0.size(); ++i) {
      const double d = traj.states[s][i] - traj.states[s - 1][i];
      path += d * d;
    }
  return {-align, -norm / 10.0, -path};
}

namespace {

Vec normal_vec(std::size_t n, SeededRng& rng) {
  Vec v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

}  // namespace

Trajectory ode_sample(const Vec& x_T, const Vec& c, const SamplerConfig& sampler, const GuidedVelocity& model) {
  const auto grid = shifted_times(sampler.steps, sampler.shift);
  Trajectory traj;
  traj.states.push_back(x_T);
  for (std::size_t i = 0; i < sampler.steps; ++i)
    traj.states.push_back(ode_step(traj.states.back(), grid[i], grid[i] - grid[i + 1], model, c));
  return traj;
}

GroupSample rollout_group(const MixtureTask& task, std::size_t prompt, std::size_t group_size,
                          const SamplerConfig& sampler, const NoiseSchedule& schedule, const GuidedVelocity& model,
                          bool all_steps_sde, SeededRng& rng) {
  SF_CHECK(sampler.t_prime_max >= 1 && sampler.t_prime_max <= sampler.steps, ErrorKind::InvalidConfig,
           "t_prime_max must lie in [1, steps]");
  SF_CHECK(sampler.steps >= 2, ErrorKind::InvalidConfig, "stochastic sampling needs at least two steps");
  const auto grid = shifted_times(sampler.steps, sampler.shift);
  GroupSample g;
  g.prompt = prompt;
  g.c = task.prompt(prompt);
  const Vec x_T = normal_vec(2, rng);
  g.t_prime = static_cast<std::size_t>(rng.below(sampler.t_prime_max));
  g.rewards.assign(kRewardCount, {});

  for (std::size_t m = 0; m < group_size; ++m) {
    Trajectory traj;
    traj.states.push_back(x_T);
    for (std::size_t i = 0; i < sampler.steps; ++i) {
      const auto& x = traj.states.back();
      const double dt = grid[i] - grid[i + 1];
      if (!all_steps_sde && i != g.t_prime) {
        traj.states.push_back(ode_step(x, grid[i], dt, model, g.c));
        continue;
      }
      // sigma blows up at t = 1; evaluate that step at the next grid time.
      const double t = grid[i] >= 1.0 ? grid[1] : grid[i];
      StochasticStep st;
      st.index = i;
      st.t = t;
      st.dt = dt;
      st.x = x;
      st.eps = normal_vec(x.size(), rng);
      const auto step = sde_step(x, t, dt, model, st.eps, schedule, g.c);
      st.x_next = step.x_next;
      st.logp_old = transition_logprob(step.x_next, step.mean, step.diffusion.coef);
      traj.states.push_back(step.x_next);
      traj.stochastic.push_back(std::move(st));
    }
    const auto r = toy_rewards(task, prompt, traj);
    for (std::size_t k = 0; k < kRewardCount; ++k) g.rewards[k].push_back(r[k]);
    g.members.push_back(std::move(traj));
  }
  return g;
}

VelocityNet pretrain_base(const MixtureTask& task, const VelocityNetShape& shape, const PretrainConfig& config,
                          SeededRng& rng) {
  SF_CHECK(shape.state_dim == 2 && shape.cond_dim == task.modes, ErrorKind::InvalidConfig,
           "network shape does not match the mixture task");
  auto net = VelocityNet::initialized(shape, rng);
  Adam opt(net.parameters().size(), config.lr);
  std::vector<FmSample> batch(config.batch);
  for (std::size_t step = 0; step < config.steps; ++step) {
    for (auto& s : batch) {
      const auto k = static_cast<std::size_t>(rng.below(task.modes));
      s.x0 = task.sample(k, rng);
      s.eps = normal_vec(2, rng);
      s.t = rng.uniform(1e-3, 1.0 - 1e-3);
      s.c = rng.uniform() < config.cond_dropout ? Vec(task.modes, 0.0) : task.prompt(k);
    }
    const auto lg = fm_loss(net, batch);
    opt.step(net.mutable_parameters(), lg.grad);
  }
  return net;
}

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::Full: return "full";
    case Variant::NoReweight: return "no-reweight";
    case Variant::PerGroupStd: return "per-group-std";
    case Variant::AllStepsSde: return "all-steps-sde";
    case Variant::NoTruncation: return "no-truncation";
  }
  return "full";
}

Variant parse_variant(const std::string& name) {
  if (name == "none") return Variant::Full;  // no ablation
  for (auto v : {Variant::Full, Variant::NoReweight, Variant::PerGroupStd, Variant::AllStepsSde,
                 Variant::NoTruncation})
    if (variant_name(v) == name) return v;
  throw Error(ErrorKind::InvalidConfig, "unknown variant '" + name + "'");
}

CurveRow evaluate(const MixtureTask& task, const GuidedVelocity& model, const SamplerConfig& sampler,
                  const std::vector<Vec>& noises, std::size_t per_prompt) {
  SF_CHECK(noises.size() == task.modes * per_prompt, ErrorKind::DimensionMismatch,
           "evaluation noise count does not match modes * per_prompt");
  std::vector<std::vector<double>> scores(kRewardCount);
  for (std::size_t k = 0; k < task.modes; ++k) {
    const auto c = task.prompt(k);
    for (std::size_t j = 0; j < per_prompt; ++j) {
      const auto r = toy_rewards(task, k, ode_sample(noises[k * per_prompt + j], c, sampler, model));
      for (std::size_t i = 0; i < kRewardCount; ++i) scores[i].push_back(r[i]);
    }
  }
  CurveRow row;
  for (const auto& s : scores) {
    double mean = 0.0;
    for (double x : s) mean += x;
    row.mean.push_back(mean / static_cast<double>(s.size()));
    row.std.push_back(population_std(s));
  }
  return row;
}

TrainResult train_grpo(const MixtureTask& task, const GrpoConfig& config, const VelocityNet* base) {
  SF_CHECK(config.group_size >= 2, ErrorKind::GroupTooSmall, "GRPO needs groups of at least 2");
  SF_CHECK(config.reward_weights.size() == kRewardCount, ErrorKind::WeightCountMismatch,
           "expected " + std::to_string(kRewardCount) + " reward weights");
  SF_CHECK(config.prompts_per_update >= 1 && config.eval_every >= 1, ErrorKind::InvalidConfig,
           "prompts_per_update and eval_every must be positive");

  SeededRng root(config.seed);
  SeededRng pre_rng = root.fork(1);
  SeededRng eval_rng = root.fork(2);
  const VelocityNetShape shape{2, task.modes, config.hidden, config.hidden};
  if (base)
    SF_CHECK(base->shape().state_dim == shape.state_dim && base->shape().cond_dim == shape.cond_dim &&
                 base->shape().hidden1 == shape.hidden1 && base->shape().hidden2 == shape.hidden2,
             ErrorKind::InvalidConfig, "base checkpoint does not match the configured network shape");
  TrainResult res{{}, base ? *base : pretrain_base(task, shape, config.pretrain, pre_rng), VelocityNet(shape)};
  res.policy = res.base;

  NoiseSchedule schedule = config.schedule;
  if (config.variant == Variant::NoTruncation) schedule.tau = std::numeric_limits<double>::infinity();
  const bool all_steps = config.variant == Variant::AllStepsSde;

  std::vector<Vec> eval_noise;
  for (std::size_t i = 0; i < task.modes * config.eval_per_prompt; ++i) eval_noise.push_back(normal_vec(2, eval_rng));

  const GuidedVelocity reference(res.base, config.sampler.guidance);
  const GuidedVelocity policy(res.policy, config.sampler.guidance);
  res.curve.push_back(evaluate(task, policy, config.sampler, eval_noise, config.eval_per_prompt));

  Adam opt(res.policy.parameters().size(), config.lr);
  ObjectiveOptions obj_opts{schedule, config.beta, config.variant != Variant::NoReweight};

  for (std::size_t it = 1; it <= config.iterations; ++it) {
    SeededRng it_rng = root.fork(1000 + it);
    std::vector<GroupSample> groups;
    for (std::size_t b = 0; b < config.prompts_per_update; ++b) {
      SeededRng g_rng = it_rng.fork(b);
      const auto prompt = static_cast<std::size_t>(g_rng.below(task.modes));
      groups.push_back(
          rollout_group(task, prompt, config.group_size, config.sampler, schedule, policy, all_steps, g_rng));
    }

    GroupedScores rewards(kRewardCount);
    for (const auto& g : groups)
      for (std::size_t k = 0; k < kRewardCount; ++k) rewards[k].push_back(g.rewards[k]);
    GroupedScores adv;
    if (config.variant == Variant::PerGroupStd) {
      adv = per_group_std_advantages(rewards);
    } else {
      auto sigma = max_group_std(rewards);
      // A reward with no spread anywhere carries no signal this round.
      for (std::size_t k = 0; k < kRewardCount; ++k)
        if (sigma[k] == 0.0) {
          for (auto& grp : rewards[k])
            for (double& r : grp) r = 0.0;
          sigma[k] = 1.0;
        }
      adv = group_advantages(rewards, sigma);
    }
    const auto total = multi_reward_total(adv, config.reward_weights);

    std::vector<PolicySample> samples;
    for (std::size_t g = 0; g < groups.size(); ++g)
      for (std::size_t m = 0; m < groups[g].members.size(); ++m)
        for (const auto& st : groups[g].members[m].stochastic) samples.push_back({st, groups[g].c, total[g][m]});

    const auto obj = grpo_objective(policy, reference, samples, obj_opts);
    Vec descent(obj.grad.size());
    for (std::size_t i = 0; i < descent.size(); ++i) descent[i] = -obj.grad[i];
    opt.step(res.policy.mutable_parameters(), descent);

    if (it % config.eval_every == 0 || it == config.iterations) {
      auto row = evaluate(task, policy, config.sampler, eval_noise, config.eval_per_prompt);
      row.iteration = it;
      row.kl_mean = obj.kl_mean;
      res.curve.push_back(std::move(row));
    }
  }
  return res;
}

std::string curve_csv(const std::vector<CurveRow>& curve) {
  std::string out = "iteration";
  const std::size_t k = curve.empty() ? kRewardCount : curve.front().mean.size();
  for (std::size_t i = 0; i < k; ++i)
    out += ",reward" + std::to_string(i + 1) + "_mean,reward" + std::to_string(i + 1) + "_std";
  out += ",kl_mean\n";
  char buf[64];
  for (const auto& row : curve) {
    out += std::to_string(row.iteration);
    for (std::size_t i = 0; i < row.mean.size(); ++i) {
      std::snprintf(buf, sizeof buf, ",%.17g,%.17g", row.mean[i], row.std[i]);
      out += buf;
    }
    std::snprintf(buf, sizeof buf, ",%.17g\n", row.kl_mean);
    out += buf;
  }
  return out;
}

}  // namespace sparseflow::grpo
