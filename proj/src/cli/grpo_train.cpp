#include <cmath>
#include <filesystem>
#include <optional>
#include <ostream>

#include "sparseflow/cli/commands.hpp"
#include "sparseflow/core/error.hpp"
#include "sparseflow/core/tensor_io.hpp"
#include "sparseflow/grpo/toy.hpp"

namespace sparseflow::cli {

namespace {

using namespace sparseflow::grpo;

struct GrpoPlan {
  MixtureTask task;
  GrpoConfig config;
  std::optional<VelocityNet> base;  // loaded checkpoint; otherwise pretrained per seed
  bool acceptance = false;
  std::vector<std::uint64_t> seeds;
  Variant compare = Variant::NoReweight;
};

struct RunSummary {
  double initial_mean, initial_std, final_mean;
};

RunSummary run_one(const GrpoPlan& plan, std::uint64_t seed, Variant variant, Report& report, std::ostream& log) {
  GrpoConfig cfg = plan.config;
  cfg.seed = seed;
  cfg.variant = variant;
  const auto res = train_grpo(plan.task, cfg, plan.base ? &*plan.base : nullptr);
  const std::string tag = "seed" + std::to_string(seed) + "_" + variant_name(variant);
  report.write_text("curves/" + tag + ".csv", curve_csv(res.curve));
  const auto& params = res.policy.parameters();
  report.write_tensor("checkpoints/" + tag + ".tensor", Tensor::vector({params.begin(), params.end()}));
  if (!plan.base) {
    const auto& bp = res.base.parameters();
    report.write_tensor("checkpoints/seed" + std::to_string(seed) + "_base.tensor",
                        Tensor::vector({bp.begin(), bp.end()}));
  }

  bool finite = true;
  for (const auto& row : res.curve) {
    for (double x : row.mean) finite = finite && std::isfinite(x);
    finite = finite && std::isfinite(row.kl_mean);
  }
  report.check("finite_curve_" + tag, finite);

  const RunSummary s{res.curve.front().mean[0], res.curve.front().std[0], res.curve.back().mean[0]};
  report.metric(tag, Json{{"iterations", res.curve.back().iteration},
                          {"initial_alignment_mean", s.initial_mean},
                          {"initial_alignment_std", s.initial_std},
                          {"final_alignment_mean", s.final_mean},
                          {"final_kl_mean", res.curve.back().kl_mean},
                          {"gain_in_initial_std", s.initial_std > 0 ? (s.final_mean - s.initial_mean) / s.initial_std
                                                                    : 0.0}});
  log << "grpo-train: " << tag << " alignment " << format_real(s.initial_mean) << " -> "
      << format_real(s.final_mean) << "\n";
  return s;
}

void execute(const GrpoPlan& plan, Report& report, std::ostream& log) {
  const Variant variant = plan.config.variant;
  if (!plan.acceptance) {
    run_one(plan, plan.config.seed, variant, report, log);
    return;
  }
  std::size_t improved = 0, ordered = 0;
  for (const auto seed : plan.seeds) {
    const auto a = run_one(plan, seed, variant, report, log);
    const auto b = run_one(plan, seed, plan.compare, report, log);
    if (a.final_mean - a.initial_mean >= 0.5 * a.initial_std) ++improved;
    if (a.final_mean >= b.final_mean) ++ordered;
  }
  const double need = static_cast<double>(plan.seeds.size() >= 2 ? 2 : plan.seeds.size());
  report.check("alignment_gain_seeds", static_cast<double>(improved) >= need, static_cast<double>(improved), need);
  report.check("ordering_" + variant_name(variant) + "_ge_" + variant_name(plan.compare) + "_seeds",
               static_cast<double>(ordered) >= need, static_cast<double>(ordered), need);
}

Execute prepare(const Config& cfg) {
  GrpoPlan plan;
  plan.task = MixtureTask{cfg.count("modes"), cfg.real("radius"), cfg.real("spread")};
  auto& c = plan.config;
  c.group_size = cfg.count("group_size");
  c.prompts_per_update = cfg.count("prompts_per_update");
  c.iterations = cfg.count("iterations");
  c.sampler = SamplerConfig{cfg.count("steps"), cfg.real("shift"), cfg.count("t_prime_max"), cfg.real("guidance")};
  c.schedule = NoiseSchedule{cfg.real("a"), cfg.real("tau")};
  c.beta = cfg.real("beta");
  c.lr = cfg.real("lr");
  c.reward_weights = cfg.reals("reward_weights");
  c.seed = cfg.seed("seed");
  c.variant = parse_variant(cfg.text("variant"));
  c.eval_per_prompt = cfg.count("eval_per_prompt");
  c.eval_every = cfg.count("eval_every");
  c.hidden = cfg.count("hidden");
  c.pretrain = PretrainConfig{cfg.count("pretrain_steps"), cfg.count("pretrain_batch"), cfg.real("pretrain_lr"),
                              cfg.real("cond_dropout")};
  plan.acceptance = cfg.flag("acceptance");
  plan.compare = parse_variant(cfg.text("compare"));
  for (const auto s : cfg.counts("seeds")) plan.seeds.push_back(s);

  if (plan.task.modes < 1) throw ConfigError("modes must be at least 1");
  if (c.group_size < 2) throw Error(ErrorKind::GroupTooSmall, "group_size must be at least 2");
  if (c.reward_weights.size() != kRewardCount)
    throw Error(ErrorKind::WeightCountMismatch, "reward_weights needs " + std::to_string(kRewardCount) + " entries");
  if (c.prompts_per_update == 0 || c.eval_every == 0 || c.eval_per_prompt == 0 || c.hidden == 0)
    throw ConfigError("prompts_per_update, eval_every, eval_per_prompt and hidden must be positive");
  if (c.sampler.steps < 2 || c.sampler.t_prime_max == 0 || c.sampler.t_prime_max > c.sampler.steps)
    throw ConfigError("need steps >= 2 and 1 <= t_prime_max <= steps");
  if (!(c.sampler.shift > 0.0) || !(c.schedule.a > 0.0) || !(c.schedule.tau > 0.0) || !(c.lr > 0.0) ||
      c.beta < 0.0)
    throw ConfigError("shift, a, tau and lr must be positive and beta non-negative");
  if (plan.acceptance && plan.seeds.empty()) throw ConfigError("acceptance mode needs at least one seed");

  const auto& path = cfg.text("base_checkpoint");
  const bool pretrain_first = cfg.flag("pretrain_first");
  if (!path.empty()) {
    if (!std::filesystem::exists(path)) throw ConfigError("base checkpoint " + path + " does not exist");
    const VelocityNetShape shape{2, plan.task.modes, c.hidden, c.hidden};
    const Tensor params = load_tensor(path);
    if (params.rank() != 1 || params.size() != shape.parameter_count())
      throw ConfigError("base checkpoint holds " + std::to_string(params.size()) + " parameters, the network needs " +
                        std::to_string(shape.parameter_count()));
    plan.base.emplace(shape, params.values());
  } else if (!pretrain_first) {
    throw ConfigError("no base_checkpoint given; pass --pretrain-first to pretrain one");
  }
  return [plan](Report& report, std::ostream& log) { execute(plan, report, log); };
}

}  // namespace

Command grpo_train_command() {
  return Command{"grpo-train",
                 "GRPO fine-tuning of a flow-matching policy on the 2-D mixture task",
                 {{"modes", "4"},
                  {"radius", "2"},
                  {"spread", "0.3"},
                  {"group_size", "4"},
                  {"prompts_per_update", "16"},
                  {"iterations", "300"},
                  {"steps", "16"},
                  {"shift", "12"},
                  {"t_prime_max", "6"},
                  {"guidance", "4"},
                  {"a", "1"},
                  {"tau", "0.45"},
                  {"beta", "3e-4"},
                  {"lr", "1e-4"},
                  {"reward_weights", "1,1,1"},
                  {"variant", "full"},
                  {"compare", "no-reweight"},
                  {"eval_per_prompt", "32"},
                  {"eval_every", "1"},
                  {"hidden", "64"},
                  {"pretrain_steps", "300"},
                  {"pretrain_batch", "64"},
                  {"pretrain_lr", "3e-3"},
                  {"cond_dropout", "0.1"},
                  {"base_checkpoint", ""},
                  {"pretrain_first", "false"},
                  {"acceptance", "false"},
                  {"seeds", "0,1,2"},
                  {"seed", "0"}},
                 prepare};
}

}  // namespace sparseflow::cli
