#include <cmath>
#include <optional>
#include <ostream>
#include <sstream>

#include "sparseflow/c2f/refine.hpp"
#include "sparseflow/cli/commands.hpp"
#include "sparseflow/core/error.hpp"
#include "sparseflow/core/rng.hpp"

namespace sparseflow::cli {

namespace {

using namespace sparseflow::c2f;

constexpr double kTolerance = 1e-12;

struct RefinePlan {
  RefinementConfig cfg;
  std::size_t frames = 2, height = 4, width = 4, channels = 2, cond_frames = 1;
  ConditionNoise mode = ConditionNoise::Repin;
  double detail = 0.1;
  bsa::BlockSpec blocks;
  std::uint64_t seed = 0;
};

GridSignal random_grid(SeededRng& rng, std::size_t t, std::size_t h, std::size_t w, std::size_t c, double scale = 1.0) {
  GridSignal g(gaussian_sample(rng, {t, h, w, c}));
  for (double& x : g.tensor().data()) x *= scale;
  return g;
}

GridSignal stack_frames(const GridSignal& a, const GridSignal& b) {
  GridSignal out(a.frames() + b.frames(), a.height(), a.width(), a.channels());
  auto dst = out.tensor().data();
  std::copy(a.tensor().data().begin(), a.tensor().data().end(), dst.begin());
  std::copy(b.tensor().data().begin(), b.tensor().data().end(), dst.begin() + static_cast<std::ptrdiff_t>(a.tensor().size()));
  return out;
}

Expert oracle_for(const GridSignal& target) {
  return [target](const GridSignal&, double) { return target; };
}

// Pulls toward x0 at a mildly nonlinear rate, so the step count matters.
Expert nonlinear_expert(const GridSignal& x0, double t_thresh) {
  return [x0, t_thresh](const GridSignal& x, double) {
    GridSignal v = x;
    for (std::size_t i = 0; i < v.tensor().size(); ++i) {
      const double r = x0.tensor()[i] - x.tensor()[i];
      v.tensor()[i] = (r + 0.1 * std::sin(r)) / t_thresh;
    }
    return v;
  };
}

void dev_check(Report& report, const std::string& name, double dev) {
  report.check(name, dev <= kTolerance, dev, kTolerance);
}

void execute(const RefinePlan& plan, Report& report, std::ostream& log) {
  const auto& cfg = plan.cfg;
  SeededRng rng = SeededRng(plan.seed).fork(0);
  const auto x_lr = random_grid(rng, plan.frames, plan.height, plan.width, plan.channels);
  const auto up = upsample_lowres(x_lr, cfg);
  GridSignal x0 = up;
  const auto detail = random_grid(rng, up.frames(), up.height(), up.width(), up.channels(), plan.detail);
  for (std::size_t i = 0; i < x0.tensor().size(); ++i) x0.tensor()[i] += detail.tensor()[i];
  const auto eps = random_grid(rng, up.frames(), up.height(), up.width(), up.channels());
  const auto x_thresh = add_noise(up, eps, cfg.t_thresh);

  dev_check(report, "endpoint_clean", max_abs_diff(make_refinement_input(x0, x_lr, eps, 0.0, cfg), x0));
  dev_check(report, "endpoint_threshold",
            max_abs_diff(make_refinement_input(x0, x_lr, eps, cfg.t_thresh, cfg), x_thresh));

  // At t_thresh = 1 the upsampled latent drops out and the target is x0 - eps.
  GridSignal base_target = x0;
  for (std::size_t i = 0; i < base_target.tensor().size(); ++i) base_target.tensor()[i] -= eps.tensor()[i];
  dev_check(report, "degeneracy_t_thresh_1", max_abs_diff(refinement_target(x0, add_noise(up, eps, 1.0), 1.0), base_target));
  if (cfg.t_thresh == 1.0)
    dev_check(report, "degeneracy_configured", max_abs_diff(refinement_target(x0, x_thresh, cfg.t_thresh), base_target));

  const auto target = refinement_target(x0, x_thresh, cfg.t_thresh);
  const auto oracle = refine_sample(oracle_for(target), x_thresh, cfg);
  dev_check(report, "oracle_recovery", max_abs_diff(oracle.x_sr, x0));

  const auto nonlinear = nonlinear_expert(x0, cfg.t_thresh);
  const auto coarse = refine_sample(nonlinear, x_thresh, cfg);
  RefinementConfig fine_cfg = cfg;
  fine_cfg.steps = 50;
  const auto fine = refine_sample(nonlinear, x_thresh, fine_cfg);
  report.metric("nonlinear_step_gap_vs_50", max_abs_diff(coarse.x_sr, fine.x_sr));
  report.metric("nonlinear_residual", max_abs_diff(coarse.x_sr, x0));
  report.metric("initial_residual", max_abs_diff(x_thresh, x0));

  std::ostringstream csv;
  csv << "step,t,oracle_residual_l2,nonlinear_residual_l2\n";
  for (std::size_t s = 0; s < oracle.states.size(); ++s) {
    GridSignal ro = oracle.states[s], rn = coarse.states[s];
    for (std::size_t i = 0; i < ro.tensor().size(); ++i) {
      ro.tensor()[i] -= x0.tensor()[i];
      rn.tensor()[i] -= x0.tensor()[i];
    }
    csv << s << ',' << format_real(oracle.times[s]) << ',' << format_real(l2_norm(ro)) << ','
        << format_real(l2_norm(rn)) << '\n';
  }
  report.write_text("residuals.csv", csv.str());

  GridSignal refined = oracle.x_sr;
  if (plan.cond_frames > 0) {
    const auto cond = random_grid(rng, plan.cond_frames, up.height(), up.width(), up.channels());
    const auto full_eps = random_grid(rng, plan.cond_frames + up.frames(), up.height(), up.width(), up.channels());
    const auto full_x0 = stack_frames(cond, x0);
    const auto full_thresh = add_noise(stack_frames(cond, up), full_eps, cfg.t_thresh);
    const auto res = conditioned_refine(cond, x_lr, full_eps, cfg,
                                        oracle_for(refinement_target(full_x0, full_thresh, cfg.t_thresh)), plan.mode);
    dev_check(report, "conditioned_oracle_recovery", max_abs_diff(res.x_sr, full_x0));

    const auto wobble = conditioned_refine(
        cond, x_lr, full_eps, cfg,
        [](const GridSignal& x, double t) {
          GridSignal v = x;
          for (double& e : v.tensor().data()) e = std::cos(e) - t;
          return v;
        },
        plan.mode);
    bool passthrough = true;
    for (std::size_t i = 0; i < cond.tensor().size(); ++i) passthrough = passthrough && wobble.x_sr.tensor()[i] == cond.tensor()[i];
    report.check("condition_passthrough", passthrough);
    refined = res.x_sr;
  }

  // Block-sparse expert with every key block selected against the dense one.
  const bsa::GridSpec grid{up.frames(), up.height(), up.width()};
  const std::size_t nk = bsa::BlockLayout(grid, plan.blocks).block_count();
  SeededRng expert_rng = SeededRng(plan.seed).fork(1);
  auto sparse = AttentionExpert::random(up.channels(), 4, plan.blocks, nk, expert_rng);
  auto dense = sparse;
  dense.r = 0;
  dev_check(report, "bsa_expert_full_equals_dense", max_abs_diff(sparse(x_thresh, cfg.t_thresh), dense(x_thresh, cfg.t_thresh)));

  report.write_tensor("x_lr.tensor", x_lr.tensor());
  report.write_tensor("x0.tensor", x0.tensor());
  report.write_tensor("refined.tensor", refined.tensor());
  log << "refine-demo: " << up.frames() << "x" << up.height() << "x" << up.width() << " refined in " << cfg.steps
      << " steps from t_thresh " << format_real(cfg.t_thresh) << "\n";
}

Execute prepare(const Config& c) {
  RefinePlan plan;
  plan.cfg = RefinementConfig{c.real("t_thresh"), c.count("steps"), c.real("spatial_scale"), c.real("temporal_scale")};
  plan.frames = c.count("frames");
  plan.height = c.count("height");
  plan.width = c.count("width");
  plan.channels = c.count("channels");
  plan.cond_frames = c.count("cond_frames");
  plan.detail = c.real("detail");
  plan.blocks = bsa::BlockSpec{c.count("block_t"), c.count("block_h"), c.count("block_w")};
  plan.seed = c.seed("seed");
  const auto& mode = c.text("condition_noise");
  if (mode == "repin")
    plan.mode = ConditionNoise::Repin;
  else if (mode == "clean")
    plan.mode = ConditionNoise::Clean;
  else
    throw ConfigError("condition_noise must be 'repin' or 'clean', got '" + mode + "'");
  if (plan.frames == 0 || plan.height == 0 || plan.width == 0 || plan.channels == 0)
    throw Error(ErrorKind::InvalidShape, "low-resolution extents and channels must be positive");
  plan.cfg.validate();
  const auto up = upsample_lowres(GridSignal(plan.frames, plan.height, plan.width, plan.channels), plan.cfg);
  bsa::BlockLayout(bsa::GridSpec{up.frames(), up.height(), up.width()}, plan.blocks);
  return [plan](Report& report, std::ostream& log) { execute(plan, report, log); };
}

}  // namespace

Command refine_demo_command() {
  return Command{"refine-demo",
                 "coarse-to-fine refinement identities on a synthetic latent",
                 {{"t_thresh", "0.5"},
                  {"steps", "5"},
                  {"spatial_scale", "1.5"},
                  {"temporal_scale", "2"},
                  {"frames", "2"},
                  {"height", "4"},
                  {"width", "4"},
                  {"channels", "2"},
                  {"cond_frames", "1"},
                  {"condition_noise", "repin"},
                  {"detail", "0.1"},
                  {"block_t", "2"},
                  {"block_h", "3"},
                  {"block_w", "3"},
                  {"seed", "0"}},
                 prepare};
}

}  // namespace sparseflow::cli
