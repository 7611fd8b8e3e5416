#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "sparseflow/bsa/layout.hpp"
#include "sparseflow/core/rng.hpp"
#include "sparseflow/core/tensor.hpp"

namespace sparseflow::c2f {

// Values on a (T, H, W) grid with C channels, stored as a (T, H, W, C) tensor.
class GridSignal {
 public:
  GridSignal(std::size_t frames, std::size_t height, std::size_t width, std::size_t channels, double fill = 0.0);
  explicit GridSignal(Tensor values);

  std::size_t frames() const { return values_.extent(0); }
  std::size_t height() const { return values_.extent(1); }
  std::size_t width() const { return values_.extent(2); }
  std::size_t channels() const { return values_.extent(3); }

  const Tensor& tensor() const { return values_; }
  Tensor& tensor() { return values_; }
  double& at(std::size_t t, std::size_t h, std::size_t w, std::size_t c) { return values_.at({t, h, w, c}); }
  double at(std::size_t t, std::size_t h, std::size_t w, std::size_t c) const { return values_.at({t, h, w, c}); }

  bool operator==(const GridSignal&) const = default;

 private:
  Tensor values_;
};

struct ScaleFactors {
  double t = 2.0;
  double h = 1.5;
  double w = 1.5;
};

// Corner-aligned trilinear interpolation to extent * factor on each axis.
// NonIntegralTarget if a target extent is not a whole number.
GridSignal upsample_trilinear(const GridSignal& x, ScaleFactors factors);

// Box average over integer factors. NonIntegralTarget unless every factor is
// an integer dividing its extent.
GridSignal downsample_trilinear(const GridSignal& x, ScaleFactors factors);

struct RefinementConfig {
  double t_thresh = 0.5;
  std::size_t steps = 5;
  double spatial_scale = 1.5;
  double temporal_scale = 2.0;

  ScaleFactors factors() const { return {temporal_scale, spatial_scale, spatial_scale}; }
  void validate() const;
};

// Decode -> upsample -> encode, with the codec as identity.
GridSignal upsample_lowres(const GridSignal& x_lr, const RefinementConfig& cfg);

// (1 - t) x_up + t eps
GridSignal add_noise(const GridSignal& x_up, const GridSignal& eps, double t);

// x_{t'} = x0 + (x_thresh - x0) t' / t_thresh. TimeAboveThreshold outside [0, t_thresh].
GridSignal make_refinement_input(const GridSignal& x0, const GridSignal& x_lr, const GridSignal& eps, double t_prime,
                                 const RefinementConfig& cfg);

// (x0 - x_thresh) / t_thresh, constant along the path.
GridSignal refinement_target(const GridSignal& x0, const GridSignal& x_thresh, double t_thresh);

using Expert = std::function<GridSignal(const GridSignal& x, double t)>;

struct RefineResult {
  GridSignal x_sr;
  std::vector<GridSignal> states;  // x at every sub-grid time, from t_thresh down to 0
  std::vector<double> times;
};

// Euler from t_thresh to 0 on a uniform grid of cfg.steps steps.
RefineResult refine_sample(const Expert& expert, const GridSignal& x_thresh, const RefinementConfig& cfg);

enum class ConditionNoise {
  Repin,  // condition frames noised with the rest, restored after sampling
  Clean,  // condition frames held at their clean values throughout
};

// X_up = [X_hr_cond, upsample(X_lr)] along T, noised to t_thresh and refined.
// eps covers the full concatenated extents.
RefineResult conditioned_refine(const std::optional<GridSignal>& cond_hr, const GridSignal& x_lr,
                                const GridSignal& eps, const RefinementConfig& cfg, const Expert& expert,
                                ConditionNoise mode = ConditionNoise::Repin);

// Single attention layer over the grid tokens, projected C -> d -> C. Block
// sparse with top-r selection, or dense when r == 0.
struct AttentionExpert {
  Tensor wq, wk, wv;  // (C, d)
  Tensor wo;          // (d, C)
  bsa::BlockSpec blocks{};
  std::size_t r = 0;

  static AttentionExpert random(std::size_t channels, std::size_t head_dim, bsa::BlockSpec blocks, std::size_t r,
                                SeededRng& rng);
  GridSignal operator()(const GridSignal& x, double t) const;
};

double l2_norm(const GridSignal& x);
double max_abs_diff(const GridSignal& a, const GridSignal& b);

}  // namespace sparseflow::c2f
