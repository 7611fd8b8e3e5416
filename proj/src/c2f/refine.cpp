#include "sparseflow/c2f/refine.hpp"

#include <cmath>

#include "sparseflow/bsa/attention.hpp"
#include "sparseflow/bsa/selection.hpp"
#include "sparseflow/core/error.hpp"
#include "sparseflow/core/ops.hpp"

namespace sparseflow::c2f {

GridSignal::GridSignal(std::size_t frames, std::size_t height, std::size_t width, std::size_t channels, double fill)
    : values_({frames, height, width, channels}, fill) {}

GridSignal::GridSignal(Tensor values) : values_(std::move(values)) {
  SF_CHECK(values_.rank() == 4, ErrorKind::InvalidShape,
           "grid signal needs a (T, H, W, C) tensor, got " + shape_to_string(values_.shape()));
}

namespace {

std::size_t scaled_extent(std::size_t n, double factor, const char* axis) {
  const double target = static_cast<double>(n) * factor;
  const double rounded = std::round(target);
  SF_CHECK(factor > 0.0 && rounded >= 1.0 && std::abs(target - rounded) < 1e-9, ErrorKind::NonIntegralTarget,
           std::string(axis) + " extent " + std::to_string(n) + " x " + std::to_string(factor) +
               " is not a whole number");
  return static_cast<std::size_t>(rounded);
}

// Linear resampling of one axis (0 = T, 1 = H, 2 = W) to `out_n` samples,
// first and last samples aligned with the input's.
GridSignal resample_axis(const GridSignal& x, int axis, std::size_t out_n) {
  Shape in = x.tensor().shape();
  Shape out_shape = in;
  out_shape[axis] = out_n;
  Tensor out(out_shape);
  const std::size_t n = in[axis];
  std::size_t inner = 1;
  for (int a = axis + 1; a < 4; ++a) inner *= in[a];
  std::size_t outer = 1;
  for (int a = 0; a < axis; ++a) outer *= in[a];
  for (std::size_t j = 0; j < out_n; ++j) {
    const double p = out_n > 1 ? static_cast<double>(j) * static_cast<double>(n - 1) / static_cast<double>(out_n - 1)
                               : 0.0;
    std::size_t i0 = static_cast<std::size_t>(std::floor(p));
    if (i0 + 1 >= n) i0 = n >= 2 ? n - 2 : 0;
    const std::size_t i1 = n >= 2 ? i0 + 1 : 0;
    const double f = n >= 2 ? p - static_cast<double>(i0) : 0.0;
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t k = 0; k < inner; ++k) {
        const double a = x.tensor()[(o * n + i0) * inner + k];
        const double b = x.tensor()[(o * n + i1) * inner + k];
        out[(o * out_n + j) * inner + k] = f == 0.0 ? a : (1.0 - f) * a + f * b;
      }
  }
  return GridSignal(std::move(out));
}

GridSignal box_axis(const GridSignal& x, int axis, double factor) {
  const Shape& in = x.tensor().shape();
  const std::size_t n = in[axis];
  const double rounded = std::round(factor);
  SF_CHECK(rounded >= 1.0 && std::abs(factor - rounded) < 1e-12 && n % static_cast<std::size_t>(rounded) == 0,
           ErrorKind::NonIntegralTarget,
           "box downsampling needs an integer factor dividing the extent (" + std::to_string(n) + " / " +
               std::to_string(factor) + ")");
  const std::size_t f = static_cast<std::size_t>(rounded);
  if (f == 1) return x;
  Shape out_shape = in;
  out_shape[axis] = n / f;
  Tensor out(out_shape);
  std::size_t inner = 1, outer = 1;
  for (int a = axis + 1; a < 4; ++a) inner *= in[a];
  for (int a = 0; a < axis; ++a) outer *= in[a];
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t j = 0; j < n / f; ++j)
      for (std::size_t k = 0; k < inner; ++k) {
        double s = 0.0;
        for (std::size_t q = 0; q < f; ++q) s += x.tensor()[(o * n + j * f + q) * inner + k];
        out[(o * (n / f) + j) * inner + k] = s / static_cast<double>(f);
      }
  return GridSignal(std::move(out));
}

void check_same_extents(const GridSignal& a, const GridSignal& b, const char* what) {
  SF_CHECK(a.tensor().shape() == b.tensor().shape(), ErrorKind::ExtentMismatch,
           std::string(what) + ": " + shape_to_string(a.tensor().shape()) + " vs " +
               shape_to_string(b.tensor().shape()));
}

// alpha * a + beta * b
GridSignal combine(double alpha, const GridSignal& a, double beta, const GridSignal& b) {
  check_same_extents(a, b, "combine");
  GridSignal out = a;
  auto& o = out.tensor();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = alpha * a.tensor()[i] + beta * b.tensor()[i];
  return out;
}

GridSignal concat_frames(const GridSignal& a, const GridSignal& b) {
  SF_CHECK(a.height() == b.height() && a.width() == b.width() && a.channels() == b.channels(),
           ErrorKind::ExtentMismatch,
           "condition frames " + shape_to_string(a.tensor().shape()) + " do not match upsampled frames " +
               shape_to_string(b.tensor().shape()));
  GridSignal out(a.frames() + b.frames(), a.height(), a.width(), a.channels());
  auto& o = out.tensor();
  const std::size_t na = a.tensor().size();
  for (std::size_t i = 0; i < na; ++i) o[i] = a.tensor()[i];
  for (std::size_t i = 0; i < b.tensor().size(); ++i) o[na + i] = b.tensor()[i];
  return out;
}

void pin_frames(GridSignal& x, const GridSignal& cond) {
  for (std::size_t i = 0; i < cond.tensor().size(); ++i) x.tensor()[i] = cond.tensor()[i];
}

RefineResult euler(const Expert& expert, const GridSignal& x_thresh, const RefinementConfig& cfg,
                   const GridSignal* pinned) {
  cfg.validate();
  RefineResult res{x_thresh, {x_thresh}, {cfg.t_thresh}};
  GridSignal x = x_thresh;
  for (std::size_t k = 0; k < cfg.steps; ++k) {
    const double t = cfg.t_thresh * static_cast<double>(cfg.steps - k) / static_cast<double>(cfg.steps);
    const double t_next = cfg.t_thresh * static_cast<double>(cfg.steps - k - 1) / static_cast<double>(cfg.steps);
    const auto v = expert(x, t);
    check_same_extents(v, x, "expert output");
    x = combine(1.0, x, t - t_next, v);
    if (pinned) pin_frames(x, *pinned);
    res.states.push_back(x);
    res.times.push_back(t_next);
  }
  res.x_sr = x;
  return res;
}

}  // namespace

GridSignal upsample_trilinear(const GridSignal& x, ScaleFactors factors) {
  const std::size_t nt = scaled_extent(x.frames(), factors.t, "T");
  const std::size_t nh = scaled_extent(x.height(), factors.h, "H");
  const std::size_t nw = scaled_extent(x.width(), factors.w, "W");
  return resample_axis(resample_axis(resample_axis(x, 0, nt), 1, nh), 2, nw);
}

GridSignal downsample_trilinear(const GridSignal& x, ScaleFactors factors) {
  return box_axis(box_axis(box_axis(x, 0, factors.t), 1, factors.h), 2, factors.w);
}

void RefinementConfig::validate() const {
  SF_CHECK(t_thresh > 0.0 && t_thresh <= 1.0, ErrorKind::InvalidConfig, "t_thresh must lie in (0, 1]");
  SF_CHECK(steps >= 1, ErrorKind::InvalidConfig, "refinement needs at least one step");
  SF_CHECK(spatial_scale > 0.0 && temporal_scale > 0.0, ErrorKind::InvalidConfig, "scales must be positive");
}

GridSignal upsample_lowres(const GridSignal& x_lr, const RefinementConfig& cfg) {
  return upsample_trilinear(x_lr, cfg.factors());
}

GridSignal add_noise(const GridSignal& x_up, const GridSignal& eps, double t) {
  return combine(1.0 - t, x_up, t, eps);
}

GridSignal make_refinement_input(const GridSignal& x0, const GridSignal& x_lr, const GridSignal& eps, double t_prime,
                                 const RefinementConfig& cfg) {
  cfg.validate();
  SF_CHECK(t_prime >= 0.0 && t_prime <= cfg.t_thresh, ErrorKind::TimeAboveThreshold,
           "t' = " + std::to_string(t_prime) + " outside [0, " + std::to_string(cfg.t_thresh) + "]");
  const auto x_thresh = add_noise(upsample_lowres(x_lr, cfg), eps, cfg.t_thresh);
  check_same_extents(x0, x_thresh, "x0 vs upsampled input");
  const double s = t_prime / cfg.t_thresh;
  return combine(1.0 - s, x0, s, x_thresh);
}

GridSignal refinement_target(const GridSignal& x0, const GridSignal& x_thresh, double t_thresh) {
  SF_CHECK(t_thresh > 0.0, ErrorKind::InvalidConfig, "t_thresh must be positive");
  return combine(1.0 / t_thresh, x0, -1.0 / t_thresh, x_thresh);
}

RefineResult refine_sample(const Expert& expert, const GridSignal& x_thresh, const RefinementConfig& cfg) {
  return euler(expert, x_thresh, cfg, nullptr);
}

RefineResult conditioned_refine(const std::optional<GridSignal>& cond_hr, const GridSignal& x_lr,
                                const GridSignal& eps, const RefinementConfig& cfg, const Expert& expert,
                                ConditionNoise mode) {
  cfg.validate();
  const auto up = upsample_lowres(x_lr, cfg);
  if (!cond_hr) return refine_sample(expert, add_noise(up, eps, cfg.t_thresh), cfg);

  const auto x_up = concat_frames(*cond_hr, up);
  auto x_thresh = add_noise(x_up, eps, cfg.t_thresh);
  if (mode == ConditionNoise::Clean) pin_frames(x_thresh, *cond_hr);
  auto res = euler(expert, x_thresh, cfg, mode == ConditionNoise::Clean ? &*cond_hr : nullptr);
  pin_frames(res.x_sr, *cond_hr);
  pin_frames(res.states.back(), *cond_hr);
  return res;
}

AttentionExpert AttentionExpert::random(std::size_t channels, std::size_t head_dim, bsa::BlockSpec blocks,
                                        std::size_t r, SeededRng& rng) {
  const double bq = 1.0 / std::sqrt(static_cast<double>(channels));
  const double bo = 1.0 / std::sqrt(static_cast<double>(head_dim));
  return AttentionExpert{uniform_sample(rng, {channels, head_dim}, -bq, bq),
                         uniform_sample(rng, {channels, head_dim}, -bq, bq),
                         uniform_sample(rng, {channels, head_dim}, -bq, bq),
                         uniform_sample(rng, {head_dim, channels}, -bo, bo), blocks, r};
}

GridSignal AttentionExpert::operator()(const GridSignal& x, double) const {
  const std::size_t n = x.frames() * x.height() * x.width(), C = x.channels(), d = wq.extent(1);
  SF_CHECK(wq.extent(0) == C, ErrorKind::DimensionMismatch, "expert weights do not match the channel count");
  const Tensor tokens = x.tensor().reshaped({n, C});
  const Shape qkv_shape{1, 1, n, d};
  const Tensor q = matmul(tokens, wq).reshaped(qkv_shape);
  const Tensor k = matmul(tokens, wk).reshaped(qkv_shape);
  const Tensor v = matmul(tokens, wv).reshaped(qkv_shape);

  Tensor o;
  if (r == 0) {
    o = bsa::dense_attention(q, k, v);
  } else {
    const bsa::GridSpec grid{x.frames(), x.height(), x.width(), d};
    auto [qb, layout] = bsa::rearrange_to_blocks(q, grid, blocks);
    const auto kb = bsa::apply_layout(k, layout);
    const auto vb = bsa::apply_layout(v, layout);
    const std::size_t bt = layout.block_tokens();
    const auto mask = bsa::select_topr(
        bsa::pooled_scores(bsa::pool_blocks(qb, bt), bsa::pool_blocks(kb, bt), d), r);
    o = bsa::inverse_rearrange(bsa::sparse_attention_forward(qb, kb, vb, mask, {bt, bt}).out, layout);
  }
  return GridSignal(matmul(o.reshaped({n, d}), wo).reshaped(x.tensor().shape()));
}

double l2_norm(const GridSignal& x) {
  double s = 0.0;
  for (double v : x.tensor().data()) s += v * v;
  return std::sqrt(s);
}

double max_abs_diff(const GridSignal& a, const GridSignal& b) { return sparseflow::max_abs_diff(a.tensor(), b.tensor()); }

}  // namespace sparseflow::c2f
