#include "sparseflow/grpo/flow.hpp"

#include <cmath>
#include <numbers>

#include "sparseflow/core/error.hpp"

namespace sparseflow::grpo {

namespace {

void check_same_size(std::span<const double> a, std::span<const double> b, const char* what) {
  SF_CHECK(a.size() == b.size(), ErrorKind::DimensionMismatch,
           std::string(what) + ": sizes " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
}

double raw_logit_normal(double t) {
  const double l = std::log(t / (1.0 - t));
  return std::exp(-0.5 * l * l) / (std::sqrt(2.0 * std::numbers::pi) * t * (1.0 - t));
}

}  // namespace

FmPair fm_pair(std::span<const double> x0, std::span<const double> eps, double t) {
  check_same_size(x0, eps, "fm_pair");
  SF_CHECK(t >= 0.0 && t <= 1.0, ErrorKind::TimeOutOfDomain, "t = " + std::to_string(t) + " outside [0, 1]");
  FmPair p{Vec(x0.size()), Vec(x0.size())};
  for (std::size_t i = 0; i < x0.size(); ++i) {
    p.x_t[i] = (1.0 - t) * x0[i] + t * eps[i];
    p.v[i] = x0[i] - eps[i];
  }
  return p;
}

double logit_normal_weight(double t) {
  static const double norm = [] {
    constexpr int n = 100000;
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += raw_logit_normal((i + 0.5) / n);
    return s / n;
  }();
  if (t <= 0.0 || t >= 1.0) return 0.0;
  return raw_logit_normal(t) / norm;
}

LossAndGrad fm_loss(const VelocityNet& net, std::span<const FmSample> batch, bool weighted) {
  SF_CHECK(!batch.empty(), ErrorKind::InvalidConfig, "fm_loss needs a nonempty batch");
  LossAndGrad out{0.0, Vec(net.parameters().size(), 0.0)};
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  Vec upstream;
  for (const auto& s : batch) {
    const auto pair = fm_pair(s.x0, s.eps, s.t);
    const auto pred = net.forward(pair.x_t, s.t, s.c);
    const double w = weighted ? logit_normal_weight(s.t) : 1.0;
    upstream.assign(pred.size(), 0.0);
    double sq = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const double r = pred[i] - pair.v[i];
      sq += r * r;
      upstream[i] = 2.0 * w * r;
    }
    out.loss += w * sq * inv_n;
    net.accumulate_backward(pair.x_t, s.t, s.c, upstream, inv_n, out.grad);
  }
  return out;
}

std::vector<double> shifted_times(std::size_t steps, double shift) {
  SF_CHECK(steps >= 1, ErrorKind::InvalidConfig, "need at least one sampling step");
  SF_CHECK(shift >= 1.0, ErrorKind::InvalidConfig, "timeshift must be >= 1");
  std::vector<double> grid(steps + 1);
  for (std::size_t i = 0; i <= steps; ++i) {
    const double u = static_cast<double>(steps - i) / static_cast<double>(steps);
    grid[i] = shift * u / (1.0 + (shift - 1.0) * u);
  }
  grid.front() = 1.0;
  grid.back() = 0.0;
  return grid;
}

double sigma_t(double t, const NoiseSchedule& schedule) {
  SF_CHECK(t > 0.0 && t < 1.0, ErrorKind::TimeOutOfDomain, "sigma_t needs 0 < t < 1, got " + std::to_string(t));
  return schedule.a * std::sqrt(t / (1.0 - t));
}

Diffusion clipped_diffusion(double t, double dt, const NoiseSchedule& schedule) {
  SF_CHECK(dt > 0.0, ErrorKind::InvalidConfig, "step size must be positive");
  const double sigma = sigma_t(t, schedule);
  const double raw = sigma * std::sqrt(dt);
  if (raw <= schedule.tau) return {raw, sigma, false};
  return {schedule.tau, schedule.tau / std::sqrt(dt), true};
}

Vec sde_drift(std::span<const double> x, std::span<const double> v, double t, double sigma) {
  check_same_size(x, v, "sde_drift");
  const double k = sigma * sigma / (2.0 * t);
  Vec d(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) d[i] = v[i] + k * (x[i] + (1.0 - t) * v[i]);
  return d;
}

double mean_velocity_gain(double t, double dt, double sigma) {
  return dt * (1.0 + sigma * sigma * (1.0 - t) / (2.0 * t));
}

Vec GuidedVelocity::operator()(std::span<const double> x, double t, std::span<const double> c) const {
  auto vc = net_->forward(x, t, c);
  if (scale_ == 1.0) return vc;
  const Vec null(c.size(), 0.0);
  const auto vu = net_->forward(x, t, null);
  for (std::size_t i = 0; i < vc.size(); ++i) vc[i] = vu[i] + scale_ * (vc[i] - vu[i]);
  return vc;
}

void GuidedVelocity::accumulate_backward(std::span<const double> x, double t, std::span<const double> c,
                                         std::span<const double> upstream, double weight,
                                         std::span<double> grad) const {
  if (scale_ == 1.0) {
    net_->accumulate_backward(x, t, c, upstream, weight, grad);
    return;
  }
  const Vec null(c.size(), 0.0);
  net_->accumulate_backward(x, t, c, upstream, weight * scale_, grad);
  net_->accumulate_backward(x, t, null, upstream, weight * (1.0 - scale_), grad);
}

SdeStep sde_step_from_velocity(std::span<const double> x, std::span<const double> v, double t, double dt,
                               std::span<const double> eps, const NoiseSchedule& schedule) {
  check_same_size(x, eps, "sde_step");
  SF_CHECK(t - dt >= -1e-12, ErrorKind::TimeOutOfDomain, "step would move past t = 0");
  const auto diff = clipped_diffusion(t, dt, schedule);
  const auto drift = sde_drift(x, v, t, diff.sigma_eff);
  SdeStep s{Vec(x.size()), Vec(x.size()), diff};
  for (std::size_t i = 0; i < x.size(); ++i) {
    s.mean[i] = x[i] + drift[i] * dt;
    s.x_next[i] = s.mean[i] - diff.coef * eps[i];
  }
  return s;
}

SdeStep sde_step(std::span<const double> x, double t, double dt, const GuidedVelocity& model,
                 std::span<const double> eps, const NoiseSchedule& schedule, std::span<const double> c) {
  const auto v = model(x, t, c);
  return sde_step_from_velocity(x, v, t, dt, eps, schedule);
}

Vec ode_step(std::span<const double> x, double t, double dt, const GuidedVelocity& model,
             std::span<const double> c) {
  const auto v = model(x, t, c);
  Vec out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + v[i] * dt;
  return out;
}

double transition_logprob(std::span<const double> x_prev, std::span<const double> mean, double coef) {
  check_same_size(x_prev, mean, "transition_logprob");
  const double var = coef * coef;
  SF_CHECK(var > 0.0 && std::isfinite(var), ErrorKind::DegenerateVariance,
           "transition variance " + std::to_string(var) + " is not positive and finite");
  double sq = 0.0;
  for (std::size_t i = 0; i < x_prev.size(); ++i) sq += (x_prev[i] - mean[i]) * (x_prev[i] - mean[i]);
  const double d = static_cast<double>(x_prev.size());
  return -0.5 * sq / var - 0.5 * d * std::log(2.0 * std::numbers::pi * var);
}

}  // namespace sparseflow::grpo
