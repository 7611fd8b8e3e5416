#pragma once

#include <limits>
#include <span>
#include <vector>

#include "sparseflow/core/velocity_net.hpp"

namespace sparseflow::grpo {

using Vec = std::vector<double>;

// x_t = (1 - t) x0 + t eps, target velocity v = x0 - eps. Time runs from
// noise (t = 1) to data (t = 0).
struct FmPair {
  Vec x_t, v;
};
FmPair fm_pair(std::span<const double> x0, std::span<const double> eps, double t);

// Logit-normal(0, 1) density at t, scaled to mean 1 over (0, 1).
double logit_normal_weight(double t);

struct FmSample {
  Vec x0, eps;
  double t = 0.5;
  Vec c;
};

struct LossAndGrad {
  double loss = 0.0;
  Vec grad;
};

// mean_i w(t_i) * |v_pred - v_i|^2 and its parameter gradient.
LossAndGrad fm_loss(const VelocityNet& net, std::span<const FmSample> batch, bool weighted = true);

// Decreasing grid of T + 1 times, t(u) = s u / (1 + (s - 1) u) at u = 1 - i/T.
std::vector<double> shifted_times(std::size_t steps, double shift);

struct NoiseSchedule {
  double a = 1.0;
  double tau = 0.45;
};

// a * sqrt(t / (1 - t)); TimeOutOfDomain outside (0, 1).
double sigma_t(double t, const NoiseSchedule& schedule);

struct Diffusion {
  double coef;       // multiplies eps
  double sigma_eff;  // sigma used inside the drift
  bool clipped;
};

// sigma sqrt(dt) capped at tau; once capped the drift uses tau / sqrt(dt).
Diffusion clipped_diffusion(double t, double dt, const NoiseSchedule& schedule);

// v + sigma^2 / (2t) * (x + (1 - t) v)
Vec sde_drift(std::span<const double> x, std::span<const double> v, double t, double sigma);

// d mean / d v for one SDE step: dt * (1 + sigma^2 (1 - t) / (2t)).
double mean_velocity_gain(double t, double dt, double sigma);

// Classifier-free guidance around a velocity net; the null condition is the
// zero vector. Scale 1 uses the conditional branch alone.
class GuidedVelocity {
 public:
  GuidedVelocity(const VelocityNet& net, double scale) : net_(&net), scale_(scale) {}

  const VelocityNet& net() const { return *net_; }
  double scale() const { return scale_; }

  Vec operator()(std::span<const double> x, double t, std::span<const double> c) const;
  void accumulate_backward(std::span<const double> x, double t, std::span<const double> c,
                           std::span<const double> upstream, double weight, std::span<double> grad) const;

 private:
  const VelocityNet* net_;
  double scale_;
};

struct SdeStep {
  Vec mean;
  Vec x_next;
  Diffusion diffusion;
};

// mean = x + drift dt, x_next = mean - coef * eps.
SdeStep sde_step_from_velocity(std::span<const double> x, std::span<const double> v, double t, double dt,
                               std::span<const double> eps, const NoiseSchedule& schedule);
SdeStep sde_step(std::span<const double> x, double t, double dt, const GuidedVelocity& model,
                 std::span<const double> eps, const NoiseSchedule& schedule, std::span<const double> c);

Vec ode_step(std::span<const double> x, double t, double dt, const GuidedVelocity& model,
             std::span<const double> c);

// log N(x_prev; mean, coef^2 I). DegenerateVariance if coef^2 is not positive.
double transition_logprob(std::span<const double> x_prev, std::span<const double> mean, double coef);

}  // namespace sparseflow::grpo
