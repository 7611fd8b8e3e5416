#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "sparseflow/core/rng.hpp"

namespace sparseflow {

struct VelocityNetShape {
  std::size_t state_dim = 2;       // D
  std::size_t cond_dim = 4;        // C
  std::size_t hidden1 = 64;
  std::size_t hidden2 = 64;

  std::size_t input_dim() const { return state_dim + 1 + cond_dim; }
  std::size_t parameter_count() const;
};

// Two-hidden-layer tanh MLP predicting a velocity from (x, t, c).
// Input layout is [x (D), t (1), c (C)]; t enters as a raw scalar feature.
//
// Parameters live in one flat vector, packed as
//   W1 (H1 x In), b1 (H1), W2 (H2 x H1), b2 (H2), W3 (D x H2), b3 (D)
// so optimizers and finite-difference checks can treat them uniformly.
class VelocityNet {
 public:
  explicit VelocityNet(VelocityNetShape shape);
  VelocityNet(VelocityNetShape shape, std::vector<double> parameters);

  // uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
  static VelocityNet initialized(VelocityNetShape shape, SeededRng& rng);

  const VelocityNetShape& shape() const noexcept { return shape_; }
  std::span<const double> parameters() const noexcept { return params_; }
  std::vector<double>& mutable_parameters() noexcept { return params_; }

  std::vector<double> forward(std::span<const double> x, double t, std::span<const double> c) const;

  // Gradient of upstream . v(x, t, c) with respect to the flat parameters.
  std::vector<double> backward(std::span<const double> x, double t, std::span<const double> c,
                               std::span<const double> upstream) const;

  // Same as backward but accumulates scale * gradient into `grad`.
  void accumulate_backward(std::span<const double> x, double t, std::span<const double> c,
                           std::span<const double> upstream, double scale, std::span<double> grad) const;

 private:
  struct Offsets {
    std::size_t w1, b1, w2, b2, w3, b3;
  };
  Offsets offsets() const;
  void check_inputs(std::span<const double> x, std::span<const double> c) const;

  VelocityNetShape shape_;
  std::vector<double> params_;
};

}  // namespace sparseflow
