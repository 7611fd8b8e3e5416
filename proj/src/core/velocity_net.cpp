#include "sparseflow/core/velocity_net.hpp"

#include <cmath>

#include "sparseflow/core/error.hpp"

namespace sparseflow {

std::size_t VelocityNetShape::parameter_count() const {
  const std::size_t in = input_dim();
  return hidden1 * in + hidden1 + hidden2 * hidden1 + hidden2 + state_dim * hidden2 + state_dim;
}

VelocityNet::VelocityNet(VelocityNetShape shape) : shape_(shape), params_(shape.parameter_count(), 0.0) {
  SF_CHECK(shape.state_dim >= 1 && shape.hidden1 >= 1 && shape.hidden2 >= 1, ErrorKind::InvalidShape,
           "velocity net widths must be positive");
}

VelocityNet::VelocityNet(VelocityNetShape shape, std::vector<double> parameters)
    : shape_(shape), params_(std::move(parameters)) {
  SF_CHECK(params_.size() == shape_.parameter_count(), ErrorKind::DimensionMismatch,
           "expected " + std::to_string(shape_.parameter_count()) + " parameters, got " +
               std::to_string(params_.size()));
}

VelocityNet VelocityNet::initialized(VelocityNetShape shape, SeededRng& rng) {
  VelocityNet net(shape);
  const auto off = net.offsets();
  auto fill = [&](std::size_t begin, std::size_t end, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (std::size_t i = begin; i < end; ++i) net.params_[i] = rng.uniform(-bound, bound);
  };
  fill(off.w1, off.b2, shape.input_dim());
  fill(off.w2, off.w3, shape.hidden1);
  fill(off.w3, net.params_.size(), shape.hidden2);
  return net;
}

VelocityNet::Offsets VelocityNet::offsets() const {
  Offsets o{};
  const std::size_t in = shape_.input_dim();
  o.w1 = 0;
  o.b1 = o.w1 + shape_.hidden1 * in;
  o.w2 = o.b1 + shape_.hidden1;
  o.b2 = o.w2 + shape_.hidden2 * shape_.hidden1;
  o.w3 = o.b2 + shape_.hidden2;
  o.b3 = o.w3 + shape_.state_dim * shape_.hidden2;
  return o;
}

void VelocityNet::check_inputs(std::span<const double> x, std::span<const double> c) const {
  SF_CHECK(x.size() == shape_.state_dim, ErrorKind::DimensionMismatch,
           "state has " + std::to_string(x.size()) + " entries, net expects " + std::to_string(shape_.state_dim));
  SF_CHECK(c.size() == shape_.cond_dim, ErrorKind::DimensionMismatch,
           "condition has " + std::to_string(c.size()) + " entries, net expects " +
               std::to_string(shape_.cond_dim));
}

namespace {

struct Activations {
  std::vector<double> input, h1, h2, out;
};

}  // namespace

static Activations run_forward(const VelocityNetShape& s, std::span<const double> p, std::size_t w1,
                               std::size_t b1, std::size_t w2, std::size_t b2, std::size_t w3, std::size_t b3,
                               std::span<const double> x, double t, std::span<const double> c) {
  Activations a;
  const std::size_t in = s.input_dim();
  a.input.reserve(in);
  a.input.insert(a.input.end(), x.begin(), x.end());
  a.input.push_back(t);
  a.input.insert(a.input.end(), c.begin(), c.end());

  a.h1.assign(s.hidden1, 0.0);
  for (std::size_t i = 0; i < s.hidden1; ++i) {
    double z = p[b1 + i];
    for (std::size_t j = 0; j < in; ++j) z += p[w1 + i * in + j] * a.input[j];
    a.h1[i] = std::tanh(z);
  }
  a.h2.assign(s.hidden2, 0.0);
  for (std::size_t i = 0; i < s.hidden2; ++i) {
    double z = p[b2 + i];
    for (std::size_t j = 0; j < s.hidden1; ++j) z += p[w2 + i * s.hidden1 + j] * a.h1[j];
    a.h2[i] = std::tanh(z);
  }
  a.out.assign(s.state_dim, 0.0);
  for (std::size_t i = 0; i < s.state_dim; ++i) {
    double z = p[b3 + i];
    for (std::size_t j = 0; j < s.hidden2; ++j) z += p[w3 + i * s.hidden2 + j] * a.h2[j];
    a.out[i] = z;
  }
  return a;
}

std::vector<double> VelocityNet::forward(std::span<const double> x, double t, std::span<const double> c) const {
  check_inputs(x, c);
  const auto o = offsets();
  return run_forward(shape_, params_, o.w1, o.b1, o.w2, o.b2, o.w3, o.b3, x, t, c).out;
}

std::vector<double> VelocityNet::backward(std::span<const double> x, double t, std::span<const double> c,
                                          std::span<const double> upstream) const {
  std::vector<double> grad(params_.size(), 0.0);
  accumulate_backward(x, t, c, upstream, 1.0, grad);
  return grad;
}

void VelocityNet::accumulate_backward(std::span<const double> x, double t, std::span<const double> c,
                                      std::span<const double> upstream, double scale,
                                      std::span<double> grad) const {
  check_inputs(x, c);
  SF_CHECK(upstream.size() == shape_.state_dim, ErrorKind::DimensionMismatch,
           "upstream has " + std::to_string(upstream.size()) + " entries");
  SF_CHECK(grad.size() == params_.size(), ErrorKind::DimensionMismatch, "gradient buffer size");
  const auto o = offsets();
  const auto a = run_forward(shape_, params_, o.w1, o.b1, o.w2, o.b2, o.w3, o.b3, x, t, c);
  const std::size_t in = shape_.input_dim();
  const std::size_t H1 = shape_.hidden1, H2 = shape_.hidden2, D = shape_.state_dim;

  // Output layer.
  std::vector<double> g_out(D);
  for (std::size_t i = 0; i < D; ++i) g_out[i] = scale * upstream[i];
  std::vector<double> g_h2(H2, 0.0);
  for (std::size_t i = 0; i < D; ++i) {
    grad[o.b3 + i] += g_out[i];
    for (std::size_t j = 0; j < H2; ++j) {
      grad[o.w3 + i * H2 + j] += g_out[i] * a.h2[j];
      g_h2[j] += g_out[i] * params_[o.w3 + i * H2 + j];
    }
  }
  // Second hidden layer; tanh' = 1 - tanh^2.
  std::vector<double> g_h1(H1, 0.0);
  for (std::size_t i = 0; i < H2; ++i) {
    const double gz = g_h2[i] * (1.0 - a.h2[i] * a.h2[i]);
    grad[o.b2 + i] += gz;
    for (std::size_t j = 0; j < H1; ++j) {
      grad[o.w2 + i * H1 + j] += gz * a.h1[j];
      g_h1[j] += gz * params_[o.w2 + i * H1 + j];
    }
  }
  for (std::size_t i = 0; i < H1; ++i) {
    const double gz = g_h1[i] * (1.0 - a.h1[i] * a.h1[i]);
    grad[o.b1 + i] += gz;
    for (std::size_t j = 0; j < in; ++j) grad[o.w1 + i * in + j] += gz * a.input[j];
  }
}

}  // namespace sparseflow
