#pragma once

#include <cmath>
#include <vector>

#include "sparseflow/core/rng.hpp"
#include "sparseflow/core/tensor.hpp"

namespace sparseflow::testutil {

inline Tensor random_tensor(SeededRng& rng, const Shape& shape, double scale = 1.0) {
  Tensor t = gaussian_sample(rng, shape);
  for (double& v : t.data()) v *= scale;
  return t;
}

inline double max_rel_err(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0.0, den = 1e-12;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num = std::max(num, std::abs(a[i] - b[i]));
    den = std::max(den, std::abs(b[i]));
  }
  return num / den;
}

}  // namespace sparseflow::testutil
