#include "sparseflow/core/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "sparseflow/core/error.hpp"

namespace sparseflow {

double softmax_row(std::span<double> row) {
  SF_CHECK(!row.empty(), ErrorKind::InvalidShape, "softmax of an empty row");
  double m = -std::numeric_limits<double>::infinity();
  for (double v : row) m = std::max(m, v);
  SF_CHECK(m > -std::numeric_limits<double>::infinity(), ErrorKind::AllMaskedRow,
           "softmax row is entirely -inf");
  double sum = 0.0;
  for (double& v : row) {
    v = std::exp(v - m);
    sum += v;
  }
  for (double& v : row) v /= sum;
  return m + std::log(sum);
}

Tensor softmax_lastdim(const Tensor& x) {
  Tensor out = x;
  const std::size_t n = x.shape().back();
  auto data = out.data();
  for (std::size_t off = 0; off < data.size(); off += n) softmax_row(data.subspan(off, n));
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  SF_CHECK(a.rank() == 2 && b.rank() == 2, ErrorKind::DimensionMismatch, "matmul expects rank-2 tensors");
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  SF_CHECK(b.extent(0) == k, ErrorKind::DimensionMismatch,
           "matmul inner extents " + shape_to_string(a.shape()) + " x " + shape_to_string(b.shape()));
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aip * b[p * n + j];
    }
  }
  return out;
}

Tensor transpose2d(const Tensor& a) {
  SF_CHECK(a.rank() == 2, ErrorKind::DimensionMismatch, "transpose2d expects rank 2");
  const std::size_t m = a.extent(0), n = a.extent(1);
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  SF_CHECK(a.size() == b.size(), ErrorKind::DimensionMismatch, "dot of unequal lengths");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

std::vector<double> finite_difference_gradient(const ScalarFunction& f, const std::vector<double>& p, double h) {
  SF_CHECK(h > 0.0, ErrorKind::InvalidConfig, "finite-difference step must be positive");
  std::vector<double> grad(p.size());
  std::vector<double> probe = p;
  for (std::size_t i = 0; i < p.size(); ++i) {
    probe[i] = p[i] + h;
    const double fp = f(probe);
    probe[i] = p[i] - h;
    const double fm = f(probe);
    probe[i] = p[i];
    SF_CHECK(std::isfinite(fp) && std::isfinite(fm), ErrorKind::NonFiniteEvaluation,
             "f is not finite around component " + std::to_string(i));
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, const Tensor& p, double h) {
  const Shape shape = p.shape();
  auto g = finite_difference_gradient(
      [&](const std::vector<double>& v) { return f(Tensor(shape, v)); }, p.values(), h);
  return Tensor(shape, std::move(g));
}

double relative_error(std::span<const double> a, std::span<const double> b, double floor) {
  SF_CHECK(a.size() == b.size(), ErrorKind::DimensionMismatch, "relative_error of unequal lengths");
  double num = 0.0, den = floor;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = std::abs(a[i] - b[i]);
    if (std::isnan(d)) return std::numeric_limits<double>::infinity();
    num = std::max(num, d);
    den = std::max(den, std::abs(b[i]));
  }
  return num / den;
}

}  // namespace sparseflow
