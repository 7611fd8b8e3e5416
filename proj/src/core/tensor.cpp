#include "sparseflow/core/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "sparseflow/core/error.hpp"

namespace sparseflow {

std::size_t shape_volume(const Shape& shape) {
  std::size_t volume = 1;
  for (auto e : shape) volume *= e;
  return volume;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void validate_shape(const Shape& shape) {
  SF_CHECK(!shape.empty(), ErrorKind::InvalidShape, "tensor rank must be >= 1");
  for (auto e : shape) {
    SF_CHECK(e >= 1, ErrorKind::InvalidShape, "all extents must be >= 1, got " + shape_to_string(shape));
  }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  validate_shape(shape_);
  data_.assign(shape_volume(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  validate_shape(shape_);
  SF_CHECK(shape_volume(shape_) == data_.size(), ErrorKind::InvalidShape,
           "shape " + shape_to_string(shape_) + " does not match " + std::to_string(data_.size()) + " values");
}

Tensor Tensor::vector(std::vector<double> values) {
  Shape shape{values.size()};
  return Tensor(std::move(shape), std::move(values));
}

std::size_t Tensor::extent(std::size_t axis) const {
  SF_CHECK(axis < shape_.size(), ErrorKind::InvalidShape, "axis out of range");
  return shape_[axis];
}

std::size_t Tensor::flat_index(std::initializer_list<std::size_t> index) const {
  SF_CHECK(index.size() == shape_.size(), ErrorKind::DimensionMismatch, "index rank mismatch");
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    SF_CHECK(i < shape_[axis], ErrorKind::DimensionMismatch, "index out of range");
    flat = flat * shape_[axis] + i;
    ++axis;
  }
  return flat;
}

double& Tensor::at(std::initializer_list<std::size_t> index) { return data_[flat_index(index)]; }
double Tensor::at(std::initializer_list<std::size_t> index) const { return data_[flat_index(index)]; }

Tensor Tensor::reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

double max_abs_diff(const Tensor& a, const Tensor& b) {
  SF_CHECK(a.shape() == b.shape(), ErrorKind::DimensionMismatch,
           "shapes " + shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
  return max_abs_diff(a.data(), b.data());
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  SF_CHECK(a.size() == b.size(), ErrorKind::DimensionMismatch,
           "lengths " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = std::abs(a[i] - b[i]);
    if (std::isnan(d)) return std::numeric_limits<double>::infinity();
    m = std::max(m, d);
  }
  return m;
}

double max_abs(const Tensor& a) {
  double m = 0.0;
  for (double v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

}  // namespace sparseflow
