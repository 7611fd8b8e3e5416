#pragma once

#include <functional>
#include <span>
#include <vector>

#include "sparseflow/core/tensor.hpp"

namespace sparseflow {

// Softmax over the last axis with max subtraction. Entries may be -inf;
// a row that is entirely -inf raises AllMaskedRow.
Tensor softmax_lastdim(const Tensor& x);

// In-place softmax of one row; returns the log-sum-exp of the row.
double softmax_row(std::span<double> row);

// (m x k) * (k x n) for rank-2 tensors.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose2d(const Tensor& a);

double dot(std::span<const double> a, std::span<const double> b);

using ScalarFunction = std::function<double(const std::vector<double>&)>;

// Central differences: g_i = (f(p + h e_i) - f(p - h e_i)) / (2h).
std::vector<double> finite_difference_gradient(const ScalarFunction& f, const std::vector<double>& p,
                                               double h = 1e-5);
Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, const Tensor& p,
                                  double h = 1e-5);

// max_i |a_i - b_i| / max(max_i |b_i|, floor).
double relative_error(std::span<const double> a, std::span<const double> b, double floor = 1e-12);

}  // namespace sparseflow
