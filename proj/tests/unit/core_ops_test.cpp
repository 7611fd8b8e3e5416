#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "sparseflow/core/error.hpp"
#include "sparseflow/core/ops.hpp"
#include "sparseflow/core/rng.hpp"

using namespace sparseflow;

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

TEST(Softmax, WorkedExamples) {
  auto a = softmax_lastdim(Tensor::vector({0.0, 0.0}));
  EXPECT_DOUBLE_EQ(a[0], 0.5);
  EXPECT_DOUBLE_EQ(a[1], 0.5);

  auto b = softmax_lastdim(Tensor::vector({std::log(2.0), 0.0}));
  EXPECT_NEAR(b[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(b[1], 1.0 / 3.0, 1e-15);

  auto c = softmax_lastdim(Tensor::vector({5.0, -kInf}));
  EXPECT_EQ(c[0], 1.0);
  EXPECT_EQ(c[1], 0.0);
}

TEST(Softmax, AllMaskedRowIsAnError) {
  Tensor x({2, 2}, std::vector<double>{0.0, 1.0, -kInf, -kInf});
  try {
    softmax_lastdim(x);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::AllMaskedRow);
  }
}

TEST(Softmax, RowsSumToOneForBoundedInputs) {
  SeededRng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(40);
    Tensor x = uniform_sample(rng, {3, n}, -50.0, 50.0);
    auto y = softmax_lastdim(x);
    for (std::size_t r = 0; r < 3; ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        ASSERT_GE(y[r * n + j], 0.0);
        s += y[r * n + j];
      }
      ASSERT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(FiniteDifference, Square) {
  auto g = finite_difference_gradient([](const std::vector<double>& p) { return p[0] * p[0]; }, {3.0});
  EXPECT_NEAR(g[0], 6.0, 1e-8);
}

TEST(FiniteDifference, ConstantAndLinear) {
  auto zero = finite_difference_gradient([](const std::vector<double>&) { return 4.0; }, {1.0, 2.0, 3.0});
  for (double v : zero) EXPECT_EQ(v, 0.0);
  auto ones = finite_difference_gradient(
      [](const std::vector<double>& p) { return p[0] + p[1] + p[2]; }, {0.1, -2.0, 7.0});
  for (double v : ones) EXPECT_NEAR(v, 1.0, 1e-9);
}

TEST(FiniteDifference, NonFiniteEvaluation) {
  try {
    finite_difference_gradient([](const std::vector<double>& p) { return std::log(p[0]); }, {0.0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NonFiniteEvaluation);
  }
}

TEST(Matmul, SmallProduct) {
  Tensor a({2, 2}, std::vector<double>{1, 2, 3, 4});
  Tensor b({2, 1}, std::vector<double>{5, 6});
  auto c = matmul(a, b);
  EXPECT_EQ(c.values(), (std::vector<double>{17, 39}));
  EXPECT_EQ(transpose2d(a).values(), (std::vector<double>{1, 3, 2, 4}));
  EXPECT_THROW(matmul(b, b), Error);
}
