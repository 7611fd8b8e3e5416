#include <gtest/gtest.h>

#include "sparseflow/core/rng.hpp"

using namespace sparseflow;

TEST(SeededRng, SameSeedSameStream) {
  SeededRng a(42), b(42);
  EXPECT_EQ(gaussian_sample(a, {4}), gaussian_sample(b, {4}));
  SeededRng c(43);
  SeededRng d(42);
  EXPECT_NE(gaussian_sample(c, {4}), gaussian_sample(d, {4}));
}

TEST(SeededRng, ShapeContract) {
  SeededRng rng(1);
  auto t = gaussian_sample(rng, {2, 3});
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.shape(), (Shape{2, 3}));
}

TEST(SeededRng, MomentsOfAMillionNormals) {
  SeededRng rng(2024);
  const std::size_t n = 1'000'000;
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = rng.normal();
    sum += x;
    sum_sq += x * x;
  }
  const double mean = sum / n;
  const double var = sum_sq / n - mean * mean;
  EXPECT_NEAR(mean, 0.0, 0.01);
  EXPECT_NEAR(var, 1.0, 0.02);
}

TEST(SeededRng, UniformAndBelowStayInRange) {
  SeededRng rng(5);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    ASSERT_LT(rng.below(6), 6u);
  }
}

TEST(SeededRng, ForkIsDeterministicAndLeavesParentAlone) {
  SeededRng parent(9);
  auto child1 = parent.fork(3);
  auto child2 = parent.fork(3);
  EXPECT_EQ(child1.next_u64(), child2.next_u64());
  EXPECT_NE(parent.fork(3).seed(), parent.fork(4).seed());
  SeededRng fresh(9);
  EXPECT_EQ(parent.next_u64(), fresh.next_u64());
}
