#pragma once

#include <cstdint>

#include "sparseflow/core/tensor.hpp"

namespace sparseflow {

// Counter-based SplitMix64 stream with Box-Muller normals.
//
// Output word n of a stream is mix(seed + (n + 1) * golden), so a stream is
// fully determined by its seed. Child streams are derived with `fork`, which
// hashes (seed, stream id) into a fresh seed and leaves the parent untouched.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64();
  // Uniform on [0, 1) with 53 bits of resolution.
  double uniform();
  double uniform(double lo, double hi);
  double normal();
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  SeededRng fork(std::uint64_t stream) const;

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;
};

std::uint64_t splitmix64_mix(std::uint64_t z);

Tensor gaussian_sample(SeededRng& rng, const Shape& shape);
Tensor uniform_sample(SeededRng& rng, const Shape& shape, double lo, double hi);

}  // namespace sparseflow
