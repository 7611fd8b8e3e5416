#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "sparseflow/core/tensor.hpp"

namespace sparseflow::bsa {

// Token grid of a video latent, plus the attention dimensions.
struct GridSpec {
  std::size_t T = 1, H = 1, W = 1;
  std::size_t head_dim = 8;
  std::size_t heads = 1;
  std::size_t batch = 1;

  std::size_t tokens() const { return T * H * W; }
};

// 3D block extents. Blocks must tile the grid exactly.
struct BlockSpec {
  std::size_t t = 4, h = 4, w = 4;

  std::size_t volume() const { return t * h * w; }
};

// Token permutation between the natural [T, H, W] order and the block order
// [N_T, N_H, N_W] x [t, h, w].
class BlockLayout {
 public:
  BlockLayout(const GridSpec& grid, const BlockSpec& blocks);

  const GridSpec& grid() const noexcept { return grid_; }
  const BlockSpec& blocks() const noexcept { return blocks_; }
  std::size_t block_count() const noexcept { return nt_ * nh_ * nw_; }
  std::size_t block_tokens() const noexcept { return blocks_.volume(); }

  // Natural token index stored at block-order position `pos`.
  std::size_t natural_index(std::size_t pos) const { return to_natural_[pos]; }
  // Block-order position of natural token index `token`.
  std::size_t blocked_position(std::size_t token) const { return to_blocked_[token]; }

  const std::vector<std::size_t>& natural_order() const noexcept { return to_natural_; }

 private:
  GridSpec grid_;
  BlockSpec blocks_;
  std::size_t nt_, nh_, nw_;
  std::vector<std::size_t> to_natural_;
  std::vector<std::size_t> to_blocked_;
};

// Applies the layout along the token axis (rank - 2) of x, shape (..., s, d).
std::pair<Tensor, BlockLayout> rearrange_to_blocks(const Tensor& x, const GridSpec& grid, const BlockSpec& blocks);
Tensor apply_layout(const Tensor& x, const BlockLayout& layout);
Tensor inverse_rearrange(const Tensor& x_blocked, const BlockLayout& layout);

// Mean over each run of n consecutive tokens: (..., s, d) -> (..., s / n, d).
Tensor pool_blocks(const Tensor& x_blocked, std::size_t n);

}  // namespace sparseflow::bsa
