#include "sparseflow/bsa/layout.hpp"

#include "sparseflow/core/error.hpp"

namespace sparseflow::bsa {

namespace {

void check_divisible(std::size_t extent, std::size_t block, const char* axis) {
  SF_CHECK(block >= 1, ErrorKind::IndivisibleGrid, std::string("block extent along ") + axis + " must be >= 1");
  SF_CHECK(extent % block == 0, ErrorKind::IndivisibleGrid,
           std::string("grid extent ") + axis + "=" + std::to_string(extent) + " is not divisible by block extent " +
               std::to_string(block) + " (padding is out of scope; choose a divisible grid)");
}

// Permutes the token axis: out[pos] = x[source(pos)].
template <typename SourceFn>
Tensor permute_tokens(const Tensor& x, std::size_t tokens, SourceFn source) {
  SF_CHECK(x.rank() >= 2, ErrorKind::DimensionMismatch, "expected (..., tokens, features)");
  const std::size_t s = x.extent(x.rank() - 2);
  const std::size_t d = x.shape().back();
  SF_CHECK(s == tokens, ErrorKind::DimensionMismatch,
           "token axis has " + std::to_string(s) + " entries, layout expects " + std::to_string(tokens));
  Tensor out(x.shape());
  const std::size_t outer = x.size() / (s * d);
  for (std::size_t o = 0; o < outer; ++o) {
    const std::size_t base = o * s * d;
    for (std::size_t pos = 0; pos < s; ++pos) {
      const std::size_t src = source(pos);
      for (std::size_t k = 0; k < d; ++k) out[base + pos * d + k] = x[base + src * d + k];
    }
  }
  return out;
}

}  // namespace

BlockLayout::BlockLayout(const GridSpec& grid, const BlockSpec& blocks) : grid_(grid), blocks_(blocks) {
  SF_CHECK(grid.T >= 1 && grid.H >= 1 && grid.W >= 1, ErrorKind::InvalidShape, "grid extents must be positive");
  check_divisible(grid.T, blocks.t, "T");
  check_divisible(grid.H, blocks.h, "H");
  check_divisible(grid.W, blocks.w, "W");
  nt_ = grid.T / blocks.t;
  nh_ = grid.H / blocks.h;
  nw_ = grid.W / blocks.w;

  const std::size_t s = grid.tokens();
  to_natural_.resize(s);
  to_blocked_.resize(s);
  for (std::size_t tt = 0; tt < grid.T; ++tt) {
    for (std::size_t hh = 0; hh < grid.H; ++hh) {
      for (std::size_t ww = 0; ww < grid.W; ++ww) {
        const std::size_t natural = (tt * grid.H + hh) * grid.W + ww;
        const std::size_t block = ((tt / blocks.t) * nh_ + hh / blocks.h) * nw_ + ww / blocks.w;
        const std::size_t intra = ((tt % blocks.t) * blocks.h + hh % blocks.h) * blocks.w + ww % blocks.w;
        const std::size_t pos = block * blocks.volume() + intra;
        to_natural_[pos] = natural;
        to_blocked_[natural] = pos;
      }
    }
  }
}

std::pair<Tensor, BlockLayout> rearrange_to_blocks(const Tensor& x, const GridSpec& grid, const BlockSpec& blocks) {
  BlockLayout layout(grid, blocks);
  Tensor out = apply_layout(x, layout);
  return {std::move(out), std::move(layout)};
}

Tensor apply_layout(const Tensor& x, const BlockLayout& layout) {
  return permute_tokens(x, layout.grid().tokens(), [&](std::size_t pos) { return layout.natural_index(pos); });
}

Tensor inverse_rearrange(const Tensor& x_blocked, const BlockLayout& layout) {
  return permute_tokens(x_blocked, layout.grid().tokens(),
                        [&](std::size_t token) { return layout.blocked_position(token); });
}

Tensor pool_blocks(const Tensor& x_blocked, std::size_t n) {
  SF_CHECK(x_blocked.rank() >= 2, ErrorKind::DimensionMismatch, "expected (..., tokens, features)");
  SF_CHECK(n >= 1, ErrorKind::IndivisibleLength, "block size must be >= 1");
  const std::size_t s = x_blocked.extent(x_blocked.rank() - 2);
  const std::size_t d = x_blocked.shape().back();
  SF_CHECK(s % n == 0, ErrorKind::IndivisibleLength,
           std::to_string(s) + " tokens are not divisible by block size " + std::to_string(n));
  Shape shape = x_blocked.shape();
  shape[shape.size() - 2] = s / n;
  Tensor out(shape);
  const std::size_t outer = x_blocked.size() / (s * d);
  const double count = static_cast<double>(n);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t b = 0; b < s / n; ++b) {
      for (std::size_t k = 0; k < d; ++k) {
        double sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) sum += x_blocked[(o * s + b * n + j) * d + k];
        out[(o * (s / n) + b) * d + k] = sum / count;
      }
    }
  }
  return out;
}

}  // namespace sparseflow::bsa
