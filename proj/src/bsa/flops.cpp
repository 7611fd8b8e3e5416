#include "sparseflow/bsa/flops.hpp"

namespace sparseflow::bsa {

FlopEstimate flop_estimate(const SelectionMask& mask, BlockSizes sizes, std::size_t head_dim, std::size_t value_dim) {
  if (value_dim == 0) value_dim = head_dim;
  const double rows = static_cast<double>(mask.rows().size());
  const double per_tile = static_cast<double>(sizes.query) * static_cast<double>(sizes.key) *
                          static_cast<double>(head_dim + value_dim);
  const double selected = static_cast<double>(mask.total_selected());
  const double all = rows * static_cast<double>(mask.key_blocks());
  return FlopEstimate{selected / all, selected * per_tile, all * per_tile};
}

}  // namespace sparseflow::bsa
