#pragma once

#include <cstddef>

#include "sparseflow/bsa/attention.hpp"
#include "sparseflow/bsa/selection.hpp"

namespace sparseflow::bsa {

struct FlopEstimate {
  double selected_fraction = 0.0;  // selected key blocks / (rows * N_k)
  double sparse_madds = 0.0;       // QK^T + PV multiply-adds over selected tiles
  double dense_madds = 0.0;        // same count for full attention
};

FlopEstimate flop_estimate(const SelectionMask& mask, BlockSizes sizes, std::size_t head_dim,
                           std::size_t value_dim = 0);

}  // namespace sparseflow::bsa
