#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "sparseflow/bsa/selection.hpp"
#include "sparseflow/core/tensor.hpp"

namespace sparseflow::bsa {

// Tokens per query block and per key block. They may differ.
struct BlockSizes {
  std::size_t query = 64;
  std::size_t key = 64;
};

// Per query row: running max and log-sum-exp of the selected scores, saved by
// the forward pass for the backward pass. Indexed [(b * heads + h) * rows + i].
struct AttentionStats {
  std::size_t batch = 0, heads = 0, rows = 0;
  std::vector<double> row_max;
  std::vector<double> row_lse;
};

struct OpCounters {
  std::uint64_t block_pairs = 0;  // (query block, key block) tiles visited
  std::uint64_t madds = 0;        // multiply-adds in QK^T and PV

  OpCounters& operator+=(const OpCounters& o) {
    block_pairs += o.block_pairs;
    madds += o.madds;
    return *this;
  }
};

// Streaming softmax over the rows of one query block. Key tiles are folded in
// one at a time; the result equals softmax over the union of visited keys.
class OnlineSoftmaxBlock {
 public:
  OnlineSoftmaxBlock(std::size_t rows, std::size_t value_dim);

  // q: rows x d, k: key_rows x d, v: key_rows x value_dim, all contiguous.
  void visit(const double* q, const double* k, const double* v, std::size_t key_rows, std::size_t head_dim,
             double scale);
  void finalize(double* out, double* row_max, double* row_lse) const;

 private:
  std::size_t rows_, value_dim_;
  std::vector<double> m_, l_, acc_, scores_;
};

struct SparseAttentionResult {
  Tensor out;
  AttentionStats stats;
  OpCounters counters;
};

struct AttentionGrads {
  Tensor dq, dk, dv;
};

// O = softmax(Q K^T / sqrt(d)) V with the full score matrix materialized.
// Q, K: (b, n_h, s, d); V: (b, n_h, s_k, d_v).
Tensor dense_attention(const Tensor& q, const Tensor& k, const Tensor& v);

// Dense attention with -inf at every element outside the selected blocks.
Tensor dense_attention_masked(const Tensor& q, const Tensor& k, const Tensor& v, const SelectionMask& mask,
                              BlockSizes sizes);

// Gradients of sum(dO * O) for dense (mask == nullptr) or masked attention.
AttentionGrads dense_attention_backward(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& d_out,
                                        const SelectionMask* mask = nullptr, BlockSizes sizes = {});

// Block-sparse forward over block-rearranged Q, K, V. Selected key blocks are
// visited in ascending index order.
SparseAttentionResult sparse_attention_forward(const Tensor& q, const Tensor& k, const Tensor& v,
                                               const SelectionMask& mask, BlockSizes sizes);

AttentionGrads sparse_attention_backward(const Tensor& q, const Tensor& k, const Tensor& v, const SelectionMask& mask,
                                         BlockSizes sizes, const Tensor& out, const AttentionStats& stats,
                                         const Tensor& d_out);

// Checks Q/K/V ranks and extents; returns (b, heads, s_q, s_k, d, d_v).
struct AttentionDims {
  std::size_t batch, heads, sq, sk, d, dv;
};
AttentionDims attention_dims(const Tensor& q, const Tensor& k, const Tensor& v);

}  // namespace sparseflow::bsa
