#pragma once

#include <cstddef>
#include <cstdint>
#include <variant>
#include <vector>

#include "sparseflow/core/tensor.hpp"

namespace sparseflow::bsa {

struct TopR {
  std::size_t r;
  bool operator==(const TopR&) const = default;
};
struct CdfP {
  double p;
  bool operator==(const CdfP&) const = default;
};
using SelectionMode = std::variant<TopR, CdfP>;

// Block-level attention pattern: for every (batch, head, query block) the
// ascending list of selected key blocks. Never expanded to element level.
class SelectionMask {
 public:
  using Row = std::vector<std::uint32_t>;

  SelectionMask(std::size_t batch, std::size_t heads, std::size_t query_blocks, std::size_t key_blocks,
                SelectionMode mode, std::vector<Row> rows);

  // Every key block selected for every query block.
  static SelectionMask full(std::size_t batch, std::size_t heads, std::size_t query_blocks, std::size_t key_blocks);

  std::size_t batch() const noexcept { return batch_; }
  std::size_t heads() const noexcept { return heads_; }
  std::size_t query_blocks() const noexcept { return query_blocks_; }
  std::size_t key_blocks() const noexcept { return key_blocks_; }
  const SelectionMode& mode() const noexcept { return mode_; }

  const Row& row(std::size_t b, std::size_t h, std::size_t qb) const;
  const std::vector<Row>& rows() const noexcept { return rows_; }
  bool selects(std::size_t b, std::size_t h, std::size_t qb, std::size_t kb) const;
  std::size_t total_selected() const;

  bool operator==(const SelectionMask&) const = default;

 private:
  std::size_t batch_, heads_, query_blocks_, key_blocks_;
  SelectionMode mode_;
  std::vector<Row> rows_;
};

// S_pool = Q_pool K_pool^T / sqrt(d); inputs (b, n_h, N, d), output (b, n_h, N_q, N_k).
Tensor pooled_scores(const Tensor& q_pool, const Tensor& k_pool, std::size_t head_dim);

// Key-block indices of one score row ordered by descending score; ties go to
// the lower index.
std::vector<std::uint32_t> ranked_key_blocks(const double* scores, std::size_t n);

SelectionMask select_topr(const Tensor& s_pool, std::size_t r);
SelectionMask select_cdf(const Tensor& s_pool, double p);

// Softmax mass of the selected blocks of one score row.
double selected_mass(const double* scores, std::size_t n, const SelectionMask::Row& selected);

}  // namespace sparseflow::bsa
