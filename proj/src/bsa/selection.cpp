#include "sparseflow/bsa/selection.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sparseflow/core/error.hpp"
#include "sparseflow/core/ops.hpp"

namespace sparseflow::bsa {

SelectionMask::SelectionMask(std::size_t batch, std::size_t heads, std::size_t query_blocks,
                             std::size_t key_blocks, SelectionMode mode, std::vector<Row> rows)
    : batch_(batch),
      heads_(heads),
      query_blocks_(query_blocks),
      key_blocks_(key_blocks),
      mode_(mode),
      rows_(std::move(rows)) {
  SF_CHECK(rows_.size() == batch * heads * query_blocks, ErrorKind::DimensionMismatch,
           "mask has " + std::to_string(rows_.size()) + " rows, expected " +
               std::to_string(batch * heads * query_blocks));
  for (const auto& row : rows_) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      SF_CHECK(row[i] < key_blocks, ErrorKind::RankOutOfRange, "selected key block out of range");
      SF_CHECK(i == 0 || row[i - 1] < row[i], ErrorKind::InvalidShape,
               "selected key blocks must be unique and ascending");
    }
  }
  if (const auto* top = std::get_if<TopR>(&mode_)) {
    for (const auto& row : rows_) {
      SF_CHECK(row.size() == top->r, ErrorKind::RankOutOfRange, "top-r row does not hold exactly r blocks");
    }
  }
}

SelectionMask SelectionMask::full(std::size_t batch, std::size_t heads, std::size_t query_blocks,
                                  std::size_t key_blocks) {
  Row all(key_blocks);
  std::iota(all.begin(), all.end(), 0u);
  return SelectionMask(batch, heads, query_blocks, key_blocks, TopR{key_blocks},
                       std::vector<Row>(batch * heads * query_blocks, all));
}

const SelectionMask::Row& SelectionMask::row(std::size_t b, std::size_t h, std::size_t qb) const {
  return rows_[(b * heads_ + h) * query_blocks_ + qb];
}

bool SelectionMask::selects(std::size_t b, std::size_t h, std::size_t qb, std::size_t kb) const {
  const auto& r = row(b, h, qb);
  return std::binary_search(r.begin(), r.end(), static_cast<std::uint32_t>(kb));
}

std::size_t SelectionMask::total_selected() const {
  std::size_t n = 0;
  for (const auto& r : rows_) n += r.size();
  return n;
}

Tensor pooled_scores(const Tensor& q_pool, const Tensor& k_pool, std::size_t head_dim) {
  SF_CHECK(q_pool.rank() == 4 && k_pool.rank() == 4, ErrorKind::DimensionMismatch,
           "pooled tensors must be (b, n_h, N, d)");
  SF_CHECK(q_pool.extent(0) == k_pool.extent(0) && q_pool.extent(1) == k_pool.extent(1), ErrorKind::DimensionMismatch,
           "batch/head extents differ");
  SF_CHECK(q_pool.extent(3) == head_dim && k_pool.extent(3) == head_dim, ErrorKind::DimensionMismatch,
           "pooled feature dimension does not match d=" + std::to_string(head_dim));
  const std::size_t B = q_pool.extent(0), Hh = q_pool.extent(1), nq = q_pool.extent(2), nk = k_pool.extent(2);
  const std::size_t d = head_dim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  Tensor s({B, Hh, nq, nk});
  for (std::size_t bh = 0; bh < B * Hh; ++bh) {
    for (std::size_t i = 0; i < nq; ++i) {
      const double* q = &q_pool[(bh * nq + i) * d];
      for (std::size_t j = 0; j < nk; ++j) {
        const double* k = &k_pool[(bh * nk + j) * d];
        double acc = 0.0;
        for (std::size_t c = 0; c < d; ++c) acc += q[c] * k[c];
        s[(bh * nq + i) * nk + j] = acc * scale;
      }
    }
  }
  return s;
}

std::vector<std::uint32_t> ranked_key_blocks(const double* scores, std::size_t n) {
  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0u);
  std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) { return scores[a] > scores[b]; });
  return order;
}

namespace {

template <typename PickFn>
SelectionMask select_rows(const Tensor& s_pool, SelectionMode mode, PickFn pick) {
  SF_CHECK(s_pool.rank() == 4, ErrorKind::DimensionMismatch, "pooled scores must be (b, n_h, N_q, N_k)");
  const std::size_t B = s_pool.extent(0), Hh = s_pool.extent(1), nq = s_pool.extent(2), nk = s_pool.extent(3);
  std::vector<SelectionMask::Row> rows;
  rows.reserve(B * Hh * nq);
  for (std::size_t r = 0; r < B * Hh * nq; ++r) {
    auto row = pick(&s_pool[r * nk], nk);
    std::sort(row.begin(), row.end());
    rows.push_back(std::move(row));
  }
  return SelectionMask(B, Hh, nq, nk, mode, std::move(rows));
}

}  // namespace

SelectionMask select_topr(const Tensor& s_pool, std::size_t r) {
  SF_CHECK(s_pool.rank() == 4, ErrorKind::DimensionMismatch, "pooled scores must be (b, n_h, N_q, N_k)");
  const std::size_t nk = s_pool.extent(3);
  SF_CHECK(r >= 1 && r <= nk, ErrorKind::RankOutOfRange,
           "r=" + std::to_string(r) + " must lie in [1, N_k=" + std::to_string(nk) + "]");
  return select_rows(s_pool, TopR{r}, [r](const double* scores, std::size_t n) {
    auto order = ranked_key_blocks(scores, n);
    order.resize(r);
    return order;
  });
}

SelectionMask select_cdf(const Tensor& s_pool, double p) {
  SF_CHECK(p > 0.0 && p <= 1.0, ErrorKind::ThresholdOutOfRange, "p must lie in (0, 1]");
  return select_rows(s_pool, CdfP{p}, [p](const double* scores, std::size_t n) {
    auto order = ranked_key_blocks(scores, n);
    // With p = 1 the minimal prefix is every block, since each has positive
    // mass; rounding in the running sum must not cut it short.
    if (p >= 1.0) return order;
    std::vector<double> probs(scores, scores + n);
    softmax_row(probs);
    double cumulative = 0.0;
    std::size_t taken = 0;
    while (taken < n) {
      cumulative += probs[order[taken]];
      ++taken;
      if (cumulative >= p) break;
    }
    order.resize(taken);
    return order;
  });
}

double selected_mass(const double* scores, std::size_t n, const SelectionMask::Row& selected) {
  std::vector<double> probs(scores, scores + n);
  softmax_row(probs);
  double mass = 0.0;
  for (auto kb : selected) mass += probs[kb];
  return mass;
}

}  // namespace sparseflow::bsa
