#include "sparseflow/bsa/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "sparseflow/core/error.hpp"
#include "sparseflow/core/ops.hpp"

namespace sparseflow::bsa {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_mask(const AttentionDims& dims, const SelectionMask& mask, BlockSizes sizes) {
  SF_CHECK(sizes.query >= 1 && sizes.key >= 1, ErrorKind::InvalidShape, "block sizes must be positive");
  SF_CHECK(dims.sq % sizes.query == 0, ErrorKind::IndivisibleLength, "query tokens not divisible by query block size");
  SF_CHECK(dims.sk % sizes.key == 0, ErrorKind::IndivisibleLength, "key tokens not divisible by key block size");
  SF_CHECK(mask.batch() == dims.batch && mask.heads() == dims.heads && mask.query_blocks() == dims.sq / sizes.query &&
               mask.key_blocks() == dims.sk / sizes.key,
           ErrorKind::DimensionMismatch, "selection mask does not match the block counts of Q/K");
}

}  // namespace

AttentionDims attention_dims(const Tensor& q, const Tensor& k, const Tensor& v) {
  SF_CHECK(q.rank() == 4 && k.rank() == 4 && v.rank() == 4, ErrorKind::DimensionMismatch,
           "attention inputs must be (b, n_h, s, d)");
  AttentionDims d{q.extent(0), q.extent(1), q.extent(2), k.extent(2), q.extent(3), v.extent(3)};
  SF_CHECK(k.extent(0) == d.batch && v.extent(0) == d.batch && k.extent(1) == d.heads && v.extent(1) == d.heads,
           ErrorKind::DimensionMismatch, "batch/head extents of Q, K, V differ");
  SF_CHECK(k.extent(3) == d.d, ErrorKind::DimensionMismatch, "Q and K head dims differ");
  SF_CHECK(v.extent(2) == d.sk, ErrorKind::DimensionMismatch, "K and V sequence lengths differ");
  return d;
}

OnlineSoftmaxBlock::OnlineSoftmaxBlock(std::size_t rows, std::size_t value_dim)
    : rows_(rows), value_dim_(value_dim), m_(rows, kNegInf), l_(rows, 0.0), acc_(rows * value_dim, 0.0) {}

void OnlineSoftmaxBlock::visit(const double* q, const double* k, const double* v, std::size_t key_rows,
                               std::size_t head_dim, double scale) {
  scores_.resize(key_rows);
  for (std::size_t i = 0; i < rows_; ++i) {
    const double* qi = q + i * head_dim;
    double tile_max = kNegInf;
    for (std::size_t j = 0; j < key_rows; ++j) {
      const double* kj = k + j * head_dim;
      double s = 0.0;
      for (std::size_t c = 0; c < head_dim; ++c) s += qi[c] * kj[c];
      scores_[j] = s * scale;
      tile_max = std::max(tile_max, scores_[j]);
    }
    const double m_new = std::max(m_[i], tile_max);
    const double correction = m_[i] == kNegInf ? 0.0 : std::exp(m_[i] - m_new);
    double* acc = &acc_[i * value_dim_];
    l_[i] *= correction;
    for (std::size_t c = 0; c < value_dim_; ++c) acc[c] *= correction;
    for (std::size_t j = 0; j < key_rows; ++j) {
      const double p = std::exp(scores_[j] - m_new);
      l_[i] += p;
      const double* vj = v + j * value_dim_;
      for (std::size_t c = 0; c < value_dim_; ++c) acc[c] += p * vj[c];
    }
    m_[i] = m_new;
  }
}

void OnlineSoftmaxBlock::finalize(double* out, double* row_max, double* row_lse) const {
  for (std::size_t i = 0; i < rows_; ++i) {
    SF_CHECK(l_[i] > 0.0, ErrorKind::EmptySelection, "query row finalized without any key");
    for (std::size_t c = 0; c < value_dim_; ++c) out[i * value_dim_ + c] = acc_[i * value_dim_ + c] / l_[i];
    row_max[i] = m_[i];
    row_lse[i] = m_[i] + std::log(l_[i]);
  }
}

namespace {

// Shared dense path. `allowed(b, h, i, j)` decides which scores survive.
template <typename AllowFn>
Tensor dense_impl(const Tensor& q, const Tensor& k, const Tensor& v, AllowFn allowed) {
  const auto dims = attention_dims(q, k, v);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dims.d));
  Tensor out({dims.batch, dims.heads, dims.sq, dims.dv});
  std::vector<double> row(dims.sk);
  for (std::size_t b = 0; b < dims.batch; ++b) {
    for (std::size_t h = 0; h < dims.heads; ++h) {
      const std::size_t bh = b * dims.heads + h;
      for (std::size_t i = 0; i < dims.sq; ++i) {
        const double* qi = &q[(bh * dims.sq + i) * dims.d];
        for (std::size_t j = 0; j < dims.sk; ++j) {
          if (!allowed(b, h, i, j)) {
            row[j] = kNegInf;
            continue;
          }
          const double* kj = &k[(bh * dims.sk + j) * dims.d];
          double s = 0.0;
          for (std::size_t c = 0; c < dims.d; ++c) s += qi[c] * kj[c];
          row[j] = s * scale;
        }
        softmax_row(row);
        double* o = &out[(bh * dims.sq + i) * dims.dv];
        for (std::size_t j = 0; j < dims.sk; ++j) {
          if (row[j] == 0.0) continue;
          const double* vj = &v[(bh * dims.sk + j) * dims.dv];
          for (std::size_t c = 0; c < dims.dv; ++c) o[c] += row[j] * vj[c];
        }
      }
    }
  }
  return out;
}

}  // namespace

Tensor dense_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  return dense_impl(q, k, v, [](std::size_t, std::size_t, std::size_t, std::size_t) { return true; });
}

Tensor dense_attention_masked(const Tensor& q, const Tensor& k, const Tensor& v, const SelectionMask& mask,
                              BlockSizes sizes) {
  check_mask(attention_dims(q, k, v), mask, sizes);
  return dense_impl(q, k, v, [&](std::size_t b, std::size_t h, std::size_t i, std::size_t j) {
    return mask.selects(b, h, i / sizes.query, j / sizes.key);
  });
}

AttentionGrads dense_attention_backward(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& d_out,
                                        const SelectionMask* mask, BlockSizes sizes) {
  const auto dims = attention_dims(q, k, v);
  if (mask) check_mask(dims, *mask, sizes);
  SF_CHECK(d_out.shape() == Shape({dims.batch, dims.heads, dims.sq, dims.dv}), ErrorKind::DimensionMismatch,
           "dO shape does not match the attention output");
  const double scale = 1.0 / std::sqrt(static_cast<double>(dims.d));
  AttentionGrads g{Tensor(q.shape()), Tensor(k.shape()), Tensor(v.shape())};
  std::vector<double> p(dims.sk), dp(dims.sk);
  for (std::size_t b = 0; b < dims.batch; ++b) {
    for (std::size_t h = 0; h < dims.heads; ++h) {
      const std::size_t bh = b * dims.heads + h;
      for (std::size_t i = 0; i < dims.sq; ++i) {
        const double* qi = &q[(bh * dims.sq + i) * dims.d];
        const double* doi = &d_out[(bh * dims.sq + i) * dims.dv];
        for (std::size_t j = 0; j < dims.sk; ++j) {
          if (mask && !mask->selects(b, h, i / sizes.query, j / sizes.key)) {
            p[j] = kNegInf;
            continue;
          }
          const double* kj = &k[(bh * dims.sk + j) * dims.d];
          double s = 0.0;
          for (std::size_t c = 0; c < dims.d; ++c) s += qi[c] * kj[c];
          p[j] = s * scale;
        }
        softmax_row(p);
        // dP_j = dO_i . V_j ; dS_j = P_j (dP_j - sum_l P_l dP_l)
        double weighted = 0.0;
        for (std::size_t j = 0; j < dims.sk; ++j) {
          const double* vj = &v[(bh * dims.sk + j) * dims.dv];
          double s = 0.0;
          for (std::size_t c = 0; c < dims.dv; ++c) s += doi[c] * vj[c];
          dp[j] = s;
          weighted += p[j] * s;
        }
        double* dqi = &g.dq[(bh * dims.sq + i) * dims.d];
        for (std::size_t j = 0; j < dims.sk; ++j) {
          if (p[j] == 0.0) continue;
          double* dvj = &g.dv[(bh * dims.sk + j) * dims.dv];
          for (std::size_t c = 0; c < dims.dv; ++c) dvj[c] += p[j] * doi[c];
          const double ds = p[j] * (dp[j] - weighted) * scale;
          const double* kj = &k[(bh * dims.sk + j) * dims.d];
          double* dkj = &g.dk[(bh * dims.sk + j) * dims.d];
          for (std::size_t c = 0; c < dims.d; ++c) {
            dqi[c] += ds * kj[c];
            dkj[c] += ds * qi[c];
          }
        }
      }
    }
  }
  return g;
}

SparseAttentionResult sparse_attention_forward(const Tensor& q, const Tensor& k, const Tensor& v,
                                               const SelectionMask& mask, BlockSizes sizes) {
  const auto dims = attention_dims(q, k, v);
  check_mask(dims, mask, sizes);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dims.d));
  const std::size_t nq = sizes.query, nk = sizes.key;

  SparseAttentionResult res{Tensor({dims.batch, dims.heads, dims.sq, dims.dv}),
                            AttentionStats{dims.batch, dims.heads, dims.sq,
                                           std::vector<double>(dims.batch * dims.heads * dims.sq),
                                           std::vector<double>(dims.batch * dims.heads * dims.sq)},
                            {}};
  for (std::size_t b = 0; b < dims.batch; ++b) {
    for (std::size_t h = 0; h < dims.heads; ++h) {
      const std::size_t bh = b * dims.heads + h;
      for (std::size_t qb = 0; qb < mask.query_blocks(); ++qb) {
        const auto& selected = mask.row(b, h, qb);
        SF_CHECK(!selected.empty(), ErrorKind::EmptySelection,
                 "query block " + std::to_string(qb) + " selects no key blocks");
        const std::size_t row0 = bh * dims.sq + qb * nq;
        OnlineSoftmaxBlock block(nq, dims.dv);
        for (auto kb : selected) {
          const std::size_t key0 = bh * dims.sk + kb * nk;
          block.visit(&q[row0 * dims.d], &k[key0 * dims.d], &v[key0 * dims.dv], nk, dims.d, scale);
          res.counters.block_pairs += 1;
          res.counters.madds += nq * nk * (dims.d + dims.dv);
        }
        block.finalize(&res.out[row0 * dims.dv], &res.stats.row_max[row0], &res.stats.row_lse[row0]);
      }
    }
  }
  return res;
}

AttentionGrads sparse_attention_backward(const Tensor& q, const Tensor& k, const Tensor& v, const SelectionMask& mask,
                                         BlockSizes sizes, const Tensor& out, const AttentionStats& stats,
                                         const Tensor& d_out) {
  const auto dims = attention_dims(q, k, v);
  check_mask(dims, mask, sizes);
  const Shape out_shape{dims.batch, dims.heads, dims.sq, dims.dv};
  SF_CHECK(out.shape() == out_shape && d_out.shape() == out_shape, ErrorKind::DimensionMismatch,
           "O / dO shapes do not match the attention output");
  SF_CHECK(stats.batch == dims.batch && stats.heads == dims.heads && stats.rows == dims.sq &&
               stats.row_lse.size() == dims.batch * dims.heads * dims.sq,
           ErrorKind::StatsMismatch, "attention stats come from a different forward call");

  const double scale = 1.0 / std::sqrt(static_cast<double>(dims.d));
  const std::size_t nq = sizes.query, nk = sizes.key;
  AttentionGrads g{Tensor(q.shape()), Tensor(k.shape()), Tensor(v.shape())};
  std::vector<double> delta(nq), p(nq * nk), ds(nq * nk);

  for (std::size_t b = 0; b < dims.batch; ++b) {
    for (std::size_t h = 0; h < dims.heads; ++h) {
      const std::size_t bh = b * dims.heads + h;
      for (std::size_t qb = 0; qb < mask.query_blocks(); ++qb) {
        const auto& selected = mask.row(b, h, qb);
        SF_CHECK(!selected.empty(), ErrorKind::EmptySelection,
                 "query block " + std::to_string(qb) + " selects no key blocks");
        const std::size_t row0 = bh * dims.sq + qb * nq;
        for (std::size_t i = 0; i < nq; ++i) {
          delta[i] = dot(std::span<const double>(&d_out[(row0 + i) * dims.dv], dims.dv),
                         std::span<const double>(&out[(row0 + i) * dims.dv], dims.dv));
        }
        for (auto kb : selected) {
          const std::size_t key0 = bh * dims.sk + kb * nk;
          for (std::size_t i = 0; i < nq; ++i) {
            const double* qi = &q[(row0 + i) * dims.d];
            const double* doi = &d_out[(row0 + i) * dims.dv];
            const double lse = stats.row_lse[row0 + i];
            for (std::size_t j = 0; j < nk; ++j) {
              const double* kj = &k[(key0 + j) * dims.d];
              const double* vj = &v[(key0 + j) * dims.dv];
              double s = 0.0;
              for (std::size_t c = 0; c < dims.d; ++c) s += qi[c] * kj[c];
              const double pij = std::exp(s * scale - lse);
              double dpij = 0.0;
              for (std::size_t c = 0; c < dims.dv; ++c) dpij += doi[c] * vj[c];
              p[i * nk + j] = pij;
              ds[i * nk + j] = pij * (dpij - delta[i]) * scale;
            }
          }
          for (std::size_t i = 0; i < nq; ++i) {
            const double* qi = &q[(row0 + i) * dims.d];
            const double* doi = &d_out[(row0 + i) * dims.dv];
            double* dqi = &g.dq[(row0 + i) * dims.d];
            for (std::size_t j = 0; j < nk; ++j) {
              const double pij = p[i * nk + j], dsij = ds[i * nk + j];
              double* dvj = &g.dv[(key0 + j) * dims.dv];
              for (std::size_t c = 0; c < dims.dv; ++c) dvj[c] += pij * doi[c];
              const double* kj = &k[(key0 + j) * dims.d];
              double* dkj = &g.dk[(key0 + j) * dims.d];
              for (std::size_t c = 0; c < dims.d; ++c) {
                dqi[c] += dsij * kj[c];
                dkj[c] += dsij * qi[c];
              }
            }
          }
        }
      }
    }
  }
  return g;
}

}  // namespace sparseflow::bsa
