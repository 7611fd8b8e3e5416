#include "sparseflow/bsa/block_causal.hpp"

#include <cmath>

#include "sparseflow/bsa/attention.hpp"
#include "sparseflow/core/error.hpp"

namespace sparseflow::bsa {

UnifiedSequence::UnifiedSequence(Tensor tokens_, std::size_t cond_tokens_, double t_noisy_)
    : tokens(std::move(tokens_)), cond_tokens(cond_tokens_), t_noisy(t_noisy_) {
  SF_CHECK(tokens.rank() == 2, ErrorKind::DimensionMismatch, "sequence tokens must be (N, model_dim)");
  SF_CHECK(cond_tokens < tokens.extent(0), ErrorKind::DimensionMismatch, "need at least one noisy token");
  SF_CHECK(t_noisy >= 0.0 && t_noisy <= 1.0, ErrorKind::TimeOutOfDomain, "t_noisy must lie in [0, 1]");
}

AttentionWeights AttentionWeights::random(std::size_t heads, std::size_t model_dim, std::size_t head_dim,
                                          SeededRng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(model_dim));
  return AttentionWeights{uniform_sample(rng, {heads, model_dim, head_dim}, -bound, bound),
                          uniform_sample(rng, {heads, model_dim, head_dim}, -bound, bound),
                          uniform_sample(rng, {heads, model_dim, head_dim}, -bound, bound),
                          gaussian_sample(rng, {model_dim})};
}

Projections project(const Tensor& tokens, std::size_t begin, std::size_t end, double t,
                    const AttentionWeights& w) {
  SF_CHECK(tokens.rank() == 2 && tokens.extent(1) == w.model_dim(), ErrorKind::DimensionMismatch,
           "token width does not match the projection weights");
  SF_CHECK(begin < end && end <= tokens.extent(0), ErrorKind::DimensionMismatch, "token range out of bounds");
  const std::size_t n = end - begin, D = w.model_dim(), Hh = w.heads(), d = w.head_dim();
  Projections p{Tensor({1, Hh, n, d}), Tensor({1, Hh, n, d}), Tensor({1, Hh, n, d})};
  std::vector<double> x(D);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < D; ++c) x[c] = tokens[(begin + i) * D + c] + t * w.time_embed[c];
    for (std::size_t h = 0; h < Hh; ++h) {
      for (std::size_t e = 0; e < d; ++e) {
        double sq = 0.0, sk = 0.0, sv = 0.0;
        for (std::size_t c = 0; c < D; ++c) {
          const std::size_t wi = (h * D + c) * d + e;
          sq += x[c] * w.wq[wi];
          sk += x[c] * w.wk[wi];
          sv += x[c] * w.wv[wi];
        }
        const std::size_t oi = (h * n + i) * d + e;
        p.q[oi] = sq;
        p.k[oi] = sk;
        p.v[oi] = sv;
      }
    }
  }
  return p;
}

Tensor slice_tokens(const Tensor& x, std::size_t begin, std::size_t end) {
  SF_CHECK(x.rank() == 4, ErrorKind::DimensionMismatch, "expected (b, n_h, s, d)");
  const std::size_t s = x.extent(2), d = x.extent(3), outer = x.extent(0) * x.extent(1);
  SF_CHECK(begin < end && end <= s, ErrorKind::DimensionMismatch, "token slice out of bounds");
  Tensor out({x.extent(0), x.extent(1), end - begin, d});
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = begin; i < end; ++i)
      for (std::size_t c = 0; c < d; ++c) out[(o * (end - begin) + i - begin) * d + c] = x[(o * s + i) * d + c];
  return out;
}

Tensor concat_tokens(const Tensor& a, const Tensor& b) {
  SF_CHECK(a.rank() == 4 && b.rank() == 4 && a.extent(0) == b.extent(0) && a.extent(1) == b.extent(1) &&
               a.extent(3) == b.extent(3),
           ErrorKind::DimensionMismatch, "cannot concatenate " + shape_to_string(a.shape()) + " and " +
                                             shape_to_string(b.shape()));
  const std::size_t sa = a.extent(2), sb = b.extent(2), d = a.extent(3), outer = a.extent(0) * a.extent(1);
  Tensor out({a.extent(0), a.extent(1), sa + sb, d});
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < sa; ++i)
      for (std::size_t c = 0; c < d; ++c) out[(o * (sa + sb) + i) * d + c] = a[(o * sa + i) * d + c];
    for (std::size_t i = 0; i < sb; ++i)
      for (std::size_t c = 0; c < d; ++c) out[(o * (sa + sb) + sa + i) * d + c] = b[(o * sb + i) * d + c];
  }
  return out;
}

Tensor block_causal_attention(const UnifiedSequence& seq, const AttentionWeights& weights) {
  const std::size_t nc = seq.cond_tokens, N = seq.total_tokens();
  const auto noisy = project(seq.tokens, nc, N, seq.t_noisy, weights);
  if (nc == 0) return dense_attention(noisy.q, noisy.k, noisy.v);

  const auto cond = project(seq.tokens, 0, nc, 0.0, weights);
  const Tensor cond_out = dense_attention(cond.q, cond.k, cond.v);
  const Tensor noisy_out =
      dense_attention(noisy.q, concat_tokens(cond.k, noisy.k), concat_tokens(cond.v, noisy.v));
  return concat_tokens(cond_out, noisy_out);
}

KvCache::KvCache(Tensor k_cond, Tensor v_cond) : k_cond_(std::move(k_cond)), v_cond_(std::move(v_cond)) {
  SF_CHECK(k_cond_->rank() == 4 && k_cond_->shape() == v_cond_->shape(), ErrorKind::CacheShapeMismatch,
           "cached K and V must share shape (b, n_h, N_cond, d)");
}

KvCache build_kv_cache(const UnifiedSequence& seq, const AttentionWeights& weights) {
  if (seq.cond_tokens == 0) return KvCache{};
  auto cond = project(seq.tokens, 0, seq.cond_tokens, 0.0, weights);
  return KvCache(std::move(cond.k), std::move(cond.v));
}

Tensor attend_with_cache(const Tensor& q_noisy, const KvCache& cache, const Tensor& k_noisy, const Tensor& v_noisy) {
  if (cache.empty()) return dense_attention(q_noisy, k_noisy, v_noisy);
  const auto& kc = cache.keys();
  SF_CHECK(k_noisy.rank() == 4 && kc.extent(0) == k_noisy.extent(0) && kc.extent(1) == k_noisy.extent(1) &&
               kc.extent(3) == k_noisy.extent(3) && v_noisy.shape() == k_noisy.shape(),
           ErrorKind::CacheShapeMismatch,
           "cache " + shape_to_string(kc.shape()) + " is incompatible with noisy keys " +
               shape_to_string(k_noisy.shape()));
  return dense_attention(q_noisy, concat_tokens(kc, k_noisy), concat_tokens(cache.values(), v_noisy));
}

}  // namespace sparseflow::bsa
