#pragma once

#include <cstddef>
#include <optional>

#include "sparseflow/core/rng.hpp"
#include "sparseflow/core/tensor.hpp"

namespace sparseflow::bsa {

// [X_cond, X_noisy] along the token axis. Condition tokens always sit at
// timestep 0; noisy tokens share t_noisy.
struct UnifiedSequence {
  Tensor tokens;              // (N_cond + N_noisy, model_dim)
  std::size_t cond_tokens = 0;
  double t_noisy = 1.0;

  UnifiedSequence(Tensor tokens, std::size_t cond_tokens, double t_noisy);

  std::size_t total_tokens() const { return tokens.extent(0); }
  std::size_t noisy_tokens() const { return total_tokens() - cond_tokens; }
  std::size_t model_dim() const { return tokens.extent(1); }
};

// Single attention layer. Tokens are modulated as x + t * time_embed before
// the per-head projections, so condition tokens (t = 0) pass unmodulated.
struct AttentionWeights {
  Tensor wq, wk, wv;   // (heads, model_dim, head_dim)
  Tensor time_embed;   // (model_dim)

  static AttentionWeights random(std::size_t heads, std::size_t model_dim, std::size_t head_dim, SeededRng& rng);
  std::size_t heads() const { return wq.extent(0); }
  std::size_t model_dim() const { return wq.extent(1); }
  std::size_t head_dim() const { return wq.extent(2); }
};

struct Projections {
  Tensor q, k, v;  // (1, heads, tokens, head_dim)
};

// Projects rows [begin, end) of `tokens` at timestep t.
Projections project(const Tensor& tokens, std::size_t begin, std::size_t end, double t,
                    const AttentionWeights& weights);

// Token-axis helpers for (b, n_h, s, d) tensors.
Tensor slice_tokens(const Tensor& x, std::size_t begin, std::size_t end);
Tensor concat_tokens(const Tensor& a, const Tensor& b);

// Condition rows attend only to condition keys; noisy rows attend to
// [K_cond, K_noisy]. Output (1, heads, N, head_dim).
Tensor block_causal_attention(const UnifiedSequence& seq, const AttentionWeights& weights);

// Condition-segment keys/values, computed once and reused for every
// denoising step. Holds copies; immutable after construction.
class KvCache {
 public:
  KvCache() = default;
  KvCache(Tensor k_cond, Tensor v_cond);

  bool empty() const noexcept { return !k_cond_.has_value(); }
  std::size_t tokens() const { return empty() ? 0 : k_cond_->extent(2); }
  const Tensor& keys() const { return *k_cond_; }
  const Tensor& values() const { return *v_cond_; }

 private:
  std::optional<Tensor> k_cond_, v_cond_;
};

KvCache build_kv_cache(const UnifiedSequence& seq, const AttentionWeights& weights);

// Noisy-segment attention against cached condition keys/values.
Tensor attend_with_cache(const Tensor& q_noisy, const KvCache& cache, const Tensor& k_noisy, const Tensor& v_noisy);

}  // namespace sparseflow::bsa
