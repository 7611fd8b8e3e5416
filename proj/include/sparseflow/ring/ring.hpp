#pragma once

#include <cstdint>
#include <vector>

#include "sparseflow/bsa/attention.hpp"
#include "sparseflow/bsa/selection.hpp"
#include "sparseflow/core/tensor.hpp"

namespace sparseflow::ring {

// Contiguous block-order token slices, one per worker.
struct Partition {
  std::size_t workers = 1;
  std::size_t query_tokens = 0;  // per worker
  std::size_t key_tokens = 0;    // per worker
  std::size_t query_blocks = 0;  // per worker
  std::size_t key_blocks = 0;    // per worker
};

// Throws IndivisibleWorkers unless N_cp divides both block counts.
Partition make_partition(std::size_t seq_q, std::size_t seq_k, bsa::BlockSizes sizes, std::size_t workers);

enum class Execution {
  Sequential,  // all workers in one thread, worker order shuffled per round
  Concurrent,  // one std::thread per worker
};

struct ShardMessage {
  enum class Kind { PooledKeys, KvShard };
  Kind kind;
  std::size_t origin;
  std::vector<Tensor> payload;  // {K_pool} or {K, V}
};

struct WorkerCounters {
  std::uint64_t messages_sent = 0;
  std::uint64_t messages_received = 0;
  std::uint64_t shards_skipped = 0;  // KV shards with no selected key block
  bsa::OpCounters ops;
};

struct RingOptions {
  std::size_t workers = 1;
  bsa::BlockSizes sizes{};
  std::size_t r = 1;
  Execution execution = Execution::Sequential;
  std::uint64_t schedule_seed = 0;  // sequential interleaving only
};

struct RingResult {
  Tensor out;                         // assembled (b, n_h, s_q, d_v)
  bsa::SelectionMask mask;            // assembled over all query blocks
  bsa::AttentionStats stats;
  std::vector<WorkerCounters> workers;
  std::uint64_t pooled_messages = 0;
  std::uint64_t kv_messages = 0;
};

// Pooled keys for the key blocks of one worker's slice.
Tensor local_pooled_keys(const Tensor& k_slice, std::size_t key_block);

// Every worker ends with the global pooled keys in block order. Exactly
// N_cp - 1 neighbor passes; messages are tallied into `counters` if given.
std::vector<Tensor> ring_gather_pooled(const std::vector<Tensor>& local_pools, Execution execution,
                                       std::uint64_t schedule_seed = 0,
                                       std::vector<WorkerCounters>* counters = nullptr);

// Top-r mask for a worker's query blocks against all key blocks.
bsa::SelectionMask local_mask(const Tensor& q_pool_local, const Tensor& k_pool_full, std::size_t head_dim,
                              std::size_t r);

// Concatenates per-worker masks along the query-block axis.
bsa::SelectionMask assemble_masks(const std::vector<bsa::SelectionMask>& parts);

// Full pipeline on block-order Q, K, V (b, n_h, s, d). TopR selection only.
RingResult ring_sparse_attention(const Tensor& q, const Tensor& k, const Tensor& v, const RingOptions& options);

}  // namespace sparseflow::ring
