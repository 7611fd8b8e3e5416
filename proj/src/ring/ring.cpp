#include "sparseflow/ring/ring.hpp"

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <exception>
#include <mutex>
#include <numeric>
#include <optional>
#include <thread>

#include "sparseflow/bsa/block_causal.hpp"
#include "sparseflow/bsa/layout.hpp"
#include "sparseflow/core/error.hpp"
#include "sparseflow/core/rng.hpp"

namespace sparseflow::ring {

using bsa::BlockSizes;
using bsa::SelectionMask;

Partition make_partition(std::size_t seq_q, std::size_t seq_k, BlockSizes sizes, std::size_t workers) {
  SF_CHECK(workers >= 1, ErrorKind::IndivisibleWorkers, "need at least one worker");
  SF_CHECK(sizes.query > 0 && sizes.key > 0 && seq_q % sizes.query == 0 && seq_k % sizes.key == 0,
           ErrorKind::IndivisibleLength, "sequence lengths must be whole multiples of the block sizes");
  const std::size_t nq = seq_q / sizes.query, nk = seq_k / sizes.key;
  SF_CHECK(nq % workers == 0 && nk % workers == 0, ErrorKind::IndivisibleWorkers,
           std::to_string(workers) + " workers do not divide " + std::to_string(nq) + " query blocks and " +
               std::to_string(nk) + " key blocks");
  return Partition{workers, seq_q / workers, seq_k / workers, nq / workers, nk / workers};
}

namespace {

class Mailbox {
 public:
  void push(ShardMessage msg) {
    {
      std::lock_guard lock(mu_);
      queue_.push_back(std::move(msg));
    }
    cv_.notify_one();
  }

  ShardMessage pop() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return !queue_.empty() || closed_; });
    SF_CHECK(!queue_.empty(), ErrorKind::InvalidConfig, "ring aborted by a failing worker");
    auto msg = std::move(queue_.front());
    queue_.pop_front();
    return msg;
  }

  void close() {
    {
      std::lock_guard lock(mu_);
      closed_ = true;
    }
    cv_.notify_all();
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<ShardMessage> queue_;
  bool closed_ = false;
};

// Round r: every worker forwards the shard that originated r hops upstream,
// then receives one from its predecessor.
class RingNode {
 public:
  virtual ~RingNode() = default;
  virtual ShardMessage outgoing(std::size_t round) const = 0;
  virtual void receive(ShardMessage msg) = 0;
};

void drive_ring(const std::vector<RingNode*>& nodes, Execution execution, std::uint64_t seed,
                std::vector<WorkerCounters>& counters) {
  const std::size_t n = nodes.size();
  if (n <= 1) return;
  std::vector<Mailbox> boxes(n);
  auto send = [&](std::size_t i, std::size_t round) {
    boxes[(i + 1) % n].push(nodes[i]->outgoing(round));
    counters[i].messages_sent += 1;
  };
  auto recv = [&](std::size_t i) {
    nodes[i]->receive(boxes[i].pop());
    counters[i].messages_received += 1;
  };

  if (execution == Execution::Sequential) {
    SeededRng rng(seed);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    auto shuffle = [&] {
      for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
    };
    for (std::size_t round = 0; round + 1 < n; ++round) {
      shuffle();
      for (auto i : order) send(i, round);
      shuffle();
      for (auto i : order) recv(i);
    }
    return;
  }

  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> threads;
  threads.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    threads.emplace_back([&, i] {
      try {
        for (std::size_t round = 0; round + 1 < n; ++round) {
          send(i, round);
          recv(i);
        }
      } catch (...) {
        errors[i] = std::current_exception();
        for (auto& b : boxes) b.close();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

class PoolNode final : public RingNode {
 public:
  PoolNode(std::size_t id, std::size_t n, const Tensor& own) : id_(id), n_(n), pools_(n) { pools_[id] = own; }

  ShardMessage outgoing(std::size_t round) const override {
    const std::size_t origin = (id_ + n_ - round % n_) % n_;
    return {ShardMessage::Kind::PooledKeys, origin, {*pools_[origin]}};
  }

  void receive(ShardMessage msg) override {
    SF_CHECK(msg.kind == ShardMessage::Kind::PooledKeys && msg.payload.size() == 1 && msg.origin < n_,
             ErrorKind::DimensionMismatch, "unexpected message in pooled-key ring");
    SF_CHECK(msg.payload[0].shape() == pools_[id_]->shape(), ErrorKind::DimensionMismatch,
             "pooled shard " + shape_to_string(msg.payload[0].shape()) + " from worker " +
                 std::to_string(msg.origin) + " does not match " + shape_to_string(pools_[id_]->shape()));
    pools_[msg.origin] = std::move(msg.payload[0]);
  }

  Tensor assembled() const {
    Tensor out = *pools_[0];
    for (std::size_t j = 1; j < n_; ++j) out = bsa::concat_tokens(out, *pools_[j]);
    return out;
  }

 private:
  std::size_t id_, n_;
  std::vector<std::optional<Tensor>> pools_;
};

class KvNode final : public RingNode {
 public:
  KvNode(std::size_t id, const Partition& part, BlockSizes sizes, Tensor q, Tensor k, Tensor v,
         const SelectionMask& mask, WorkerCounters& counters)
      : id_(id),
        part_(part),
        sizes_(sizes),
        q_(std::move(q)),
        mask_(mask),
        counters_(counters),
        shards_(part.workers) {
    batch_ = q_.extent(0);
    heads_ = q_.extent(1);
    d_ = q_.extent(3);
    dv_ = v.extent(3);
    scale_ = 1.0 / std::sqrt(static_cast<double>(d_));
    blocks_.reserve(batch_ * heads_ * part_.query_blocks);
    for (std::size_t i = 0; i < batch_ * heads_ * part_.query_blocks; ++i) blocks_.emplace_back(sizes_.query, dv_);
    shards_[id] = {std::move(k), std::move(v)};
    drain();
  }

  ShardMessage outgoing(std::size_t round) const override {
    const std::size_t origin = (id_ + part_.workers - round % part_.workers) % part_.workers;
    return {ShardMessage::Kind::KvShard, origin, *shards_[origin]};
  }

  void receive(ShardMessage msg) override {
    SF_CHECK(msg.kind == ShardMessage::Kind::KvShard && msg.payload.size() == 2 && msg.origin < part_.workers,
             ErrorKind::DimensionMismatch, "unexpected message in KV ring");
    const auto& own = *shards_[id_];
    SF_CHECK(msg.payload[0].shape() == own[0].shape() && msg.payload[1].shape() == own[1].shape(),
             ErrorKind::DimensionMismatch,
             "KV shard from worker " + std::to_string(msg.origin) + " has the wrong shape");
    shards_[msg.origin] = std::move(msg.payload);
    drain();
  }

  // Writes this worker's rows into the assembled output and stats.
  void finalize(Tensor& out, bsa::AttentionStats& stats) const {
    SF_CHECK(next_ == part_.workers, ErrorKind::InvalidConfig, "worker finished before all shards arrived");
    const std::size_t sq = stats.rows;
    for (std::size_t bh = 0; bh < batch_ * heads_; ++bh)
      for (std::size_t lqb = 0; lqb < part_.query_blocks; ++lqb) {
        const std::size_t row0 = bh * sq + id_ * part_.query_tokens + lqb * sizes_.query;
        blocks_[bh * part_.query_blocks + lqb].finalize(&out[row0 * dv_], &stats.row_max[row0],
                                                        &stats.row_lse[row0]);
      }
  }

 private:
  // Shards are merged strictly in ascending origin order, whatever the
  // arrival order, so the result matches a single worker bit for bit.
  void drain() {
    while (next_ < part_.workers && shards_[next_].has_value()) process(next_++);
  }

  void process(std::size_t origin) {
    const auto& k = (*shards_[origin])[0];
    const auto& v = (*shards_[origin])[1];
    const std::uint32_t lo = static_cast<std::uint32_t>(origin * part_.key_blocks);
    const std::uint32_t hi = static_cast<std::uint32_t>(lo + part_.key_blocks);
    const std::size_t sk = part_.key_tokens, sq = part_.query_tokens;
    bool touched = false;
    for (std::size_t b = 0; b < batch_; ++b)
      for (std::size_t h = 0; h < heads_; ++h) {
        const std::size_t bh = b * heads_ + h;
        for (std::size_t lqb = 0; lqb < part_.query_blocks; ++lqb) {
          const auto& row = mask_.row(b, h, lqb);
          auto it = std::lower_bound(row.begin(), row.end(), lo);
          auto& block = blocks_[bh * part_.query_blocks + lqb];
          const std::size_t row0 = bh * sq + lqb * sizes_.query;
          for (; it != row.end() && *it < hi; ++it) {
            const std::size_t key0 = bh * sk + (*it - lo) * sizes_.key;
            block.visit(&q_[row0 * d_], &k[key0 * d_], &v[key0 * dv_], sizes_.key, d_, scale_);
            counters_.ops.block_pairs += 1;
            counters_.ops.madds += sizes_.query * sizes_.key * (d_ + dv_);
            touched = true;
          }
        }
      }
    if (!touched) counters_.shards_skipped += 1;
  }

  std::size_t id_;
  Partition part_;
  BlockSizes sizes_;
  Tensor q_;
  const SelectionMask& mask_;
  WorkerCounters& counters_;
  std::vector<std::optional<std::vector<Tensor>>> shards_;
  std::vector<bsa::OnlineSoftmaxBlock> blocks_;
  std::size_t batch_ = 0, heads_ = 0, d_ = 0, dv_ = 0, next_ = 0;
  double scale_ = 1.0;
};

}  // namespace

Tensor local_pooled_keys(const Tensor& k_slice, std::size_t key_block) { return bsa::pool_blocks(k_slice, key_block); }

std::vector<Tensor> ring_gather_pooled(const std::vector<Tensor>& local_pools, Execution execution,
                                       std::uint64_t schedule_seed, std::vector<WorkerCounters>* counters) {
  const std::size_t n = local_pools.size();
  SF_CHECK(n >= 1, ErrorKind::IndivisibleWorkers, "need at least one worker");
  std::vector<PoolNode> nodes;
  nodes.reserve(n);
  for (std::size_t i = 0; i < n; ++i) nodes.emplace_back(i, n, local_pools[i]);
  std::vector<RingNode*> ptrs;
  for (auto& node : nodes) ptrs.push_back(&node);
  std::vector<WorkerCounters> local(n);
  drive_ring(ptrs, execution, schedule_seed, counters ? *counters : local);
  std::vector<Tensor> out;
  out.reserve(n);
  for (auto& node : nodes) out.push_back(node.assembled());
  return out;
}

SelectionMask local_mask(const Tensor& q_pool_local, const Tensor& k_pool_full, std::size_t head_dim,
                         std::size_t r) {
  return bsa::select_topr(bsa::pooled_scores(q_pool_local, k_pool_full, head_dim), r);
}

SelectionMask assemble_masks(const std::vector<SelectionMask>& parts) {
  SF_CHECK(!parts.empty(), ErrorKind::DimensionMismatch, "no mask parts to assemble");
  const auto& first = parts.front();
  std::size_t nq = 0;
  for (const auto& p : parts) {
    SF_CHECK(p.batch() == first.batch() && p.heads() == first.heads() && p.key_blocks() == first.key_blocks() &&
                 p.mode() == first.mode(),
             ErrorKind::DimensionMismatch, "mask parts disagree on batch, heads, key blocks or mode");
    nq += p.query_blocks();
  }
  std::vector<SelectionMask::Row> rows;
  rows.reserve(first.batch() * first.heads() * nq);
  for (std::size_t b = 0; b < first.batch(); ++b)
    for (std::size_t h = 0; h < first.heads(); ++h)
      for (const auto& p : parts)
        for (std::size_t qb = 0; qb < p.query_blocks(); ++qb) rows.push_back(p.row(b, h, qb));
  return SelectionMask(first.batch(), first.heads(), nq, first.key_blocks(), first.mode(), std::move(rows));
}

RingResult ring_sparse_attention(const Tensor& q, const Tensor& k, const Tensor& v, const RingOptions& options) {
  const auto dims = bsa::attention_dims(q, k, v);
  const auto part = make_partition(dims.sq, dims.sk, options.sizes, options.workers);
  const std::size_t n = part.workers;

  std::vector<Tensor> qs, ks, vs, pools;
  for (std::size_t i = 0; i < n; ++i) {
    qs.push_back(bsa::slice_tokens(q, i * part.query_tokens, (i + 1) * part.query_tokens));
    ks.push_back(bsa::slice_tokens(k, i * part.key_tokens, (i + 1) * part.key_tokens));
    vs.push_back(bsa::slice_tokens(v, i * part.key_tokens, (i + 1) * part.key_tokens));
    pools.push_back(local_pooled_keys(ks.back(), options.sizes.key));
  }

  std::vector<WorkerCounters> counters(n);
  const auto gathered = ring_gather_pooled(pools, options.execution, options.schedule_seed, &counters);
  std::uint64_t pooled_messages = 0;
  for (const auto& c : counters) pooled_messages += c.messages_sent;

  std::vector<SelectionMask> masks;
  for (std::size_t i = 0; i < n; ++i)
    masks.push_back(local_mask(bsa::pool_blocks(qs[i], options.sizes.query), gathered[i], dims.d, options.r));

  std::vector<KvNode> nodes;
  nodes.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    nodes.emplace_back(i, part, options.sizes, std::move(qs[i]), std::move(ks[i]), std::move(vs[i]), masks[i],
                       counters[i]);
  std::vector<RingNode*> ptrs;
  for (auto& node : nodes) ptrs.push_back(&node);
  drive_ring(ptrs, options.execution, options.schedule_seed ^ 0x9e3779b97f4a7c15ULL, counters);

  RingResult res{Tensor({dims.batch, dims.heads, dims.sq, dims.dv}), assemble_masks(masks),
                 bsa::AttentionStats{dims.batch, dims.heads, dims.sq,
                                     std::vector<double>(dims.batch * dims.heads * dims.sq),
                                     std::vector<double>(dims.batch * dims.heads * dims.sq)},
                 {}, pooled_messages, 0};
  for (const auto& node : nodes) node.finalize(res.out, res.stats);
  for (const auto& c : counters) res.kv_messages += c.messages_sent;
  res.kv_messages -= pooled_messages;
  res.workers = std::move(counters);
  return res;
}

}  // namespace sparseflow::ring
