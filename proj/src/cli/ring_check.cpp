#include <ostream>
#include <sstream>

#include "sparseflow/bsa/attention.hpp"
#include "sparseflow/bsa/layout.hpp"
#include "sparseflow/cli/commands.hpp"
#include "sparseflow/core/error.hpp"
#include "sparseflow/core/rng.hpp"
#include "sparseflow/ring/ring.hpp"

namespace sparseflow::cli {

namespace {

using namespace sparseflow::ring;

struct RingPlan {
  bsa::GridSpec grid;
  bsa::BlockSpec blocks;
  std::size_t r = 1;
  std::vector<std::size_t> workers;
  std::vector<Execution> executions;
  bool constant = false;
  std::uint64_t seed = 0;
  double tolerance = 1e-10;
};

const char* execution_name(Execution e) { return e == Execution::Sequential ? "sequential" : "concurrent"; }

void execute(const RingPlan& plan, Report& report, std::ostream& log) {
  auto rng = SeededRng(plan.seed).fork(0);
  const Shape shape{plan.grid.batch, plan.grid.heads, plan.grid.tokens(), plan.grid.head_dim};
  Tensor q, k, v;
  if (plan.constant) {
    q = Tensor(shape, 0.5);
    k = Tensor(shape, -0.25);
    v = Tensor(shape, 1.5);
  } else {
    q = gaussian_sample(rng, shape);
    k = gaussian_sample(rng, shape);
    v = gaussian_sample(rng, shape);
  }
  const auto [qb, layout] = bsa::rearrange_to_blocks(q, plan.grid, plan.blocks);
  const Tensor kb = bsa::apply_layout(k, layout), vb = bsa::apply_layout(v, layout);
  const std::size_t bt = plan.blocks.volume();

  RingOptions base{1, {bt, bt}, plan.r, Execution::Sequential, plan.seed};
  const auto single = ring_sparse_attention(qb, kb, vb, base);
  const auto direct = bsa::sparse_attention_forward(qb, kb, vb, single.mask, {bt, bt});
  report.check("single_worker_matches_sparse_forward", single.out == direct.out);

  std::ostringstream runs, workers_csv;
  runs << "workers,execution,max_abs_deviation,mask_equal,pooled_messages,kv_messages\n";
  workers_csv << "workers,execution,worker,messages_sent,messages_received,shards_skipped,block_pairs,madds\n";
  Json per_run = Json::array();
  for (const auto n : plan.workers)
    for (const auto exec : plan.executions) {
      RingOptions opt = base;
      opt.workers = n;
      opt.execution = exec;
      const auto res = ring_sparse_attention(qb, kb, vb, opt);
      const double dev = max_abs_diff(res.out, single.out);
      const bool mask_equal = res.mask == single.mask;
      const std::uint64_t expected = n * (n - 1);
      const std::string tag = std::to_string(n) + "_" + execution_name(exec);
      report.check("deviation_" + tag, dev <= plan.tolerance, dev, plan.tolerance);
      report.check("mask_equal_" + tag, mask_equal);
      report.check("message_count_" + tag, res.pooled_messages == expected && res.kv_messages == expected);
      if (plan.constant) report.check("constant_exact_" + tag, dev == 0.0, dev, 0.0);

      Json counters = Json::array();
      for (std::size_t w = 0; w < res.workers.size(); ++w) {
        const auto& c = res.workers[w];
        counters.push_back(Json{{"worker", w},
                                {"messages_sent", c.messages_sent},
                                {"messages_received", c.messages_received},
                                {"shards_skipped", c.shards_skipped},
                                {"block_pairs", c.ops.block_pairs},
                                {"madds", c.ops.madds}});
        workers_csv << n << ',' << execution_name(exec) << ',' << w << ',' << c.messages_sent << ','
                    << c.messages_received << ',' << c.shards_skipped << ',' << c.ops.block_pairs << ','
                    << c.ops.madds << '\n';
      }
      per_run.push_back(Json{{"workers", n},
                             {"execution", execution_name(exec)},
                             {"max_abs_deviation", dev},
                             {"mask_equal", mask_equal},
                             {"pooled_messages", res.pooled_messages},
                             {"kv_messages", res.kv_messages},
                             {"counters", counters}});
      runs << n << ',' << execution_name(exec) << ',' << format_real(dev) << ',' << (mask_equal ? 1 : 0) << ','
           << res.pooled_messages << ',' << res.kv_messages << '\n';
      log << "ring-check: N_cp=" << n << " " << execution_name(exec) << " deviation " << format_real(dev) << "\n";
    }
  report.metric("runs", per_run);
  report.write_text("runs.csv", runs.str());
  report.write_text("workers.csv", workers_csv.str());
  report.write_tensor("fixtures/out.tensor", bsa::inverse_rearrange(single.out, layout));
}

Execute prepare(const Config& cfg) {
  RingPlan plan;
  plan.grid = bsa::GridSpec{cfg.count("frames"), cfg.count("height"), cfg.count("width"), cfg.count("head_dim"),
                            cfg.count("heads"),  cfg.count("batch")};
  plan.blocks = bsa::BlockSpec{cfg.count("block_t"), cfg.count("block_h"), cfg.count("block_w")};
  plan.r = cfg.count("r");
  plan.workers = cfg.counts("workers");
  plan.constant = cfg.flag("constant");
  plan.seed = cfg.seed("seed");
  const auto& exec = cfg.text("execution");
  if (exec == "both")
    plan.executions = {Execution::Sequential, Execution::Concurrent};
  else if (exec == "sequential")
    plan.executions = {Execution::Sequential};
  else if (exec == "concurrent")
    plan.executions = {Execution::Concurrent};
  else
    throw ConfigError("execution must be sequential, concurrent or both, got '" + exec + "'");
  if (plan.workers.empty()) throw ConfigError("workers must list at least one count");
  if (plan.grid.tokens() == 0 || plan.grid.head_dim == 0 || plan.grid.heads == 0 || plan.grid.batch == 0)
    throw Error(ErrorKind::InvalidShape, "grid extents, head_dim, heads and batch must be positive");

  const std::size_t nk = bsa::BlockLayout(plan.grid, plan.blocks).block_count();
  SF_CHECK(plan.r >= 1 && plan.r <= nk, ErrorKind::RankOutOfRange,
           "r = " + std::to_string(plan.r) + " outside [1, N_k = " + std::to_string(nk) + "]");
  const std::size_t bt = plan.blocks.volume();
  for (const auto n : plan.workers) {
    SF_CHECK(n >= 1, ErrorKind::IndivisibleWorkers, "worker count must be positive");
    make_partition(plan.grid.tokens(), plan.grid.tokens(), {bt, bt}, n);
  }
  return [plan](Report& report, std::ostream& log) { execute(plan, report, log); };
}

}  // namespace

Command ring_check_command() {
  return Command{"ring-check",
                 "ring context-parallel sparse attention versus a single worker",
                 {{"frames", "8"},
                  {"height", "16"},
                  {"width", "16"},
                  {"head_dim", "8"},
                  {"heads", "1"},
                  {"batch", "1"},
                  {"block_t", "4"},
                  {"block_h", "4"},
                  {"block_w", "4"},
                  {"r", "2"},
                  {"workers", "1,2,4"},
                  {"execution", "both"},
                  {"constant", "false"},
                  {"seed", "0"}},
                 prepare};
}

}  // namespace sparseflow::cli
