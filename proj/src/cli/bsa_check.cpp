#include <cmath>
#include <ostream>
#include <sstream>

#include "sparseflow/bsa/attention.hpp"
#include "sparseflow/bsa/flops.hpp"
#include "sparseflow/bsa/layout.hpp"
#include "sparseflow/cli/commands.hpp"
#include "sparseflow/core/error.hpp"
#include "sparseflow/core/ops.hpp"
#include "sparseflow/core/rng.hpp"

namespace sparseflow::cli {

namespace {

using namespace sparseflow::bsa;

struct BsaPlan {
  GridSpec grid;
  BlockSpec blocks;
  bool cdf = false;
  std::size_t r = 1;
  double p = 0.9;
  std::size_t cases = 1, fd_cases = 1;
  std::uint64_t seed = 0;
  double tolerance = 1e-10, fd_tolerance = 1e-6;
};

SelectionMask make_mask(const BsaPlan& plan, const Tensor& qb, const Tensor& kb, std::size_t block_tokens,
                        std::size_t r) {
  const auto s = pooled_scores(pool_blocks(qb, block_tokens), pool_blocks(kb, block_tokens), qb.extent(3));
  return plan.cdf ? select_cdf(s, plan.p) : select_topr(s, r);
}

// Every CDF row must be the shortest descending-score prefix reaching p.
bool cdf_rows_minimal(const Tensor& s_pool, const SelectionMask& mask, double p) {
  const std::size_t n = s_pool.extent(3), rows = s_pool.size() / n;
  for (std::size_t row = 0; row < rows; ++row) {
    const double* scores = &s_pool[row * n];
    const auto order = ranked_key_blocks(scores, n);
    const auto& sel = mask.rows()[row];
    const std::size_t k = sel.size();
    if (k == 0 || k > n) return false;
    SelectionMask::Row prefix(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(prefix.begin(), prefix.end());
    if (prefix != sel) return false;
    if (p >= 1.0) {
      if (k != n) return false;
      continue;
    }
    if (selected_mass(scores, n, sel) < p - 1e-12) return false;
    SelectionMask::Row shorter(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k - 1));
    if (k > 1 && selected_mass(scores, n, shorter) >= p + 1e-12) return false;
  }
  return true;
}

double masked_loss(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& d_out, const SelectionMask& m,
                   BlockSizes sizes) {
  const auto o = dense_attention_masked(q, k, v, m, sizes);
  return dot(o.data(), d_out.data());
}

void execute(const BsaPlan& plan, Report& report, std::ostream& log) {
  const SeededRng root(plan.seed);
  const std::size_t nk = BlockLayout(plan.grid, plan.blocks).block_count();
  const std::size_t bt = plan.blocks.volume();
  const BlockSizes sizes{bt, bt};
  const Shape shape{plan.grid.batch, plan.grid.heads, plan.grid.tokens(), plan.grid.head_dim};

  double dense_dev = 0.0, oracle_dev = 0.0, fraction_sum = 0.0;
  bool minimal = true, p1_full = true;
  std::ostringstream csv;
  csv << "case,dense_deviation,mask_oracle_deviation,selected_fraction\n";
  for (std::size_t c = 0; c < plan.cases; ++c) {
    auto rng = root.fork(c);
    const Tensor q = gaussian_sample(rng, shape), k = gaussian_sample(rng, shape), v = gaussian_sample(rng, shape);
    const auto [qb, layout] = rearrange_to_blocks(q, plan.grid, plan.blocks);
    const Tensor kb = apply_layout(k, layout), vb = apply_layout(v, layout);

    const auto full = SelectionMask::full(plan.grid.batch, plan.grid.heads, nk, nk);
    const auto sparse_full = sparse_attention_forward(qb, kb, vb, full, sizes);
    const double dd = max_abs_diff(inverse_rearrange(sparse_full.out, layout), dense_attention(q, k, v));

    const auto s_pool = pooled_scores(pool_blocks(qb, bt), pool_blocks(kb, bt), plan.grid.head_dim);
    const auto mask = plan.cdf ? select_cdf(s_pool, plan.p) : select_topr(s_pool, plan.r);
    const auto sparse = sparse_attention_forward(qb, kb, vb, mask, sizes);
    const double od = max_abs_diff(sparse.out, dense_attention_masked(qb, kb, vb, mask, sizes));
    const double frac = flop_estimate(mask, sizes, plan.grid.head_dim).selected_fraction;

    if (plan.cdf) {
      minimal = minimal && cdf_rows_minimal(s_pool, mask, plan.p);
      if (plan.p >= 1.0) p1_full = p1_full && mask.rows() == full.rows() && sparse.out == sparse_full.out;
    }
    dense_dev = std::max(dense_dev, dd);
    oracle_dev = std::max(oracle_dev, od);
    fraction_sum += frac;
    csv << c << ',' << format_real(dd) << ',' << format_real(od) << ',' << format_real(frac) << '\n';

    if (c == 0) {
      report.write_tensor("fixtures/q.tensor", q);
      report.write_tensor("fixtures/k.tensor", k);
      report.write_tensor("fixtures/v.tensor", v);
      report.write_tensor("fixtures/sparse_out.tensor", inverse_rearrange(sparse.out, layout));
    }
  }
  report.write_text("cases.csv", csv.str());
  report.check("dense_equivalence", dense_dev <= plan.tolerance, dense_dev, plan.tolerance);
  report.check("mask_oracle", oracle_dev <= plan.tolerance, oracle_dev, plan.tolerance);
  if (plan.cdf) report.check("cdf_minimality", minimal);
  if (plan.cdf && plan.p >= 1.0) report.check("cdf_p1_full_selection", p1_full);

  const double fraction = fraction_sum / static_cast<double>(plan.cases);
  report.metric("key_blocks", nk);
  report.metric("selected_fraction", fraction);
  if (!plan.cdf) {
    const double expected = static_cast<double>(plan.r) / static_cast<double>(nk);
    report.check("topr_selected_fraction", std::abs(fraction - expected) <= 1e-15, fraction, expected);
  }

  // Backward on a 64-token instance, 8 blocks of 8 tokens.
  const GridSpec small{4, 4, 4, 4, 1, 1};
  const BlockSpec small_blocks{2, 2, 2};
  const std::size_t small_nk = 8;
  const std::size_t small_r = std::max<std::size_t>(1, (plan.r * small_nk + nk - 1) / nk);
  const BlockSizes small_sizes{8, 8};
  double fd_err = 0.0;
  for (std::size_t c = 0; c < plan.fd_cases; ++c) {
    auto rng = root.fork(1'000'000 + c);
    const Shape s{1, 1, small.tokens(), small.head_dim};
    const Tensor q0 = gaussian_sample(rng, s), k0 = gaussian_sample(rng, s), v0 = gaussian_sample(rng, s);
    const Tensor d_out = gaussian_sample(rng, s);
    const auto [q, layout] = rearrange_to_blocks(q0, small, small_blocks);
    const Tensor k = apply_layout(k0, layout), v = apply_layout(v0, layout);
    const auto m = make_mask(plan, q, k, 8, small_r);
    const auto fwd = sparse_attention_forward(q, k, v, m, small_sizes);
    const auto g = sparse_attention_backward(q, k, v, m, small_sizes, fwd.out, fwd.stats, d_out);
    const auto fq = finite_difference_gradient([&](const Tensor& x) { return masked_loss(x, k, v, d_out, m, small_sizes); }, q);
    const auto fk = finite_difference_gradient([&](const Tensor& x) { return masked_loss(q, x, v, d_out, m, small_sizes); }, k);
    const auto fv = finite_difference_gradient([&](const Tensor& x) { return masked_loss(q, k, x, d_out, m, small_sizes); }, v);
    fd_err = std::max({fd_err, relative_error(g.dq.data(), fq.data()), relative_error(g.dk.data(), fk.data()),
                       relative_error(g.dv.data(), fv.data())});
  }
  report.check("backward_finite_difference", fd_err <= plan.fd_tolerance, fd_err, plan.fd_tolerance);
  log << "bsa-check: " << plan.cases << " cases, " << nk << " key blocks, selected fraction "
      << format_real(fraction) << "\n";
}

Execute prepare(const Config& cfg) {
  BsaPlan plan;
  plan.grid = GridSpec{cfg.count("frames"), cfg.count("height"), cfg.count("width"), cfg.count("head_dim"),
                       cfg.count("heads"),  cfg.count("batch")};
  plan.blocks = BlockSpec{cfg.count("block_t"), cfg.count("block_h"), cfg.count("block_w")};
  const auto& mode = cfg.text("mode");
  if (mode != "topr" && mode != "cdf") throw ConfigError("mode must be 'topr' or 'cdf', got '" + mode + "'");
  plan.cdf = mode == "cdf";
  plan.r = cfg.count("r");
  plan.p = cfg.real("p");
  plan.cases = cfg.count("cases");
  plan.fd_cases = cfg.count("fd_cases");
  plan.seed = cfg.seed("seed");
  if (plan.grid.tokens() == 0 || plan.grid.head_dim == 0 || plan.grid.heads == 0 || plan.grid.batch == 0)
    throw Error(ErrorKind::InvalidShape, "grid extents, head_dim, heads and batch must be positive");
  if (plan.cases == 0) throw ConfigError("cases must be at least 1");
  const std::size_t nk = BlockLayout(plan.grid, plan.blocks).block_count();
  if (plan.cdf)
    SF_CHECK(plan.p > 0.0 && plan.p <= 1.0, ErrorKind::ThresholdOutOfRange, "p must lie in (0, 1]");
  else
    SF_CHECK(plan.r >= 1 && plan.r <= nk, ErrorKind::RankOutOfRange,
             "r = " + std::to_string(plan.r) + " outside [1, N_k = " + std::to_string(nk) + "]");
  return [plan](Report& report, std::ostream& log) { execute(plan, report, log); };
}

}  // namespace

Command bsa_check_command() {
  return Command{"bsa-check",
                 "block-sparse attention equivalence, mask oracle, backward and selection checks",
                 {{"frames", "8"},
                  {"height", "16"},
                  {"width", "16"},
                  {"head_dim", "8"},
                  {"heads", "1"},
                  {"batch", "1"},
                  {"block_t", "4"},
                  {"block_h", "4"},
                  {"block_w", "4"},
                  {"mode", "topr"},
                  {"r", "2"},
                  {"p", "0.9"},
                  {"cases", "3"},
                  {"fd_cases", "3"},
                  {"seed", "0"}},
                 prepare};
}

}  // namespace sparseflow::cli
