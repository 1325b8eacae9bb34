#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "skipxl/analysis.hpp"
#include "skipxl/errors.hpp"
#include "skipxl/trainer.hpp"

using namespace skipxl;

namespace {

// Per-head PPL deltas for eight layers, two rows each (reference model, then
// cross-head model), with the rounded spreads that accompany them.
struct Row {
  std::vector<double> deltas;
  double stddev;
};

const std::vector<Row> kRows = {
    {{-0.01, -0.01, -0.01, 0.77, -0.01, -0.01, -0.01, -0.01}, 0.28},
    {{0.00, -0.02, -0.01, -0.01, 0.0, -0.01, -0.02, -0.01}, 0.008},
    {{1.61, 1.9, 0.13, 0.19, 0.03, 0.12, 0.13, 0.03}, 0.77},
    {{0.47, 0.16, 0.56, 0.62, 0.21, 0.26, 0.16, 1.9}, 0.58},
    {{0.12, 1.31, 0.11, 0.25, 1.20, 0.13, 0.49, 0.13}, 0.50},
    {{0.09, 0.29, 0.11, 0.06, 0.12, 0.60, 0.20, 0.15}, 0.18},
    {{0.92, 0.08, 0.17, 0.41, 0.63, 0.30, 0.05, 0.17}, 0.30},
    {{0.15, 0.55, 0.16, 0.09, 0.13, 0.08, 0.21, 0.18}, 0.15},
    {{0.56, 0.46, 0.39, 0.34, 0.23, 0.32, 0.53, 0.99}, 0.23},
    {{0.15, 0.16, 0.18, 0.21, 0.09, 0.15, 0.16, 0.29}, 0.06},
    {{0.19, 0.47, 0.31, 0.36, 0.61, 0.46, 0.51, 0.24}, 0.14},
    {{0.17, 0.17, 0.15, 0.07, 0.31, 0.17, 0.27, 0.19}, 0.07},
    {{0.46, 0.73, 0.34, 0.57, 0.49, 0.44, 0.37, 0.30}, 0.14},
    {{0.27, 0.23, 0.13, 0.20, 0.28, 0.15, 0.23, 0.16}, 0.06},
    {{0.11, 0.22, 0.17, 0.53, 0.22, 0.42, 0.09, 0.25}, 0.15},
    {{0.04, 0.36, 0.13, 0.05, 0.08, 0.16, 0.14, 0.10}, 0.10},
};

RunConfig audit_config() {
  RunConfig c = default_run_config();
  c.model.n_layers = 4;
  c.model.d_model = 8;
  c.model.d_inner = 16;
  c.model.n_heads = 2;
  c.model.d_head = 4;
  c.model.mem_len = 6;
  c.model.block_size = 4;
  c.model.beta = 0.0;
  c.train.eval_context = 12;
  c.train.eval_block = 4;
  c.train.schedule = SkipSchedule::none();
  return c;
}

std::vector<std::int64_t> cyclic_ids(std::size_t n, std::int64_t v) {
  std::vector<std::int64_t> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = static_cast<std::int64_t>(i) % v;
  return ids;
}

}  // namespace

TEST_CASE("sample standard deviation") {
  const std::vector<double> v{2, 4, 4, 4, 5, 5, 7, 9};
  // sum of squared deviations is 32
  CHECK(std::abs(sample_stddev(v) - std::sqrt(32.0 / 7.0)) < 1e-15);
  CHECK(sample_stddev(std::vector<double>{3, 3}) == 0.0);
  CHECK_THROWS_AS(sample_stddev(std::vector<double>{1}), InputError);
  CHECK(std::abs(pct_stddev_change(0.28, 0.008) + 97.142857142857) < 1e-9);
  CHECK_THROWS_AS(pct_stddev_change(0.0, 1.0), InputError);
}

TEST_CASE("spread of the reference pruning rows") {
  for (const auto& r : kRows) CHECK(std::abs(sample_stddev(r.deltas) - r.stddev) <= 0.005);
  const double first = sample_stddev(kRows[0].deltas);
  CHECK(std::abs(first - 0.28) <= 0.005);
  CHECK(std::abs(pct_stddev_change(0.28, 0.008) - (-97.1)) <= 0.1);
  // percent changes computed from the rounded spreads
  const std::vector<double> pct{-97.1, -24.6, -64, -50, -73.9, -50, -57.1, -33.33};
  for (std::size_t l = 0; l < 8; ++l) {
    const double c = pct_stddev_change(kRows[2 * l].stddev, kRows[2 * l + 1].stddev);
    CHECK(std::abs(c - pct[l]) <= 0.1);
  }
}

TEST_CASE("prune report from deltas") {
  std::vector<std::vector<double>> ref, sch;
  for (std::size_t l = 0; l < 8; ++l) {
    ref.push_back(kRows[2 * l].deltas);
    sch.push_back(kRows[2 * l + 1].deltas);
  }
  PruneReport a = PruneReport::from_deltas(20.0, ref);
  PruneReport b = PruneReport::from_deltas(19.5, sch);
  b.attach_reference(a);
  REQUIRE(b.pct_change.has_value());
  CHECK(b.n_layers() == 8);
  CHECK(b.n_heads() == 8);
  for (std::size_t l = 0; l < 8; ++l)
    CHECK((*b.pct_change)[l] == pct_stddev_change(a.stddev[l], b.stddev[l]));

  const std::string csv = b.to_csv();
  CHECK(csv.substr(0, csv.find('\n')) ==
        "layer,baseline_ppl,H1,H2,H3,H4,H5,H6,H7,H8,stddev,pct_stddev_change");
  const PruneReport back = PruneReport::parse_csv(csv);
  CHECK(back.baseline_ppl == b.baseline_ppl);
  CHECK(back.delta_ppl == b.delta_ppl);
  CHECK(back.stddev == b.stddev);
  REQUIRE(back.pct_change.has_value());
  CHECK(*back.pct_change == *b.pct_change);
  const PruneReport plain = PruneReport::parse_csv(a.to_csv());
  CHECK_FALSE(plain.pct_change.has_value());
  CHECK_FALSE(b.to_table().empty());

  PruneReport wrong = PruneReport::from_deltas(1.0, {{0.1, 0.2}});
  CHECK_THROWS_AS(b.attach_reference(wrong), InputError);
  CHECK_THROWS_AS(PruneReport::parse_csv("nonsense\n"), IoError);
}

TEST_CASE("prune experiment") {
  RunConfig c = audit_config();
  c.model.vocab_size = 7;
  Rng rng(8);
  const Model m = Model::initialize(c.model, rng);
  const auto ids = cyclic_ids(41, 7);
  const PruneReport r = run_prune_experiment(m, ids, 8, 4);
  CHECK(r.baseline_ppl == evaluate(m, ids, 8, 4).ppl);
  for (std::size_t l = 0; l < 4; ++l)
    for (std::size_t h = 0; h < 2; ++h) {
      auto prune = all_heads(c.model);
      prune[l][h] = false;
      CHECK(r.delta_ppl[l][h] == evaluate(m, ids, 8, 4, &prune).ppl - r.baseline_ppl);
    }
  SUBCASE("order invariance") {
    std::vector<HeadRef> order;
    for (std::size_t l = 4; l-- > 0;)
      for (std::size_t h = 2; h-- > 0;) order.push_back({l, h});
    const PruneReport s = run_prune_experiment(m, ids, 8, 4, nullptr, &order);
    CHECK(s.delta_ppl == r.delta_ppl);
    order.pop_back();
    CHECK_THROWS_AS(run_prune_experiment(m, ids, 8, 4, nullptr, &order), InputError);
  }
  SUBCASE("a head with zero output weights changes nothing") {
    Model z = m.clone();
    // head 1 of layer 3 owns columns d_head..2 d_head of w_out
    Tensor w = z.layers()[2].attn.w_out;
    const std::size_t cols = w.dim(1);
    for (std::size_t row = 0; row < w.dim(0); ++row)
      for (std::size_t col = 4; col < 8; ++col) w.mutable_values()[row * cols + col] = 0.0;
    const PruneReport s = run_prune_experiment(z, ids, 8, 4);
    CHECK(s.delta_ppl[2][1] == 0.0);
  }
  SUBCASE("reference attaches percent change") {
    const PruneReport s = run_prune_experiment(m, ids, 8, 4, &r);
    REQUIRE(s.pct_change.has_value());
    CHECK((*s.pct_change)[0] == 0.0);
  }
  SUBCASE("single-head layers are refused") {
    RunConfig one = c;
    one.model.n_heads = 1;
    one.model.d_head = 8;
    Rng r2(1);
    const Model m1 = Model::initialize(one.model, r2);
    CHECK_THROWS_AS(run_prune_experiment(m1, ids, 8, 4), ConfigError);
  }
}

TEST_CASE("offset histogram") {
  OffsetHistogram h;
  CHECK(h.max_offset() == -1);
  h.add(relative_offsets(consecutive_tags(6, 3), {3, 4, 5, 6, 7, 8}));
  CHECK(h.pairs() == 18);
  CHECK(h.masked == 3);
  CHECK(h.total() == 15);
  CHECK(h.max_offset() == 5);
  CHECK(h.min_offset() == 0);
  CHECK(h.counts.at(3) == 3);
  CHECK(h.mass_above(3) == 3);
  OffsetHistogram g = h;
  g.merge(h);
  CHECK(g.pairs() == 36);
  CHECK(g.counts.at(5) == 2);
}

TEST_CASE("walkthrough trace: skipping the middle layer once") {
  ModelConfig mc = audit_config().model;
  mc.n_layers = 3;
  mc.mem_len = 3;
  mc.block_size = 3;
  mc.vocab_size = 26;
  Rng rng(2);
  const Model m = Model::initialize(mc, rng);
  const auto ids = cyclic_ids(9, 26);  // A..I
  const auto trace = audit_trace(m, ids, {{false, false, false}, {false, true, false}, {false, false, false}});
  REQUIRE(trace.size() == 3);
  CHECK(trace[2][0].max_offset() == 5);
  CHECK(trace[2][1].max_offset() == 8);
  CHECK(trace[2][2].max_offset() == 5);
  // the skipped layer records nothing on its step
  CHECK(trace[1][1].pairs() == 0);
  CHECK(trace[0][0].max_offset() == 2);
}

TEST_CASE("position audit") {
  const auto ids = cyclic_ids(400, 9);
  SUBCASE("no skipping stays within M+L-1") {
    const RunConfig c = audit_config();
    const PositionAudit a = position_audit(c, ids, 30);
    const std::int64_t bound = static_cast<std::int64_t>(c.model.mem_len + c.model.block_size - 1);
    for (std::size_t l = 0; l < 4; ++l) {
      CHECK(a.phase1[l].max_offset() == bound);
      CHECK(a.phase2[l].max_offset() == bound);
      CHECK(a.eval[l].max_offset() <= static_cast<std::int64_t>(c.train.eval_context - 1));
      // every recorded matrix is L x (mem + L)
      CHECK(a.phase1[l].pairs() % c.model.block_size == 0);
    }
  }
  SUBCASE("linear schedule reaches further only where it skips") {
    RunConfig c = audit_config();
    c.train.schedule = SkipSchedule::linear();
    const PositionAudit lin = position_audit(c, ids, 60);
    const PositionAudit none = position_audit(audit_config(), ids, 60);
    const std::int64_t bound = static_cast<std::int64_t>(c.model.mem_len + c.model.block_size - 1);
    // first layer never skips
    CHECK(lin.phase1[0].counts == none.phase1[0].counts);
    CHECK(lin.phase1[0].masked == none.phase1[0].masked);
    std::uint64_t beyond = 0;
    for (std::size_t l = 1; l < 3; ++l) beyond += lin.phase1[l].mass_above(bound);
    CHECK(beyond > 0);
    CHECK(lin.phase1[3].max_offset() <= bound);
    for (std::size_t l = 0; l < 4; ++l) {
      CHECK(lin.phase2[l].max_offset() <= bound + static_cast<std::int64_t>(c.model.block_size) * 60);
      CHECK(lin.eval[l].max_offset() <= static_cast<std::int64_t>(c.train.eval_context - 1));
    }
    const std::string csv = lin.to_csv();
    CHECK(csv.substr(0, csv.find('\n')) == "split,layer,offset,count");
    CHECK(csv.find("phase1,2,,") != std::string::npos);
  }
}

TEST_CASE("expected context report") {
  Rng rng(11);
  const auto r = expected_context_report(SkipSchedule::linear(), 12, 512, 20000, rng);
  CHECK(r.approx == 2304.0);
  CHECK(r.linear_relation_holds());
  CHECK(r.simulation_agrees());
  CHECK(r.exact_rational == Rational(512 * 11 * 10, 24));
  CHECK(r.p_skip.size() == 12);
  CHECK(r.p_skip.front() == 0.0);
  CHECK(r.p_skip.back() == 0.0);
  const std::string csv = r.to_csv();
  CHECK(csv.substr(0, csv.find('\n')) == "quantity,layer,value");
  const auto none = expected_context_report(SkipSchedule::none(), 6, 64, 1000, rng);
  CHECK(none.sim_mean == 0.0);
  CHECK(none.exact == 0.0);
}

TEST_CASE("gradient check command") {
  const GradCheckSummary s = grad_check_command(gradcheck_model_config(), 3);
  CHECK(s.passed);
  REQUIRE(s.regimes.size() == 4);
  for (const auto& reg : s.regimes) {
    INFO(reg.name);
    CHECK(reg.passed);
    CHECK(reg.report.max_rel_error < 1e-5);
    CHECK(reg.nonzero_skipped.empty());
  }
  const auto& skip = s.regimes[2];
  CHECK(skip.skip_mask == SkipMask{true, false});
  const auto* q0 = skip.report.find("layers.0.attn.w_q");
  REQUIRE(q0);
  CHECK(q0->max_abs_analytic == 0.0);
  CHECK(q0->max_abs_numeric == 0.0);
  const auto& cross = s.regimes[1];
  CHECK(cross.assignments[0].cross_active);
  const auto* k1 = cross.report.find("layers.1.attn.w_key_content");
  REQUIRE(k1);
  CHECK(k1->max_abs_analytic > 0.0);
  const std::string csv = s.to_csv();
  CHECK(csv.substr(0, csv.find('\n')) == "regime,parameter,max_rel_error,max_abs_analytic,max_abs_numeric,passed");
}
