#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "skipxl/config.hpp"
#include "skipxl/gradcheck.hpp"
#include "skipxl/model.hpp"
#include "skipxl/relpos.hpp"
#include "skipxl/rng.hpp"
#include "skipxl/skip_schedule.hpp"

namespace skipxl {

// n-1 denominator. Needs at least two values.
double sample_stddev(std::span<const double> values);

// 100 (sigma_new - sigma_ref) / sigma_ref.
double pct_stddev_change(double sigma_ref, double sigma_new);

// ---- head pruning ----------------------------------------------------------

struct PruneReport {
  double baseline_ppl = 0.0;
  std::vector<std::vector<double>> delta_ppl;  // [layer][head]
  std::vector<double> stddev;                  // per layer
  std::optional<std::vector<double>> pct_change;

  std::size_t n_layers() const { return delta_ppl.size(); }
  std::size_t n_heads() const { return delta_ppl.empty() ? 0 : delta_ppl[0].size(); }

  // Fills stddev from delta_ppl.
  static PruneReport from_deltas(double baseline_ppl, std::vector<std::vector<double>> delta_ppl);
  void attach_reference(const PruneReport& reference);

  // Header: layer,baseline_ppl,H1..Hn,stddev,pct_stddev_change (layers 1-based).
  std::string to_csv() const;
  std::string to_table() const;
  static PruneReport parse_csv(const std::string& text);
};

using HeadRef = std::pair<std::size_t, std::size_t>;  // (layer, head), 0-based

// Baseline evaluation, then one evaluation per (layer, head) with only that
// head zeroed. `order` permutes the sweep; results are stored by position.
PruneReport run_prune_experiment(const Model& model, std::span<const std::int64_t> ids,
                                 std::size_t eval_context, std::size_t eval_block,
                                 const PruneReport* reference = nullptr,
                                 const std::vector<HeadRef>* order = nullptr);

// ---- relative position audit ----------------------------------------------

// Visible (query, key) pairs binned by offset; masked future pairs counted
// separately so that total() + masked == rows * cols of every recorded matrix.
struct OffsetHistogram {
  std::map<std::int64_t, std::uint64_t> counts;
  std::uint64_t masked = 0;

  void add(const OffsetMatrix& offsets);
  std::uint64_t total() const;
  std::uint64_t pairs() const { return total() + masked; }
  std::int64_t max_offset() const;  // -1 when empty
  std::int64_t min_offset() const;
  std::uint64_t mass_above(std::int64_t bound) const;
  void merge(const OffsetHistogram& other);
};

struct PositionAudit {
  std::vector<OffsetHistogram> phase1;  // per layer
  std::vector<OffsetHistogram> phase2;
  std::vector<OffsetHistogram> eval;

  // split,layer,offset,count (layer 1-based), then a masked row per split/layer
  // with an empty offset.
  std::string to_csv() const;
  std::string to_table() const;
};

// Forward passes only (no parameter updates): `steps` Phase-1 steps with masks
// drawn from the schedule, `steps` Phase-2 steps, then evaluation over `ids`
// with the configured eval context and block. Uses a single stream.
PositionAudit position_audit(const RunConfig& config, std::span<const std::int64_t> ids,
                             std::int64_t steps);

// One histogram per layer for every step, running the given masks in order
// from empty memory over consecutive blocks of `ids`.
std::vector<std::vector<OffsetHistogram>> audit_trace(const Model& model,
                                                      std::span<const std::int64_t> ids,
                                                      const std::vector<SkipMask>& masks);

// ---- expected context -------------------------------------------------------

struct ExpectedContextReport {
  SkipSchedule schedule;
  std::size_t n_layers = 0;
  std::size_t mem_len = 0;
  std::vector<double> p_skip;
  Rational exact_rational;
  Rational approx_rational;
  double exact = 0.0;
  double approx = 0.0;
  std::size_t samples = 0;
  double sim_mean = 0.0;
  double sim_stderr = 0.0;

  // exact - approx == M / N, only meaningful for the linear schedule.
  bool linear_relation_holds() const;
  bool simulation_agrees() const;  // |sim - exact| <= 3 stderr

  std::string to_csv() const;
  std::string to_table() const;
};

// Each simulated sample is 2M times the number of layers skipped by one mask.
ExpectedContextReport expected_context_report(const SkipSchedule& schedule, std::size_t n_layers,
                                              std::size_t mem_len, std::size_t samples,
                                              Rng& rng);

// ---- gradient check ----------------------------------------------------------

// N=2, d=8, two heads of 4, L=M=4, V=11, no dropout, init_std 0.3.
ModelConfig gradcheck_model_config();

struct GradCheckRegime {
  std::string name;
  SkipMask skip_mask;
  std::vector<HeadAssignment> assignments;
  GradCheckReport report;
  // Parameters of skipped layers must show exactly zero gradients both ways.
  std::vector<std::string> nonzero_skipped;
  bool passed = false;
};

struct GradCheckSummary {
  std::vector<GradCheckRegime> regimes;
  bool passed = false;

  std::string to_csv() const;
  std::string to_table() const;
};

// Regimes: baseline, sch_cross (every layer pairs head m with n-1-m), skip
// (layer 1 skipped), sch_skip (layer 1 skipped, layer 2 crossed). Memory comes
// from one prior forward pass and is held fixed while probing.
GradCheckSummary grad_check_command(const ModelConfig& config, std::uint64_t seed,
                                    double step = 1e-5, double tol = 1e-5);

}  // namespace skipxl
