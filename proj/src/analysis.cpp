#include "skipxl/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "skipxl/errors.hpp"
#include "skipxl/ops.hpp"
#include "skipxl/trainer.hpp"

namespace skipxl {

double sample_stddev(std::span<const double> values) {
  if (values.size() < 2) throw InputError("sample_stddev: need at least two values");
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / (n - 1.0));
}

double pct_stddev_change(double sigma_ref, double sigma_new) {
  if (sigma_ref == 0.0) throw InputError("pct_stddev_change: reference stddev is zero");
  return 100.0 * (sigma_new - sigma_ref) / sigma_ref;
}

// ---- pruning ----

PruneReport PruneReport::from_deltas(double baseline_ppl,
                                     std::vector<std::vector<double>> delta_ppl) {
  PruneReport r;
  r.baseline_ppl = baseline_ppl;
  r.delta_ppl = std::move(delta_ppl);
  for (const auto& row : r.delta_ppl) {
    if (row.size() != r.delta_ppl.front().size()) throw InputError("ragged prune matrix");
    r.stddev.push_back(sample_stddev(row));
  }
  return r;
}

void PruneReport::attach_reference(const PruneReport& reference) {
  if (reference.stddev.size() != stddev.size()) {
    throw InputError("reference report has " + std::to_string(reference.stddev.size()) +
                     " layers, this one " + std::to_string(stddev.size()));
  }
  std::vector<double> pct;
  for (std::size_t i = 0; i < stddev.size(); ++i)
    pct.push_back(pct_stddev_change(reference.stddev[i], stddev[i]));
  pct_change = std::move(pct);
}

std::string PruneReport::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "layer,baseline_ppl";
  for (std::size_t h = 0; h < n_heads(); ++h) os << ",H" << h + 1;
  os << ",stddev,pct_stddev_change\n";
  for (std::size_t l = 0; l < n_layers(); ++l) {
    os << l + 1 << ',' << baseline_ppl;
    for (double d : delta_ppl[l]) os << ',' << d;
    os << ',' << stddev[l] << ',';
    if (pct_change) os << (*pct_change)[l];
    os << '\n';
  }
  return os.str();
}

std::string PruneReport::to_table() const {
  std::ostringstream os;
  os << std::fixed;
  os << "baseline PPL " << std::setprecision(4) << baseline_ppl << "\n";
  os << std::setw(6) << "Layer";
  for (std::size_t h = 0; h < n_heads(); ++h) os << std::setw(9) << ("H" + std::to_string(h + 1));
  os << std::setw(9) << "stddev";
  if (pct_change) os << std::setw(11) << "% change";
  os << '\n';
  for (std::size_t l = 0; l < n_layers(); ++l) {
    os << std::setw(6) << l + 1 << std::setprecision(2);
    for (double d : delta_ppl[l]) os << std::setw(9) << d;
    os << std::setw(9) << std::setprecision(3) << stddev[l];
    if (pct_change) os << std::setw(11) << std::setprecision(1) << (*pct_change)[l];
    os << '\n';
  }
  return os.str();
}

PruneReport PruneReport::parse_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty prune report");
  std::vector<std::string> header;
  {
    std::istringstream hs(line);
    std::string col;
    while (std::getline(hs, col, ',')) header.push_back(col);
  }
  if (header.size() < 5 || header[0] != "layer" || header[1] != "baseline_ppl" ||
      header[header.size() - 2] != "stddev" || header.back() != "pct_stddev_change") {
    throw IoError("unrecognized prune report header '" + line + "'");
  }
  const std::size_t heads = header.size() - 4;
  double baseline = 0.0;
  std::vector<std::vector<double>> deltas;
  std::vector<double> pct;
  bool all_pct = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::istringstream ls(line);
    std::string col;
    while (std::getline(ls, col, ',')) cols.push_back(col);
    if (cols.size() == header.size() - 1) cols.emplace_back();
    if (cols.size() != header.size()) throw IoError("malformed prune report line '" + line + "'");
    if (std::stoul(cols[0]) != deltas.size() + 1) throw IoError("prune report layers out of order");
    baseline = std::stod(cols[1]);
    std::vector<double> row;
    for (std::size_t h = 0; h < heads; ++h) row.push_back(std::stod(cols[2 + h]));
    deltas.push_back(std::move(row));
    if (cols.back().empty()) all_pct = false;
    else pct.push_back(std::stod(cols.back()));
  }
  if (deltas.empty()) throw IoError("prune report has no layers");
  PruneReport r = from_deltas(baseline, std::move(deltas));
  if (all_pct) r.pct_change = std::move(pct);
  return r;
}

PruneReport run_prune_experiment(const Model& model, std::span<const std::int64_t> ids,
                                 std::size_t eval_context, std::size_t eval_block,
                                 const PruneReport* reference, const std::vector<HeadRef>* order) {
  const ModelConfig& cfg = model.config();
  if (cfg.n_heads < 2) {
    throw ConfigError("run_prune_experiment: layers with a single head cannot be pruned");
  }
  std::vector<HeadRef> sweep;
  if (order) {
    sweep = *order;
  } else {
    for (std::size_t l = 0; l < cfg.n_layers; ++l)
      for (std::size_t h = 0; h < cfg.n_heads; ++h) sweep.emplace_back(l, h);
  }
  {
    std::vector<HeadRef> sorted = sweep;
    std::sort(sorted.begin(), sorted.end());
    bool complete = sorted.size() == cfg.n_layers * cfg.n_heads;
    for (std::size_t k = 0; complete && k < sorted.size(); ++k)
      complete = sorted[k] == HeadRef{k / cfg.n_heads, k % cfg.n_heads};
    if (!complete) throw InputError("run_prune_experiment: order must list every head exactly once");
  }

  const double baseline = evaluate(model, ids, eval_context, eval_block).ppl;
  std::vector<std::vector<double>> deltas(cfg.n_layers, std::vector<double>(cfg.n_heads, 0.0));
  for (const auto& [l, h] : sweep) {
    std::vector<PruneMask> prune = all_heads(cfg);
    prune[l][h] = false;
    deltas[l][h] = evaluate(model, ids, eval_context, eval_block, &prune).ppl - baseline;
  }
  PruneReport report = PruneReport::from_deltas(baseline, std::move(deltas));
  if (reference) report.attach_reference(*reference);
  return report;
}

// ---- position audit ----

void OffsetHistogram::add(const OffsetMatrix& offsets) {
  for (std::int64_t o : offsets.offsets) {
    if (o >= 0)
      ++counts[o];
    else
      ++masked;
  }
}

std::uint64_t OffsetHistogram::total() const {
  std::uint64_t t = 0;
  for (const auto& [o, c] : counts) t += c;
  return t;
}

std::int64_t OffsetHistogram::max_offset() const {
  return counts.empty() ? -1 : counts.rbegin()->first;
}

std::int64_t OffsetHistogram::min_offset() const {
  return counts.empty() ? -1 : counts.begin()->first;
}

std::uint64_t OffsetHistogram::mass_above(std::int64_t bound) const {
  std::uint64_t t = 0;
  for (auto it = counts.upper_bound(bound); it != counts.end(); ++it) t += it->second;
  return t;
}

void OffsetHistogram::merge(const OffsetHistogram& other) {
  for (const auto& [o, c] : other.counts) counts[o] += c;
  masked += other.masked;
}

namespace {

void write_split_csv(std::ostream& os, const char* split, const std::vector<OffsetHistogram>& hs) {
  for (std::size_t l = 0; l < hs.size(); ++l) {
    for (const auto& [o, c] : hs[l].counts) os << split << ',' << l + 1 << ',' << o << ',' << c << '\n';
    os << split << ',' << l + 1 << ",," << hs[l].masked << '\n';
  }
}

void write_split_table(std::ostream& os, const char* split, const std::vector<OffsetHistogram>& hs) {
  for (std::size_t l = 0; l < hs.size(); ++l) {
    os << std::setw(8) << split << std::setw(7) << l + 1 << std::setw(12) << hs[l].total()
       << std::setw(10) << hs[l].min_offset() << std::setw(10) << hs[l].max_offset() << '\n';
  }
}

}  // namespace

std::string PositionAudit::to_csv() const {
  std::ostringstream os;
  os << "split,layer,offset,count\n";
  write_split_csv(os, "phase1", phase1);
  write_split_csv(os, "phase2", phase2);
  write_split_csv(os, "eval", eval);
  return os.str();
}

std::string PositionAudit::to_table() const {
  std::ostringstream os;
  os << std::setw(8) << "split" << std::setw(7) << "layer" << std::setw(12) << "pairs"
     << std::setw(10) << "min" << std::setw(10) << "max" << '\n';
  write_split_table(os, "phase1", phase1);
  write_split_table(os, "phase2", phase2);
  write_split_table(os, "eval", eval);
  return os.str();
}

namespace {

OffsetObserver record_into(std::vector<OffsetHistogram>& hs) {
  return [&hs](std::size_t layer, const OffsetMatrix& m) { hs.at(layer).add(m); };
}

std::span<const std::int64_t> block_at(std::span<const std::int64_t> ids, std::size_t block,
                                       std::size_t k) {
  const std::size_t blocks = ids.size() / block;
  return ids.subspan((k % blocks) * block, block);
}

}  // namespace

PositionAudit position_audit(const RunConfig& config, std::span<const std::int64_t> ids,
                             std::int64_t steps) {
  ModelConfig mc = config.model;
  if (mc.vocab_size == 0) {
    std::int64_t top = 0;
    for (auto id : ids) top = std::max(top, id);
    mc.vocab_size = static_cast<std::size_t>(top) + 1;
  }
  mc.dropout = 0.0;
  const std::size_t block = mc.block_size;
  if (ids.size() < block) throw InputError("position_audit: corpus shorter than one block");

  RngStreams rngs(config.train.seed);
  const Model model = Model::initialize(mc, rngs.init);
  NoGradGuard no_grad;

  PositionAudit audit;
  audit.phase1.resize(mc.n_layers);
  audit.phase2.resize(mc.n_layers);
  audit.eval.resize(mc.n_layers);
  const auto ident = identity_assignments(mc);

  MemoryState memory = MemoryState::empty(mc.n_layers);
  ForwardOptions opts;
  std::size_t k = 0;
  opts.observer = record_into(audit.phase1);
  for (std::int64_t s = 0; s < steps; ++s, ++k) {
    const SkipMask mask = sample_skip_mask(config.train.schedule, mc.n_layers, rngs.skip);
    memory = model_forward(model, block_at(ids, block, k), memory, mask, ident, opts).memory;
  }
  opts.observer = record_into(audit.phase2);
  const SkipMask none(mc.n_layers, false);
  for (std::int64_t s = 0; s < steps; ++s, ++k)
    memory = model_forward(model, block_at(ids, block, k), memory, none, ident, opts).memory;

  const std::size_t eb = config.train.eval_block;
  if (ids.size() >= eb + 1) {
    ForwardOptions eo;
    eo.mem_len = config.train.eval_context - eb;
    eo.observer = record_into(audit.eval);
    MemoryState em = MemoryState::empty(mc.n_layers);
    const std::size_t blocks = (ids.size() - 1) / eb;
    for (std::size_t b = 0; b < blocks; ++b)
      em = model_forward_eval(model, ids.subspan(b * eb, eb), em, eo).memory;
  }
  return audit;
}

std::vector<std::vector<OffsetHistogram>> audit_trace(const Model& model,
                                                      std::span<const std::int64_t> ids,
                                                      const std::vector<SkipMask>& masks) {
  const ModelConfig& mc = model.config();
  const std::size_t block = mc.block_size;
  if (ids.size() < block * masks.size()) throw InputError("audit_trace: corpus too short for trace");
  NoGradGuard no_grad;
  const auto ident = identity_assignments(mc);
  std::vector<std::vector<OffsetHistogram>> out;
  MemoryState memory = MemoryState::empty(mc.n_layers);
  for (std::size_t k = 0; k < masks.size(); ++k) {
    out.emplace_back(mc.n_layers);
    ForwardOptions opts;
    opts.observer = record_into(out.back());
    memory = model_forward(model, ids.subspan(k * block, block), memory, masks[k], ident, opts).memory;
  }
  return out;
}

// ---- expected context ----

bool ExpectedContextReport::linear_relation_holds() const {
  return exact_rational - approx_rational == Rational(mem_len, n_layers);
}

bool ExpectedContextReport::simulation_agrees() const {
  return std::abs(sim_mean - exact) <= 3.0 * sim_stderr;
}

std::string ExpectedContextReport::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "quantity,layer,value\n";
  for (std::size_t i = 0; i < p_skip.size(); ++i) os << "p_skip," << i + 1 << ',' << p_skip[i] << '\n';
  os << "exact,," << exact << '\n';
  os << "approx,," << approx << '\n';
  os << "exact_minus_approx,," << static_cast<double>(exact_rational - approx_rational) << '\n';
  os << "sim_mean,," << sim_mean << '\n';
  os << "sim_stderr,," << sim_stderr << '\n';
  os << "samples,," << samples << '\n';
  return os.str();
}

std::string ExpectedContextReport::to_table() const {
  std::ostringstream os;
  os << "schedule " << schedule.name() << ", N=" << n_layers << ", M=" << mem_len << '\n';
  os << std::setw(6) << "layer" << std::setw(12) << "p_skip" << '\n';
  for (std::size_t i = 0; i < p_skip.size(); ++i)
    os << std::setw(6) << i + 1 << std::setw(12) << std::setprecision(6) << p_skip[i] << '\n';
  os << std::setprecision(10);
  os << "exact      " << exact << "  (" << exact_rational << ")\n";
  os << "approx     " << approx << "  (" << approx_rational << ")\n";
  os << "difference " << exact_rational - approx_rational << '\n';
  os << "simulated  " << sim_mean << " +- " << sim_stderr << " over " << samples << " masks\n";
  return os.str();
}

ExpectedContextReport expected_context_report(const SkipSchedule& schedule, std::size_t n_layers,
                                              std::size_t mem_len, std::size_t samples,
                                              Rng& rng) {
  schedule.validate();
  if (n_layers == 0) throw InputError("expected_context_report: n_layers must be positive");
  ExpectedContextReport r;
  r.schedule = schedule;
  r.n_layers = n_layers;
  r.mem_len = mem_len;
  for (std::size_t i = 1; i <= n_layers; ++i) r.p_skip.push_back(p_skip(schedule, i, n_layers));
  r.exact_rational = expected_context_exact_rational(schedule, n_layers, mem_len);
  r.approx_rational = expected_context_approx_rational(n_layers, mem_len);
  r.exact = expected_context_exact(schedule, n_layers, mem_len);
  r.approx = expected_context_approx(n_layers, mem_len);
  r.samples = samples;
  if (samples == 0) return r;

  // Welford accumulation over per-mask context gains.
  double mean = 0.0, m2 = 0.0;
  for (std::size_t s = 0; s < samples; ++s) {
    const SkipMask mask = sample_skip_mask(schedule, n_layers, rng);
    const double x =
        2.0 * static_cast<double>(mem_len) * static_cast<double>(std::count(mask.begin(), mask.end(), true));
    const double d = x - mean;
    mean += d / static_cast<double>(s + 1);
    m2 += d * (x - mean);
  }
  r.sim_mean = mean;
  r.sim_stderr = samples > 1 ? std::sqrt(m2 / static_cast<double>(samples - 1) / static_cast<double>(samples)) : 0.0;
  return r;
}

// ---- gradient check ----

ModelConfig gradcheck_model_config() {
  ModelConfig c;
  c.n_layers = 2;
  c.d_model = 8;
  c.d_inner = 16;
  c.n_heads = 2;
  c.d_head = 4;
  c.mem_len = 4;
  c.block_size = 4;
  c.vocab_size = 11;
  c.dropout = 0.0;
  c.beta = 0.0;
  c.init_std = 0.3;
  return c;
}

namespace {

HeadAssignment reversed(std::size_t n_heads) {
  HeadAssignment a;
  for (std::size_t m = 0; m < n_heads; ++m) a.kv_head.push_back(n_heads - 1 - m);
  a.cross_active = true;
  return a;
}

}  // namespace

std::string GradCheckSummary::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "regime,parameter,max_rel_error,max_abs_analytic,max_abs_numeric,passed\n";
  for (const auto& r : regimes)
    for (const auto& e : r.report.entries)
      os << r.name << ',' << e.name << ',' << e.max_rel_error << ',' << e.max_abs_analytic << ','
         << e.max_abs_numeric << ',' << (e.passed ? 1 : 0) << '\n';
  return os.str();
}

std::string GradCheckSummary::to_table() const {
  std::ostringstream os;
  for (const auto& r : regimes) {
    os << std::left << std::setw(10) << r.name << std::right << " max rel err "
       << std::scientific << std::setprecision(3) << r.report.max_rel_error
       << (r.passed ? "  PASS" : "  FAIL") << '\n';
    for (const auto& e : r.report.entries)
      if (!e.passed) os << "    " << e.name << ' ' << e.max_rel_error << '\n';
    for (const auto& n : r.nonzero_skipped) os << "    skipped but nonzero: " << n << '\n';
  }
  os << (passed ? "gradcheck passed\n" : "gradcheck FAILED\n");
  return os.str();
}

GradCheckSummary grad_check_command(const ModelConfig& config, std::uint64_t seed, double step,
                                    double tol) {
  ModelConfig mc = config;
  mc.dropout = 0.0;
  RngStreams rngs(seed);
  const Model model = Model::initialize(mc, rngs.init);
  const std::size_t L = mc.block_size;

  std::vector<std::int64_t> ids(2 * L + 1);
  for (auto& id : ids) id = static_cast<std::int64_t>(rngs.data.below(mc.vocab_size));
  const std::span<const std::int64_t> all(ids);
  const auto prev = all.subspan(0, L);
  const auto inputs = all.subspan(L, L);
  const auto targets = all.subspan(L + 1, L);

  MemoryState memory;
  {
    NoGradGuard no_grad;
    memory = model_forward_eval(model, prev, MemoryState::empty(mc.n_layers)).memory;
  }

  const std::size_t n = mc.n_layers;
  SkipMask none(n, false), skip_first(n, false);
  skip_first[0] = true;
  const auto ident = identity_assignments(mc);
  std::vector<HeadAssignment> cross(n, reversed(mc.n_heads));
  std::vector<HeadAssignment> mixed = ident;
  if (n > 1) mixed[1] = reversed(mc.n_heads);

  GradCheckSummary summary;
  summary.regimes = {{"baseline", none, ident, {}, {}, false},
                     {"sch_cross", none, cross, {}, {}, false},
                     {"skip", skip_first, ident, {}, {}, false},
                     {"sch_skip", skip_first, mixed, {}, {}, false}};
  summary.passed = true;
  const auto params = model.named_parameters();
  for (auto& regime : summary.regimes) {
    auto loss_fn = [&]() {
      ForwardResult out = model_forward(model, inputs, memory, regime.skip_mask, regime.assignments, {});
      return cross_entropy(out.logits, targets);
    };
    regime.report = finite_diff_check(loss_fn, params, step, tol);
    regime.passed = regime.report.passed;
    for (std::size_t l = 0; l < n; ++l) {
      if (!regime.skip_mask[l]) continue;
      for (const auto& p : model.layer_parameters(l)) {
        const GradCheckEntry* e = regime.report.find(p.name);
        if (!e || e->max_abs_analytic != 0.0 || e->max_abs_numeric != 0.0) {
          regime.nonzero_skipped.push_back(p.name);
          regime.passed = false;
        }
      }
    }
    summary.passed = summary.passed && regime.passed;
  }
  return summary;
}

}  // namespace skipxl
