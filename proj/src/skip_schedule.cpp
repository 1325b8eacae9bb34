#include "skipxl/skip_schedule.hpp"

#include <cmath>

#include "skipxl/errors.hpp"

namespace skipxl {

namespace {

// Exact rational value of a finite double.
Rational exact_rational(double x) {
  if (x == 0.0) return Rational(0);
  int exponent = 0;
  const double mantissa = std::frexp(x, &exponent);  // x = mantissa * 2^exponent
  const auto scaled = static_cast<std::int64_t>(std::ldexp(mantissa, 53));
  exponent -= 53;
  boost::multiprecision::cpp_int num = scaled;
  boost::multiprecision::cpp_int den = 1;
  if (exponent >= 0) {
    num <<= exponent;
  } else {
    den <<= -exponent;
  }
  return Rational(num, den);
}

void check_layer(std::size_t i, std::size_t n_layers) {
  if (n_layers < 1 || i < 1 || i > n_layers) {
    throw InputError("p_skip: layer index " + std::to_string(i) + " outside 1.." +
                     std::to_string(n_layers));
  }
}

}  // namespace

SkipSchedule SkipSchedule::parse(const std::string& name, double p) {
  SkipSchedule s;
  s.p = p;
  if (name == "none") {
    s.variant = SkipVariant::None;
    s.p = 0.0;
  } else if (name == "linear") {
    s.variant = SkipVariant::Linear;
    s.p = 0.0;
  } else if (name == "uniform") {
    s.variant = SkipVariant::Uniform;
  } else if (name == "protect_first") {
    s.variant = SkipVariant::ProtectFirst;
  } else if (name == "protect_last") {
    s.variant = SkipVariant::ProtectLast;
  } else if (name == "protect_both") {
    s.variant = SkipVariant::ProtectBoth;
  } else {
    throw ConfigError("unknown skip schedule '" + name + "'");
  }
  s.validate();
  return s;
}

std::string SkipSchedule::name() const {
  switch (variant) {
    case SkipVariant::None: return "none";
    case SkipVariant::Linear: return "linear";
    case SkipVariant::Uniform: return "uniform";
    case SkipVariant::ProtectFirst: return "protect_first";
    case SkipVariant::ProtectLast: return "protect_last";
    case SkipVariant::ProtectBoth: return "protect_both";
  }
  return "none";
}

void SkipSchedule::validate() const {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw ConfigError("skip probability must lie in [0, 1], got " + std::to_string(p));
  }
}

double p_skip(const SkipSchedule& schedule, std::size_t i, std::size_t n_layers) {
  check_layer(i, n_layers);
  const bool first = i == 1;
  const bool last = i == n_layers;
  switch (schedule.variant) {
    case SkipVariant::None: return 0.0;
    case SkipVariant::Linear:
      return last ? 0.0 : 0.5 * static_cast<double>(i - 1) / static_cast<double>(n_layers);
    case SkipVariant::Uniform: return schedule.p;
    case SkipVariant::ProtectFirst: return first ? 0.0 : schedule.p;
    case SkipVariant::ProtectLast: return last ? 0.0 : schedule.p;
    case SkipVariant::ProtectBoth: return (first || last) ? 0.0 : schedule.p;
  }
  return 0.0;
}

Rational p_skip_exact(const SkipSchedule& schedule, std::size_t i, std::size_t n_layers) {
  check_layer(i, n_layers);
  if (schedule.variant == SkipVariant::Linear) {
    if (i == n_layers) return Rational(0);
    return Rational(static_cast<long long>(i - 1), static_cast<long long>(2 * n_layers));
  }
  return exact_rational(p_skip(schedule, i, n_layers));
}

std::string phase_name(Phase phase) {
  return phase == Phase::SkipRetain ? "skip_retain" : "vanilla";
}

Phase parse_phase(const std::string& name) {
  if (name == "skip_retain") return Phase::SkipRetain;
  if (name == "vanilla") return Phase::Vanilla;
  throw ConfigError("unknown phase '" + name + "'");
}

SkipMask sample_skip_mask(const SkipSchedule& schedule, std::size_t n_layers, Rng& rng) {
  SkipMask mask(n_layers, false);
  for (std::size_t i = 0; i < n_layers; ++i) {
    const double u = rng.uniform();
    mask[i] = u < p_skip(schedule, i + 1, n_layers);
  }
  return mask;
}

SkipMask sample_skip_mask(const SkipSchedule& schedule, std::size_t n_layers, Rng& rng,
                          Phase phase) {
  if (phase == Phase::Vanilla) return SkipMask(n_layers, false);
  return sample_skip_mask(schedule, n_layers, rng);
}

Rational expected_context_exact_rational(const SkipSchedule& schedule, std::size_t n_layers,
                                         std::size_t mem_len) {
  Rational total(0);
  for (std::size_t i = 1; i <= n_layers; ++i) total += p_skip_exact(schedule, i, n_layers);
  return total * Rational(static_cast<long long>(2 * mem_len));
}

double expected_context_exact(const SkipSchedule& schedule, std::size_t n_layers,
                              std::size_t mem_len) {
  double total = 0.0;
  for (std::size_t i = 1; i <= n_layers; ++i) total += p_skip(schedule, i, n_layers);
  return total * 2.0 * static_cast<double>(mem_len);
}

Rational expected_context_approx_rational(std::size_t n_layers, std::size_t mem_len) {
  if (n_layers < 1) throw InputError("expected_context_approx: need at least one layer");
  return Rational(static_cast<long long>(mem_len)) *
         Rational(static_cast<long long>(n_layers) - 3, 2);
}

double expected_context_approx(std::size_t n_layers, std::size_t mem_len) {
  if (n_layers < 1) throw InputError("expected_context_approx: need at least one layer");
  return static_cast<double>(mem_len) * (static_cast<double>(n_layers) - 3.0) / 2.0;
}

PhaseController::PhaseController(std::int64_t window, double delta, std::int64_t start_step)
    : window_(window), delta_(delta), start_step_(start_step) {
  if (window < 1) throw ConfigError("convergence window must be positive");
  if (!(delta >= 0.0)) throw ConfigError("convergence threshold must be non-negative");
}

bool PhaseController::observe(double eval_ppl, std::int64_t step) {
  if (std::isnan(eval_ppl)) {
    throw RunAborted("phase controller: evaluation PPL is NaN at step " + std::to_string(step));
  }
  if (phase_ == Phase::Vanilla) return false;
  const double best = history_.empty() ? eval_ppl : std::min(history_.back().best_ppl, eval_ppl);
  history_.push_back({step, best});
  if (step - start_step_ < window_) return false;

  const Record* reference = nullptr;
  for (const auto& r : history_) {
    if (r.step <= step - window_) reference = &r;
  }
  if (reference == nullptr) return false;
  const double improvement = reference->best_ppl - best;
  if (improvement < delta_) {
    phase_ = Phase::Vanilla;
    transition_step_ = step;
    return true;
  }
  return false;
}

void PhaseController::restore(Phase phase, std::optional<std::int64_t> transition_step,
                              std::vector<Record> history) {
  phase_ = phase;
  transition_step_ = transition_step;
  history_ = std::move(history);
}

}  // namespace skipxl
