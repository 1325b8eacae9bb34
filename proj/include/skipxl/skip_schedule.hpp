#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "skipxl/rng.hpp"

namespace skipxl {

using Rational = boost::multiprecision::cpp_rational;

enum class SkipVariant { None, Linear, Uniform, ProtectFirst, ProtectLast, ProtectBoth };

struct SkipSchedule {
  SkipVariant variant = SkipVariant::None;
  double p = 0.0;  // unused by None and Linear

  static SkipSchedule none() { return {}; }
  static SkipSchedule linear() { return {SkipVariant::Linear, 0.0}; }
  static SkipSchedule uniform(double p) { return {SkipVariant::Uniform, p}; }
  static SkipSchedule protect_first(double p) { return {SkipVariant::ProtectFirst, p}; }
  static SkipSchedule protect_last(double p) { return {SkipVariant::ProtectLast, p}; }
  static SkipSchedule protect_both(double p) { return {SkipVariant::ProtectBoth, p}; }

  // Names: none, linear, uniform, protect_first, protect_last, protect_both.
  static SkipSchedule parse(const std::string& name, double p);
  std::string name() const;
  void validate() const;
};

// Whether each layer is skipped this step. Index 0 is layer 1.
using SkipMask = std::vector<bool>;

// Skip probability of layer i (1-based) in an n_layers stack.
double p_skip(const SkipSchedule& schedule, std::size_t i, std::size_t n_layers);

// Same value as an exact rational; p is taken at its exact binary value.
Rational p_skip_exact(const SkipSchedule& schedule, std::size_t i, std::size_t n_layers);

enum class Phase { SkipRetain, Vanilla };

std::string phase_name(Phase phase);
Phase parse_phase(const std::string& name);

// One independent Bernoulli(p_skip(i)) per layer, one uniform draw per layer.
SkipMask sample_skip_mask(const SkipSchedule& schedule, std::size_t n_layers, Rng& rng);

// Vanilla phase returns all-false without touching the generator.
SkipMask sample_skip_mask(const SkipSchedule& schedule, std::size_t n_layers, Rng& rng,
                          Phase phase);

// sum_i p_skip(i) * 2M.
double expected_context_exact(const SkipSchedule& schedule, std::size_t n_layers,
                              std::size_t mem_len);
Rational expected_context_exact_rational(const SkipSchedule& schedule, std::size_t n_layers,
                                         std::size_t mem_len);

// M (N - 3) / 2, the closed-form approximation for the linear schedule.
double expected_context_approx(std::size_t n_layers, std::size_t mem_len);
Rational expected_context_approx_rational(std::size_t n_layers, std::size_t mem_len);

// Switches SkipRetain -> Vanilla once the best evaluation PPL has improved by
// less than `delta` over the trailing `window` steps. The comparison point is
// the best PPL recorded at or before (step - window); no transition fires
// until the phase has run for at least `window` steps.
class PhaseController {
 public:
  struct Record {
    std::int64_t step;
    double best_ppl;
  };

  PhaseController() = default;
  PhaseController(std::int64_t window, double delta, std::int64_t start_step = 0);

  // Returns true when this call performed the transition.
  bool observe(double eval_ppl, std::int64_t step);

  Phase phase() const { return phase_; }
  std::optional<std::int64_t> transition_step() const { return transition_step_; }
  std::int64_t window() const { return window_; }
  double delta() const { return delta_; }
  std::int64_t start_step() const { return start_step_; }
  const std::vector<Record>& history() const { return history_; }

  // Restores full state (checkpoint resume).
  void restore(Phase phase, std::optional<std::int64_t> transition_step,
               std::vector<Record> history);

 private:
  std::int64_t window_ = 64000;
  double delta_ = 0.2;
  std::int64_t start_step_ = 0;
  Phase phase_ = Phase::SkipRetain;
  std::optional<std::int64_t> transition_step_;
  std::vector<Record> history_;
};

}  // namespace skipxl
