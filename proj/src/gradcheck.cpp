#include "skipxl/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "skipxl/errors.hpp"

namespace skipxl {

const GradCheckEntry* GradCheckReport::find(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return &e;
  return nullptr;
}

GradCheckReport finite_diff_check(const std::function<Tensor()>& loss_fn,
                                  const std::vector<NamedTensor>& params, double step,
                                  double tol) {
  if (!(step > 0.0)) throw InputError("finite_diff_check: step must be positive");

  auto eval = [&] {
    NoGradGuard guard;
    return loss_fn().item();
  };

  const double f0 = eval();
  const double f0_again = eval();
  if (f0 != f0_again || !std::isfinite(f0)) {
    throw RunAborted("finite_diff_check: loss is not deterministic (" + std::to_string(f0) +
                     " vs " + std::to_string(f0_again) + "); fix the RNG/skip/head inputs");
  }

  std::vector<std::vector<double>> analytic;
  {
    for (const auto& p : params) {
      Tensor t = p.tensor;
      t.zero_grad();
    }
    Tensor loss = loss_fn();
    loss.backward();
    for (const auto& p : params) analytic.push_back(p.tensor.grad_or_zero());
  }

  GradCheckReport report;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor t = params[k].tensor;
    auto values = t.mutable_values();
    GradCheckEntry entry;
    entry.name = params[k].name;
    double max_diff = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double original = values[i];
      values[i] = original + step;
      const double plus = eval();
      values[i] = original - step;
      const double minus = eval();
      values[i] = original;
      const double numeric = (plus - minus) / (2.0 * step);
      entry.max_abs_numeric = std::max(entry.max_abs_numeric, std::abs(numeric));
      entry.max_abs_analytic = std::max(entry.max_abs_analytic, std::abs(analytic[k][i]));
      max_diff = std::max(max_diff, std::abs(numeric - analytic[k][i]));
    }
    const double scale = std::max(entry.max_abs_analytic, entry.max_abs_numeric);
    entry.max_rel_error = scale > 0.0 ? max_diff / scale : 0.0;
    entry.passed = entry.max_rel_error < tol;
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.passed = report.passed && entry.passed;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace skipxl
