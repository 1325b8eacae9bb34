#pragma once

#include <functional>
#include <string>
#include <vector>

#include "skipxl/tensor.hpp"

namespace skipxl {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct GradCheckEntry {
  std::string name;
  // max_i |analytic_i - numeric_i| / max(max_i |analytic_i|, max_i |numeric_i|),
  // defined as 0 when both gradients vanish identically.
  double max_rel_error = 0.0;
  double max_abs_analytic = 0.0;
  double max_abs_numeric = 0.0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  bool passed = true;

  const GradCheckEntry* find(const std::string& name) const;
};

// Central-difference check of d loss_fn / d params. loss_fn must rebuild the
// graph from the current parameter values on each call and be deterministic;
// a second evaluation at the unperturbed point that differs bitwise aborts the
// check with RunAborted.
GradCheckReport finite_diff_check(const std::function<Tensor()>& loss_fn,
                                  const std::vector<NamedTensor>& params, double step = 1e-5,
                                  double tol = 1e-5);

}  // namespace skipxl
