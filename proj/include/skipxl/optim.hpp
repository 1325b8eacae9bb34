#pragma once

#include <cstdint>
#include <vector>

#include "skipxl/gradcheck.hpp"

namespace skipxl {

// lr · 0.5 · (1 + cos(π · min(step, max_iters) / max_iters))
double cosine_lr(std::int64_t step, double base_lr, std::int64_t max_iters);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::int64_t t = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  static AdamState zeros_like(const std::vector<NamedTensor>& params);
};

// Bias-corrected Adam step over params (in order), reading each tensor's grad.
// Parameters without a grad are treated as having a zero gradient.
void adam_update(const std::vector<NamedTensor>& params, AdamState& state, double lr,
                 const AdamConfig& config);

// Scales all grads so their joint L2 norm is at most max_norm. Returns the norm
// before clipping.
double clip_grad_norm(const std::vector<NamedTensor>& params, double max_norm);

}  // namespace skipxl
