#include "skipxl/optim.hpp"

#include <cmath>
#include <numbers>

#include "skipxl/errors.hpp"

namespace skipxl {

double cosine_lr(std::int64_t step, double base_lr, std::int64_t max_iters) {
  if (max_iters <= 0) throw ConfigError("cosine_lr: max_iters must be positive");
  if (step < 0) throw InputError("cosine_lr: negative step");
  const double progress =
      static_cast<double>(std::min(step, max_iters)) / static_cast<double>(max_iters);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

AdamState AdamState::zeros_like(const std::vector<NamedTensor>& params) {
  AdamState s;
  for (const auto& p : params) {
    s.m.emplace_back(p.tensor.numel(), 0.0);
    s.v.emplace_back(p.tensor.numel(), 0.0);
  }
  return s;
}

void adam_update(const std::vector<NamedTensor>& params, AdamState& state, double lr,
                 const AdamConfig& config) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw DimensionError("adam_update: optimizer state does not match parameter list");
  }
  state.t += 1;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor t = params[k].tensor;
    auto values = t.mutable_values();
    auto& m = state.m[k];
    auto& v = state.v[k];
    if (m.size() != values.size() || v.size() != values.size()) {
      throw DimensionError("adam_update: state shape mismatch for '" + params[k].name + "'");
    }
    const auto grad = t.grad();
    const bool has = !grad.empty();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = has ? grad[i] : 0.0;
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g;
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      values[i] -= lr * m_hat / (std::sqrt(v_hat) + config.eps);
    }
  }
}

double clip_grad_norm(const std::vector<NamedTensor>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params)
    for (double g : p.tensor.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (const auto& p : params) {
      Tensor t = p.tensor;
      if (!t.has_grad()) continue;
      for (double& g : t.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

}  // namespace skipxl
