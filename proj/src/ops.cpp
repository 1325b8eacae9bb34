#include "skipxl/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "skipxl/errors.hpp"

namespace skipxl {

namespace {

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
}

bool wants_grad(const std::shared_ptr<TensorImpl>& t) {
  return t->requires_grad && !t->stop_gradient;
}

// c[m×n] += a[m×k]·b[k×n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m×n] += a[m×k]·b[n×k]ᵀ
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c[i * n + j] += acc;
    }
  }
}

// c[k×n] += a[m×k]ᵀ·b[m×n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions disagree for " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  gemm_nn(a.values().data(), b.values().data(), out.data(), m, k, n);
  return make_result({m, n}, std::move(out), {a, b}, [m, k, n](TensorImpl& self) {
    auto& ta = self.inputs[0];
    auto& tb = self.inputs[1];
    if (wants_grad(ta)) gemm_nt(self.grad.data(), tb->value.data(), ta->grad_buffer().data(), m, n, k);
    if (wants_grad(tb)) gemm_tn(ta->value.data(), self.grad.data(), tb->grad_buffer().data(), m, k, n);
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_nt");
  require_rank2(b, "matmul_nt");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    throw DimensionError("matmul_nt: inner dimensions disagree for " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()) + "ᵀ");
  }
  std::vector<double> out(m * n, 0.0);
  gemm_nt(a.values().data(), b.values().data(), out.data(), m, k, n);
  return make_result({m, n}, std::move(out), {a, b}, [m, k, n](TensorImpl& self) {
    auto& ta = self.inputs[0];
    auto& tb = self.inputs[1];
    // dA = G·B, dB = Gᵀ·A
    if (wants_grad(ta)) gemm_nn(self.grad.data(), tb->value.data(), ta->grad_buffer().data(), m, n, k);
    if (wants_grad(tb)) gemm_tn(self.grad.data(), ta->value.data(), tb->grad_buffer().data(), m, n, k);
  });
}

Tensor transpose(const Tensor& a) {
  require_rank2(a, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  const auto v = a.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = v[i * n + j];
  return make_result({n, m}, std::move(out), {a}, [m, n](TensorImpl& self) {
    auto& ta = self.inputs[0];
    if (!wants_grad(ta)) return;
    auto& g = ta->grad_buffer();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j * m + i];
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](TensorImpl& self) {
    for (auto& in : self.inputs) {
      if (!wants_grad(in)) continue;
      auto& g = in->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](TensorImpl& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      auto& in = self.inputs[k];
      if (!wants_grad(in)) continue;
      const double sign = k == 0 ? 1.0 : -1.0;
      auto& g = in->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign * self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](TensorImpl& self) {
    auto& ta = self.inputs[0];
    auto& tb = self.inputs[1];
    if (wants_grad(ta)) {
      auto& g = ta->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * tb->value[i];
    }
    if (wants_grad(tb)) {
      auto& g = tb->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * ta->value[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (auto& x : out) x *= factor;
  return make_result(a.shape(), std::move(out), {a}, [factor](TensorImpl& self) {
    auto& ta = self.inputs[0];
    if (!wants_grad(ta)) return;
    auto& g = ta->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
  });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  require_rank2(a, "add_row");
  const std::size_t m = a.dim(0), n = a.dim(1);
  if (row.numel() != n) {
    throw DimensionError("add_row: row " + shape_str(row.shape()) + " does not match " +
                         shape_str(a.shape()));
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  const auto rv = row.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += rv[j];
  return make_result(a.shape(), std::move(out), {a, row}, [m, n](TensorImpl& self) {
    auto& ta = self.inputs[0];
    auto& tr = self.inputs[1];
    if (wants_grad(ta)) {
      auto& g = ta->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (wants_grad(tr)) {
      auto& g = tr->grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
    }
  });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double x : a.values()) s += x;
  return make_result({}, {s}, {a}, [](TensorImpl& self) {
    auto& ta = self.inputs[0];
    if (!wants_grad(ta)) return;
    auto& g = ta->grad_buffer();
    for (auto& x : g) x += self.grad[0];
  });
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (auto& x : out) x = x > 0.0 ? x : 0.0;
  return make_result(a.shape(), std::move(out), {a}, [](TensorImpl& self) {
    auto& ta = self.inputs[0];
    if (!wants_grad(ta)) return;
    auto& g = ta->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (ta->value[i] > 0.0) g[i] += self.grad[i];
  });
}

Tensor gelu(const Tensor& a) {
  // Exact erf form: x·Φ(x).
  const auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) {
    out[i] = 0.5 * av[i] * (1.0 + std::erf(av[i] / std::numbers::sqrt2));
  }
  return make_result(a.shape(), std::move(out), {a}, [](TensorImpl& self) {
    auto& ta = self.inputs[0];
    if (!wants_grad(ta)) return;
    auto& g = ta->grad_buffer();
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double x = ta->value[i];
      const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x * x);
      g[i] += self.grad[i] * (cdf + x * pdf);
    }
  });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const Shape& shape = x.shape();
  if (axis >= shape.size()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(shape));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t len = shape[axis];
  const auto xv = x.values();
  std::vector<double> out(xv.size(), 0.0);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      bool nan = false;
      for (std::size_t k = 0; k < len; ++k) {
        const double v = xv[base + k * inner];
        if (std::isnan(v)) nan = true;
        else mx = std::max(mx, v);
      }
      // NaN inputs propagate so that callers see a non-finite loss
      if (nan) mx = std::numeric_limits<double>::quiet_NaN();
      else if (mx == -std::numeric_limits<double>::infinity()) {
        throw InternalError("softmax: fully masked slice");
      }
      double z = 0.0;
      for (std::size_t k = 0; k < len; ++k) {
        const double e = std::exp(xv[base + k * inner] - mx);
        out[base + k * inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < len; ++k) out[base + k * inner] /= z;
    }
  }
  return make_result(shape, std::move(out), {x}, [outer, inner, len](TensorImpl& self) {
    auto& tx = self.inputs[0];
    if (!wants_grad(tx)) return;
    auto& g = tx->grad_buffer();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * len * inner + in;
        double dot = 0.0;
        for (std::size_t k = 0; k < len; ++k) {
          const std::size_t idx = base + k * inner;
          dot += self.grad[idx] * self.value[idx];
        }
        for (std::size_t k = 0; k < len; ++k) {
          const std::size_t idx = base + k * inner;
          g[idx] += self.value[idx] * (self.grad[idx] - dot);
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  require_rank2(x, "layer_norm");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (gain.numel() != n || bias.numel() != n) {
    throw DimensionError("layer_norm: gain " + shape_str(gain.shape()) + " / bias " +
                         shape_str(bias.shape()) + " do not match " + shape_str(x.shape()));
  }
  const auto xv = x.values();
  const auto gv = gain.values();
  const auto bv = bias.values();
  std::vector<double> out(m * n);
  std::vector<double> xhat(m * n);
  std::vector<double> inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += xv[i * n + j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double c = xv[i * n + j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (xv[i * n + j] - mean) * inv_std[i];
      out[i * n + j] = xhat[i * n + j] * gv[j] + bv[j];
    }
  }
  return make_result(x.shape(), std::move(out), {x, gain, bias},
                     [m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](TensorImpl& self) {
    auto& tx = self.inputs[0];
    auto& tg = self.inputs[1];
    auto& tb = self.inputs[2];
    if (wants_grad(tg)) {
      auto& g = tg->grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j] * xhat[i * n + j];
    }
    if (wants_grad(tb)) {
      auto& g = tb->grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
    }
    if (wants_grad(tx)) {
      auto& g = tx->grad_buffer();
      const double inv_n = 1.0 / static_cast<double>(n);
      for (std::size_t i = 0; i < m; ++i) {
        double sum_d = 0.0, sum_dx = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          const double d = self.grad[i * n + j] * tg->value[j];
          sum_d += d;
          sum_dx += d * xhat[i * n + j];
        }
        for (std::size_t j = 0; j < n; ++j) {
          const double d = self.grad[i * n + j] * tg->value[j];
          g[i * n + j] += inv_std[i] * (d - inv_n * sum_d - xhat[i * n + j] * inv_n * sum_dx);
        }
      }
    }
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::int64_t> targets) {
  require_rank2(logits, "cross_entropy");
  const std::size_t t = logits.dim(0), v = logits.dim(1);
  if (targets.size() != t) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) +
                         " targets for logits " + shape_str(logits.shape()));
  }
  if (t == 0) throw InputError("cross_entropy: empty sequence");
  const auto lv = logits.values();
  std::vector<double> probs(t * v);
  double total = 0.0;
  for (std::size_t i = 0; i < t; ++i) {
    const auto target = targets[i];
    if (target < 0 || static_cast<std::size_t>(target) >= v) {
      throw InputError("cross_entropy: target id " + std::to_string(target) +
                       " outside vocabulary of size " + std::to_string(v));
    }
    const double* row = lv.data() + i * v;
    const double mx = *std::max_element(row, row + v);
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) {
      probs[i * v + j] = std::exp(row[j] - mx);
      z += probs[i * v + j];
    }
    for (std::size_t j = 0; j < v; ++j) probs[i * v + j] /= z;
    total += -(row[target] - mx - std::log(z));
  }
  const double mean = total / static_cast<double>(t);
  std::vector<std::int64_t> tgt(targets.begin(), targets.end());
  return make_result({}, {mean}, {logits},
                     [t, v, probs = std::move(probs), tgt = std::move(tgt)](TensorImpl& self) {
    auto& tl = self.inputs[0];
    if (!wants_grad(tl)) return;
    auto& g = tl->grad_buffer();
    const double s = self.grad[0] / static_cast<double>(t);
    for (std::size_t i = 0; i < t; ++i) {
      for (std::size_t j = 0; j < v; ++j) g[i * v + j] += s * probs[i * v + j];
      g[i * v + static_cast<std::size_t>(tgt[i])] -= s;
    }
  });
}

Tensor embedding(const Tensor& table, std::span<const std::int64_t> ids) {
  require_rank2(table, "embedding");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  std::vector<double> out(ids.size() * d);
  const auto tv = table.values();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw InputError("embedding: token id " + std::to_string(ids[i]) +
                       " outside vocabulary of size " + std::to_string(vocab));
    }
    std::copy_n(tv.data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
  }
  std::vector<std::int64_t> idx(ids.begin(), ids.end());
  return make_result({ids.size(), d}, std::move(out), {table},
                     [d, idx = std::move(idx)](TensorImpl& self) {
    auto& tt = self.inputs[0];
    if (!wants_grad(tt)) return;
    auto& g = tt->grad_buffer();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const std::size_t r = static_cast<std::size_t>(idx[i]);
      for (std::size_t j = 0; j < d; ++j) g[r * d + j] += self.grad[i * d + j];
    }
  });
}

Tensor concat_rows(const Tensor& top, const Tensor& bottom) {
  require_rank2(top, "concat_rows");
  require_rank2(bottom, "concat_rows");
  if (top.dim(1) != bottom.dim(1)) {
    throw DimensionError("concat_rows: column mismatch " + shape_str(top.shape()) + " vs " +
                         shape_str(bottom.shape()));
  }
  const std::size_t split = top.numel();
  std::vector<double> out;
  out.reserve(top.numel() + bottom.numel());
  out.insert(out.end(), top.values().begin(), top.values().end());
  out.insert(out.end(), bottom.values().begin(), bottom.values().end());
  return make_result({top.dim(0) + bottom.dim(0), top.dim(1)}, std::move(out), {top, bottom},
                     [split](TensorImpl& self) {
    auto& ta = self.inputs[0];
    auto& tb = self.inputs[1];
    if (wants_grad(ta)) {
      auto& g = ta->grad_buffer();
      for (std::size_t i = 0; i < split; ++i) g[i] += self.grad[i];
    }
    if (wants_grad(tb)) {
      auto& g = tb->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[split + i];
    }
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t m = parts.front().dim(0);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_rank2(p, "concat_cols");
    if (p.dim(0) != m) {
      throw DimensionError("concat_cols: row mismatch " + shape_str(parts.front().shape()) +
                           " vs " + shape_str(p.shape()));
    }
    widths.push_back(p.dim(1));
    total += p.dim(1);
  }
  std::vector<double> out(m * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto v = parts[k].values();
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(v.data() + i * widths[k], widths[k], out.data() + i * total + offset);
    offset += widths[k];
  }
  return make_result({m, total}, std::move(out), parts,
                     [m, total, widths = std::move(widths)](TensorImpl& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      auto& in = self.inputs[k];
      if (wants_grad(in)) {
        auto& g = in->grad_buffer();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < widths[k]; ++j)
            g[i * widths[k] + j] += self.grad[i * total + off + j];
      }
      off += widths[k];
    }
  });
}

Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count) {
  require_rank2(a, "slice_cols");
  const std::size_t m = a.dim(0), n = a.dim(1);
  if (start + count > n) {
    throw DimensionError("slice_cols: columns [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") outside " + shape_str(a.shape()));
  }
  std::vector<double> out(m * count);
  const auto v = a.values();
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n(v.data() + i * n + start, count, out.data() + i * count);
  return make_result({m, count}, std::move(out), {a}, [m, n, start, count](TensorImpl& self) {
    auto& ta = self.inputs[0];
    if (!wants_grad(ta)) return;
    auto& g = ta->grad_buffer();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < count; ++j) g[i * n + start + j] += self.grad[i * count + j];
  });
}

Tensor gather_cols(const Tensor& src, std::span<const std::int64_t> index, std::size_t cols) {
  require_rank2(src, "gather_cols");
  const std::size_t m = src.dim(0), p = src.dim(1);
  if (index.size() != m * cols) {
    throw DimensionError("gather_cols: index of size " + std::to_string(index.size()) +
                         " for " + std::to_string(m) + " rows x " + std::to_string(cols) + " cols");
  }
  const auto sv = src.values();
  std::vector<double> out(m * cols, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      const auto k = index[i * cols + j];
      if (k < 0) continue;
      if (static_cast<std::size_t>(k) >= p) {
        throw InternalError("gather_cols: index " + std::to_string(k) + " outside " +
                            shape_str(src.shape()));
      }
      out[i * cols + j] = sv[i * p + static_cast<std::size_t>(k)];
    }
  }
  std::vector<std::int64_t> idx(index.begin(), index.end());
  return make_result({m, cols}, std::move(out), {src},
                     [m, p, cols, idx = std::move(idx)](TensorImpl& self) {
    auto& ts = self.inputs[0];
    if (!wants_grad(ts)) return;
    auto& g = ts->grad_buffer();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < cols; ++j) {
        const auto k = idx[i * cols + j];
        if (k >= 0) g[i * p + static_cast<std::size_t>(k)] += self.grad[i * cols + j];
      }
  });
}

Tensor mask_fill_neg_inf(const Tensor& x, const std::vector<bool>& keep) {
  if (keep.size() != x.numel()) {
    throw DimensionError("mask_fill_neg_inf: mask of size " + std::to_string(keep.size()) +
                         " for " + shape_str(x.shape()));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  for (std::size_t i = 0; i < out.size(); ++i)
    if (!keep[i]) out[i] = -std::numeric_limits<double>::infinity();
  return make_result(x.shape(), std::move(out), {x}, [keep](TensorImpl& self) {
    auto& tx = self.inputs[0];
    if (!wants_grad(tx)) return;
    auto& g = tx->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (keep[i]) g[i] += self.grad[i];
  });
}

Tensor dropout(const Tensor& x, double rate, Rng& rng, bool training) {
  if (!(rate >= 0.0) || rate >= 1.0) {
    throw InputError("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (!training || rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> factor(x.numel());
  for (auto& f : factor) f = rng.uniform() < rate ? 0.0 : keep_scale;
  std::vector<double> out(x.values().begin(), x.values().end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= factor[i];
  return make_result(x.shape(), std::move(out), {x}, [factor = std::move(factor)](TensorImpl& self) {
    auto& tx = self.inputs[0];
    if (!wants_grad(tx)) return;
    auto& g = tx->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor[i] * self.grad[i];
  });
}

Tensor detach(const Tensor& x) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = x.shape();
  impl->value.assign(x.values().begin(), x.values().end());
  impl->stop_gradient = true;
  return Tensor(std::move(impl));
}

}  // namespace skipxl
