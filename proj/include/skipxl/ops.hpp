#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "skipxl/rng.hpp"
#include "skipxl/tensor.hpp"

namespace skipxl {

// Differentiable primitives. Matrices are rank-2 row-major tensors.

Tensor matmul(const Tensor& a, const Tensor& b);     // [m×k]·[k×n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [m×k]·[n×k]ᵀ
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
// a[m×n] + row[n] broadcast over rows.
Tensor add_row(const Tensor& a, const Tensor& row);
Tensor sum(const Tensor& a);

Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);

// Max-shifted softmax along `axis`. Entries equal to -inf map to 0.
Tensor softmax(const Tensor& x, std::size_t axis);

// Row-wise normalization over the last dimension followed by gain/bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// Mean negative log-likelihood (nats) of `targets` under row-softmax(logits).
Tensor cross_entropy(const Tensor& logits, std::span<const std::int64_t> targets);

// Rows of table[V×d] selected by ids.
Tensor embedding(const Tensor& table, std::span<const std::int64_t> ids);

Tensor concat_rows(const Tensor& top, const Tensor& bottom);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count);

// out[i][j] = src[i][index[i*cols + j]], or 0 where the index is negative.
Tensor gather_cols(const Tensor& src, std::span<const std::int64_t> index, std::size_t cols);

// Entries with keep[i] == false become -inf and receive no gradient.
Tensor mask_fill_neg_inf(const Tensor& x, const std::vector<bool>& keep);

// Inverted dropout; identity when not training or rate == 0.
Tensor dropout(const Tensor& x, double rate, Rng& rng, bool training);

// Copy of x cut from the gradient graph. The result never accumulates grad.
Tensor detach(const Tensor& x);

}  // namespace skipxl
