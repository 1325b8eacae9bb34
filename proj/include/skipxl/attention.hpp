#pragma once

#include <cstddef>
#include <vector>

#include "skipxl/relpos.hpp"
#include "skipxl/rng.hpp"
#include "skipxl/tensor.hpp"

namespace skipxl {

// Per-head projections are stored stacked: rows [h*d_head, (h+1)*d_head) of
// w_q / w_key_content / w_key_position / w_value belong to head h.
struct LayerAttentionParams {
  std::size_t n_heads = 0;
  std::size_t d_head = 0;
  std::size_t d_model = 0;
  Tensor w_q;               // [n_heads*d_head × d_model]
  Tensor w_key_content;     // W_kE, same shape
  Tensor w_key_position;    // W_kR, same shape
  Tensor w_value;           // same shape
  Tensor w_out;             // [d_model × n_heads*d_head]
  Tensor content_bias;      // u, [d_head], shared by all heads of the layer
  Tensor position_bias;     // v, [d_head]

  void validate() const;
};

// Query head m reads keys and values from head kv_head[m].
struct HeadAssignment {
  std::vector<std::size_t> kv_head;
  bool cross_active = false;

  static HeadAssignment identity(std::size_t n_heads);
  bool is_identity() const;
  bool is_bijection() const;
};

// With probability beta the layer uses a uniformly random permutation
// (possibly the identity); otherwise the identity. Always draws one uniform,
// plus the permutation draws when the cross branch is taken.
HeadAssignment sample_head_assignment(Rng& rng, double beta, std::size_t n_heads);

// true = head contributes.
using PruneMask = std::vector<bool>;

// Scaled relative-position scores, one [L × K] matrix per query head, with
// future keys at -inf. query_src are the normalized block rows, key_src the
// normalized memory-then-block rows.
std::vector<Tensor> attention_scores(const Tensor& query_src, const Tensor& key_src,
                                     const EncodedOffsets& encodings,
                                     const LayerAttentionParams& params,
                                     const HeadAssignment& assignment);

// Same score with the head pairing fixed to m -> m.
std::vector<Tensor> attention_scores_baseline(const Tensor& query_src, const Tensor& key_src,
                                              const EncodedOffsets& encodings,
                                              const LayerAttentionParams& params);

std::vector<Tensor> attention_probs(const std::vector<Tensor>& scores);

// C_m = probs_m · (key_src W_v[kv_head[m]]ᵀ), one [L × d_head] per query head.
std::vector<Tensor> head_output(const std::vector<Tensor>& probs, const Tensor& value_src,
                                const LayerAttentionParams& params,
                                const HeadAssignment& assignment);

// Heads ordered by query index, pruned slots zeroed, concatenated, projected
// by w_out. Result is [L × d_model].
Tensor multi_head_forward(const Tensor& query_src, const Tensor& key_src,
                          const EncodedOffsets& encodings, const LayerAttentionParams& params,
                          const HeadAssignment& assignment, const PruneMask& prune);

}  // namespace skipxl
