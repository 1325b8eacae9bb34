#include "skipxl/attention.hpp"

#include <algorithm>
#include <cmath>

#include "skipxl/errors.hpp"
#include "skipxl/ops.hpp"

namespace skipxl {

void LayerAttentionParams::validate() const {
  const Shape proj{n_heads * d_head, d_model};
  for (const Tensor* w : {&w_q, &w_key_content, &w_key_position, &w_value}) {
    if (w->shape() != proj) {
      throw DimensionError("attention projection has shape " + shape_str(w->shape()) +
                           ", expected " + shape_str(proj));
    }
  }
  if (w_out.shape() != Shape{d_model, n_heads * d_head}) {
    throw DimensionError("attention output matrix has shape " + shape_str(w_out.shape()));
  }
  if (content_bias.numel() != d_head || position_bias.numel() != d_head) {
    throw DimensionError("attention biases must have d_head entries");
  }
}

HeadAssignment HeadAssignment::identity(std::size_t n_heads) {
  HeadAssignment a;
  a.kv_head.resize(n_heads);
  for (std::size_t h = 0; h < n_heads; ++h) a.kv_head[h] = h;
  return a;
}

bool HeadAssignment::is_identity() const {
  for (std::size_t h = 0; h < kv_head.size(); ++h)
    if (kv_head[h] != h) return false;
  return true;
}

bool HeadAssignment::is_bijection() const {
  std::vector<bool> hit(kv_head.size(), false);
  for (auto h : kv_head) {
    if (h >= kv_head.size() || hit[h]) return false;
    hit[h] = true;
  }
  return true;
}

HeadAssignment sample_head_assignment(Rng& rng, double beta, std::size_t n_heads) {
  if (n_heads < 1) throw ConfigError("sample_head_assignment: need at least one head");
  if (!(beta >= 0.0 && beta <= 1.0)) {
    throw InputError("sample_head_assignment: beta must lie in [0, 1]");
  }
  const double u = rng.uniform();
  if (u >= beta) return HeadAssignment::identity(n_heads);
  HeadAssignment a;
  a.kv_head = rng.permutation(n_heads);
  a.cross_active = true;
  return a;
}

namespace {

struct Projections {
  Tensor queries;     // [L × H·dh]
  Tensor keys;        // [K × H·dh]
  Tensor positions;   // [P × H·dh]
};

Projections project(const Tensor& query_src, const Tensor& key_src,
                    const EncodedOffsets& encodings, const LayerAttentionParams& params) {
  if (encodings.rows != query_src.dim(0) || encodings.cols != key_src.dim(0)) {
    throw InternalError("attention: offset matrix " + std::to_string(encodings.rows) + "x" +
                        std::to_string(encodings.cols) + " does not match " +
                        std::to_string(query_src.dim(0)) + " queries and " +
                        std::to_string(key_src.dim(0)) + " keys");
  }
  return {matmul_nt(query_src, params.w_q), matmul_nt(key_src, params.w_key_content),
          matmul_nt(encodings.table, params.w_key_position)};
}

Tensor head_score(const Projections& proj, const EncodedOffsets& encodings,
                  const LayerAttentionParams& params, std::size_t query_head,
                  std::size_t kv_head) {
  const std::size_t dh = params.d_head;
  const Tensor q = slice_cols(proj.queries, query_head * dh, dh);
  const Tensor k = slice_cols(proj.keys, kv_head * dh, dh);
  const Tensor r = slice_cols(proj.positions, kv_head * dh, dh);
  // (q + u)·k covers the content and global-content terms; (q + v)·r the
  // content-position and global-position terms, gathered per (i, j) offset.
  const Tensor content = matmul_nt(add_row(q, params.content_bias), k);
  const Tensor position_by_offset = matmul_nt(add_row(q, params.position_bias), r);
  const Tensor position = gather_cols(position_by_offset, encodings.index, encodings.cols);
  const Tensor scaled = scale(add(content, position), 1.0 / std::sqrt(static_cast<double>(dh)));
  return mask_fill_neg_inf(scaled, encodings.visibility());
}

}  // namespace

std::vector<Tensor> attention_scores(const Tensor& query_src, const Tensor& key_src,
                                     const EncodedOffsets& encodings,
                                     const LayerAttentionParams& params,
                                     const HeadAssignment& assignment) {
  if (assignment.kv_head.size() != params.n_heads || !assignment.is_bijection()) {
    throw InternalError("attention: head assignment is not a permutation of the layer's heads");
  }
  const Projections proj = project(query_src, key_src, encodings, params);
  std::vector<Tensor> scores;
  scores.reserve(params.n_heads);
  for (std::size_t m = 0; m < params.n_heads; ++m)
    scores.push_back(head_score(proj, encodings, params, m, assignment.kv_head[m]));
  return scores;
}

std::vector<Tensor> attention_scores_baseline(const Tensor& query_src, const Tensor& key_src,
                                              const EncodedOffsets& encodings,
                                              const LayerAttentionParams& params) {
  const Projections proj = project(query_src, key_src, encodings, params);
  std::vector<Tensor> scores;
  scores.reserve(params.n_heads);
  for (std::size_t h = 0; h < params.n_heads; ++h)
    scores.push_back(head_score(proj, encodings, params, h, h));
  return scores;
}

std::vector<Tensor> attention_probs(const std::vector<Tensor>& scores) {
  std::vector<Tensor> probs;
  probs.reserve(scores.size());
  for (const auto& s : scores) probs.push_back(softmax(s, 1));
  return probs;
}

std::vector<Tensor> head_output(const std::vector<Tensor>& probs, const Tensor& value_src,
                                const LayerAttentionParams& params,
                                const HeadAssignment& assignment) {
  const Tensor values = matmul_nt(value_src, params.w_value);
  const std::size_t dh = params.d_head;
  std::vector<Tensor> out;
  out.reserve(probs.size());
  for (std::size_t m = 0; m < probs.size(); ++m) {
    const Tensor v = slice_cols(values, assignment.kv_head[m] * dh, dh);
    out.push_back(matmul(probs[m], v));
  }
  return out;
}

Tensor multi_head_forward(const Tensor& query_src, const Tensor& key_src,
                          const EncodedOffsets& encodings, const LayerAttentionParams& params,
                          const HeadAssignment& assignment, const PruneMask& prune) {
  if (prune.size() != params.n_heads) {
    throw DimensionError("multi_head_forward: prune mask has " + std::to_string(prune.size()) +
                         " entries for " + std::to_string(params.n_heads) + " heads");
  }
  const auto scores = attention_scores(query_src, key_src, encodings, params, assignment);
  const auto probs = attention_probs(scores);
  auto heads = head_output(probs, key_src, params, assignment);
  for (std::size_t m = 0; m < heads.size(); ++m)
    if (!prune[m]) heads[m] = Tensor::zeros(heads[m].shape());
  return matmul_nt(concat_cols(heads), params.w_out);
}

}  // namespace skipxl
