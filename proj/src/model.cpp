#include "skipxl/model.hpp"

#include <algorithm>

#include "skipxl/errors.hpp"
#include "skipxl/ops.hpp"

namespace skipxl {

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string(name) + " must be positive");
  };
  positive(n_layers, "n_layers");
  positive(d_model, "d_model");
  positive(d_inner, "d_inner");
  positive(n_heads, "n_heads");
  positive(d_head, "d_head");
  positive(block_size, "block_size");
  positive(vocab_size, "vocab_size");
  if (d_model % 2 != 0) throw ConfigError("d_model must be even for sinusoidal encodings");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("beta must lie in [0, 1]");
  if (!(init_std > 0.0)) throw ConfigError("init_std must be positive");
}

MemoryState MemoryState::empty(std::size_t n_layers) {
  MemoryState s;
  s.layers.resize(n_layers);
  return s;
}

LayerMemory update_memory(const LayerMemory& mem, const Tensor& layer_input, bool skipped,
                          const PositionTags& step_tags, std::size_t mem_len) {
  if (skipped) {
    LayerMemory kept = mem;
    kept.staleness += 1;
    return kept;
  }
  if (layer_input.dim(0) != step_tags.size()) {
    throw InternalError("update_memory: " + std::to_string(step_tags.size()) + " tags for " +
                        shape_str(layer_input.shape()));
  }
  LayerMemory next;
  next.staleness = 0;
  if (mem_len == 0) return next;

  const std::size_t d = layer_input.dim(1);
  std::vector<double> rows;
  PositionTags tags;
  if (!mem.empty()) {
    rows.assign(mem.buffer.values().begin(), mem.buffer.values().end());
    tags = mem.tags;
  }
  rows.insert(rows.end(), layer_input.values().begin(), layer_input.values().end());
  tags.insert(tags.end(), step_tags.begin(), step_tags.end());
  if (tags.size() > mem_len) {
    const std::size_t drop = tags.size() - mem_len;
    rows.erase(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(drop * d));
    tags.erase(tags.begin(), tags.begin() + static_cast<std::ptrdiff_t>(drop));
  }
  next.buffer = detach(Tensor::from_values({tags.size(), d}, std::move(rows)));
  next.tags = std::move(tags);
  return next;
}

namespace {

Tensor normal_tensor(const Shape& shape, double std_dev, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = std_dev * rng.normal();
  return Tensor::from_values(shape, std::move(v), true);
}

}  // namespace

Model Model::initialize(const ModelConfig& config, Rng& rng) {
  config.validate();
  Model m;
  m.config_ = config;
  const std::size_t d = config.d_model;
  const std::size_t hd = config.n_heads * config.d_head;
  const double s = config.init_std;
  m.embedding_ = normal_tensor({config.vocab_size, d}, s, rng);
  for (std::size_t i = 0; i < config.n_layers; ++i) {
    LayerParams p;
    p.ln_attn_gain = Tensor::full({d}, 1.0, true);
    p.ln_attn_bias = Tensor::zeros({d}, true);
    p.attn.n_heads = config.n_heads;
    p.attn.d_head = config.d_head;
    p.attn.d_model = d;
    p.attn.w_q = normal_tensor({hd, d}, s, rng);
    p.attn.w_key_content = normal_tensor({hd, d}, s, rng);
    p.attn.w_key_position = normal_tensor({hd, d}, s, rng);
    p.attn.w_value = normal_tensor({hd, d}, s, rng);
    p.attn.w_out = normal_tensor({d, hd}, s, rng);
    p.attn.content_bias = Tensor::zeros({config.d_head}, true);
    p.attn.position_bias = Tensor::zeros({config.d_head}, true);
    p.ln_ff_gain = Tensor::full({d}, 1.0, true);
    p.ln_ff_bias = Tensor::zeros({d}, true);
    p.ff_w1 = normal_tensor({config.d_inner, d}, s, rng);
    p.ff_b1 = Tensor::zeros({config.d_inner}, true);
    p.ff_w2 = normal_tensor({d, config.d_inner}, s, rng);
    p.ff_b2 = Tensor::zeros({d}, true);
    m.layers_.push_back(std::move(p));
  }
  m.final_gain_ = Tensor::full({d}, 1.0, true);
  m.final_bias_ = Tensor::zeros({d}, true);
  return m;
}

std::vector<NamedTensor> Model::layer_parameters(std::size_t layer) const {
  const LayerParams& p = layers_.at(layer);
  const std::string pre = "layers." + std::to_string(layer) + ".";
  return {
      {pre + "ln_attn.gain", p.ln_attn_gain},
      {pre + "ln_attn.bias", p.ln_attn_bias},
      {pre + "attn.w_q", p.attn.w_q},
      {pre + "attn.w_key_content", p.attn.w_key_content},
      {pre + "attn.w_key_position", p.attn.w_key_position},
      {pre + "attn.w_value", p.attn.w_value},
      {pre + "attn.w_out", p.attn.w_out},
      {pre + "attn.content_bias", p.attn.content_bias},
      {pre + "attn.position_bias", p.attn.position_bias},
      {pre + "ln_ff.gain", p.ln_ff_gain},
      {pre + "ln_ff.bias", p.ln_ff_bias},
      {pre + "ff.w1", p.ff_w1},
      {pre + "ff.b1", p.ff_b1},
      {pre + "ff.w2", p.ff_w2},
      {pre + "ff.b2", p.ff_b2},
  };
}

std::vector<NamedTensor> Model::named_parameters() const {
  std::vector<NamedTensor> out;
  out.push_back({"embedding", embedding_});
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    auto lp = layer_parameters(i);
    out.insert(out.end(), lp.begin(), lp.end());
  }
  out.push_back({"final_norm.gain", final_gain_});
  out.push_back({"final_norm.bias", final_bias_});
  return out;
}

Tensor Model::parameter(const std::string& name) const {
  for (auto& p : named_parameters())
    if (p.name == name) return p.tensor;
  throw InputError("no parameter named '" + name + "'");
}

void Model::zero_grad() const {
  for (auto& p : named_parameters()) p.tensor.zero_grad();
}

Model Model::clone() const {
  Model m = *this;
  auto copy = [](Tensor& t) { t = t.clone(true); };
  copy(m.embedding_);
  for (auto& p : m.layers_) {
    for (Tensor* t : {&p.ln_attn_gain, &p.ln_attn_bias, &p.attn.w_q, &p.attn.w_key_content,
                      &p.attn.w_key_position, &p.attn.w_value, &p.attn.w_out,
                      &p.attn.content_bias, &p.attn.position_bias, &p.ln_ff_gain, &p.ln_ff_bias,
                      &p.ff_w1, &p.ff_b1, &p.ff_w2, &p.ff_b2})
      copy(*t);
  }
  copy(m.final_gain_);
  copy(m.final_bias_);
  return m;
}

Tensor embed(const Model& model, std::span<const std::int64_t> tokens) {
  return embedding(model.embedding(), tokens);
}

Tensor layer_forward(const Model& model, std::size_t layer, const Tensor& x,
                     const LayerMemory& mem, const PositionTags& step_tags,
                     const HeadAssignment& assignment, const PruneMask& prune,
                     const ForwardOptions& options) {
  const ModelConfig& cfg = model.config();
  const LayerParams& p = model.layers().at(layer);
  if (!mem.empty() && !mem.buffer.is_stop_gradient()) {
    throw InternalError("layer_forward: memory buffer is attached to a gradient graph");
  }

  PositionTags key_tags = mem.tags;
  key_tags.insert(key_tags.end(), step_tags.begin(), step_tags.end());
  validate_tags(key_tags);
  const OffsetMatrix offsets = relative_offsets(step_tags, key_tags);
  if (options.observer) options.observer(layer, offsets);
  const EncodedOffsets enc = encode_offsets(offsets, cfg.d_model);

  const Tensor keys_raw = mem.empty() ? x : concat_rows(mem.buffer, x);
  const Tensor query_src = layer_norm(x, p.ln_attn_gain, p.ln_attn_bias, cfg.ln_eps);
  const Tensor key_src = layer_norm(keys_raw, p.ln_attn_gain, p.ln_attn_bias, cfg.ln_eps);
  const Tensor attn = multi_head_forward(query_src, key_src, enc, p.attn, assignment, prune);

  const bool drop = options.training && cfg.dropout > 0.0;
  if (drop && options.dropout_rng == nullptr) {
    throw UsageError("layer_forward: training with dropout needs a dropout generator");
  }
  Rng scratch;
  Rng& rng = options.dropout_rng ? *options.dropout_rng : scratch;

  const Tensor h = add(x, dropout(attn, cfg.dropout, rng, drop));
  const Tensor hn = layer_norm(h, p.ln_ff_gain, p.ln_ff_bias, cfg.ln_eps);
  const Tensor inner = gelu(add_row(matmul_nt(hn, p.ff_w1), p.ff_b1));
  const Tensor ff = add_row(matmul_nt(inner, p.ff_w2), p.ff_b2);
  return add(h, dropout(ff, cfg.dropout, rng, drop));
}

ForwardResult model_forward(const Model& model, std::span<const std::int64_t> tokens,
                            const MemoryState& memory, const SkipMask& skip_mask,
                            const std::vector<HeadAssignment>& assignments,
                            const ForwardOptions& options) {
  const ModelConfig& cfg = model.config();
  if (skip_mask.size() != cfg.n_layers) {
    throw DimensionError("model_forward: skip mask has " + std::to_string(skip_mask.size()) +
                         " entries for " + std::to_string(cfg.n_layers) + " layers");
  }
  if (assignments.size() != cfg.n_layers) {
    throw DimensionError("model_forward: need one head assignment per layer");
  }
  if (memory.layers.size() != cfg.n_layers) {
    throw DimensionError("model_forward: memory has " + std::to_string(memory.layers.size()) +
                         " layers, model has " + std::to_string(cfg.n_layers));
  }
  if (options.prune && options.prune->size() != cfg.n_layers) {
    throw DimensionError("model_forward: need one prune mask per layer");
  }
  if (tokens.empty()) throw InputError("model_forward: empty block");
  const std::size_t mem_len = options.mem_len.value_or(cfg.mem_len);
  const PruneMask all_on(cfg.n_heads, true);

  const PositionTags step_tags = consecutive_tags(memory.next_position, tokens.size());
  ForwardResult result;
  result.memory.layers.resize(cfg.n_layers);
  result.memory.next_position = memory.next_position + static_cast<std::int64_t>(tokens.size());

  Tensor x = embed(model, tokens);
  for (std::size_t i = 0; i < cfg.n_layers; ++i) {
    const LayerMemory& mem = memory.layers[i];
    result.memory.layers[i] = update_memory(mem, x, skip_mask[i], step_tags, mem_len);
    if (skip_mask[i]) continue;
    const PruneMask& prune = options.prune ? (*options.prune)[i] : all_on;
    x = layer_forward(model, i, x, mem, step_tags, assignments[i], prune, options);
  }
  const Tensor out = layer_norm(x, model.final_gain(), model.final_bias(), cfg.ln_eps);
  result.logits = matmul_nt(out, model.output_weight());
  return result;
}

ForwardResult model_forward_eval(const Model& model, std::span<const std::int64_t> tokens,
                                 const MemoryState& memory, const ForwardOptions& options) {
  ForwardOptions opts = options;
  opts.training = false;
  return model_forward(model, tokens, memory, SkipMask(model.config().n_layers, false),
                       identity_assignments(model.config()), opts);
}

std::vector<HeadAssignment> identity_assignments(const ModelConfig& config) {
  return std::vector<HeadAssignment>(config.n_layers, HeadAssignment::identity(config.n_heads));
}

std::vector<PruneMask> all_heads(const ModelConfig& config) {
  return std::vector<PruneMask>(config.n_layers, PruneMask(config.n_heads, true));
}

}  // namespace skipxl
