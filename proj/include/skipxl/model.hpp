#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "skipxl/attention.hpp"
#include "skipxl/gradcheck.hpp"
#include "skipxl/relpos.hpp"
#include "skipxl/rng.hpp"
#include "skipxl/skip_schedule.hpp"
#include "skipxl/tensor.hpp"

namespace skipxl {

struct ModelConfig {
  std::size_t n_layers = 4;
  std::size_t d_model = 64;
  std::size_t d_inner = 256;
  std::size_t n_heads = 4;
  std::size_t d_head = 16;
  std::size_t mem_len = 32;
  std::size_t block_size = 32;
  std::size_t vocab_size = 0;
  double dropout = 0.1;
  double beta = 0.1;
  double init_std = 0.02;
  double ln_eps = 1e-5;

  void validate() const;
};

// One layer's memory: detached input activations of the last update, their
// absolute position tags, and the number of steps since that update.
struct LayerMemory {
  Tensor buffer;  // [rows × d_model] stop-gradient; undefined when empty
  PositionTags tags;
  std::size_t staleness = 0;

  std::size_t rows() const { return tags.size(); }
  bool empty() const { return tags.empty(); }
};

struct MemoryState {
  std::vector<LayerMemory> layers;
  std::int64_t next_position = 0;  // absolute tag of the next block's first token

  static MemoryState empty(std::size_t n_layers);
};

// Skipped: returned unchanged except staleness + 1. Otherwise the buffer
// becomes the last mem_len rows of concat(buffer, detach(layer_input)).
LayerMemory update_memory(const LayerMemory& mem, const Tensor& layer_input, bool skipped,
                          const PositionTags& step_tags, std::size_t mem_len);

struct LayerParams {
  Tensor ln_attn_gain, ln_attn_bias;
  LayerAttentionParams attn;
  Tensor ln_ff_gain, ln_ff_bias;
  Tensor ff_w1;  // [d_inner × d_model]
  Tensor ff_b1;  // [d_inner]
  Tensor ff_w2;  // [d_model × d_inner]
  Tensor ff_b2;  // [d_model]
};

class Model {
 public:
  Model() = default;

  // Normal(0, init_std) weights, zero biases, unit norm gains.
  static Model initialize(const ModelConfig& config, Rng& rng);

  const ModelConfig& config() const { return config_; }
  ModelConfig& mutable_config() { return config_; }

  // Tied: the same tensor embeds tokens and projects the final hidden state.
  const Tensor& embedding() const { return embedding_; }
  const Tensor& output_weight() const { return embedding_; }
  const std::vector<LayerParams>& layers() const { return layers_; }
  const Tensor& final_gain() const { return final_gain_; }
  const Tensor& final_bias() const { return final_bias_; }

  // Stable order; names like "layers.0.attn.w_q".
  std::vector<NamedTensor> named_parameters() const;
  std::vector<NamedTensor> layer_parameters(std::size_t layer) const;
  Tensor parameter(const std::string& name) const;
  void zero_grad() const;

  // Deep copy of all parameter values.
  Model clone() const;

 private:
  ModelConfig config_;
  Tensor embedding_;
  std::vector<LayerParams> layers_;
  Tensor final_gain_, final_bias_;
};

// Called with (layer index 0-based, offsets scored by that layer's queries).
using OffsetObserver = std::function<void(std::size_t, const OffsetMatrix&)>;

struct ForwardOptions {
  bool training = false;
  Rng* dropout_rng = nullptr;            // required when training with dropout > 0
  std::optional<std::size_t> mem_len;    // unset = config.mem_len
  const std::vector<PruneMask>* prune = nullptr;  // null = all heads on
  OffsetObserver observer;
};

struct ForwardResult {
  Tensor logits;  // [L × V]
  MemoryState memory;
};

Tensor embed(const Model& model, std::span<const std::int64_t> tokens);

// Pre-norm residual layer: h = x + Attn(LN(x), LN([mem; x])), y = h + FFN(LN(h)).
Tensor layer_forward(const Model& model, std::size_t layer, const Tensor& x,
                     const LayerMemory& mem, const PositionTags& step_tags,
                     const HeadAssignment& assignment, const PruneMask& prune,
                     const ForwardOptions& options);

// Full stack over one block. Skipped layers pass their input through unchanged
// and keep their memory.
ForwardResult model_forward(const Model& model, std::span<const std::int64_t> tokens,
                            const MemoryState& memory, const SkipMask& skip_mask,
                            const std::vector<HeadAssignment>& assignments,
                            const ForwardOptions& options);

// No skipping, identity head pairing, no dropout.
ForwardResult model_forward_eval(const Model& model, std::span<const std::int64_t> tokens,
                                 const MemoryState& memory, const ForwardOptions& options = {});

std::vector<HeadAssignment> identity_assignments(const ModelConfig& config);
std::vector<PruneMask> all_heads(const ModelConfig& config);

}  // namespace skipxl
