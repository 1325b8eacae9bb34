#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "skipxl/checkpoint.hpp"
#include "skipxl/config.hpp"
#include "skipxl/corpus.hpp"
#include "skipxl/model.hpp"
#include "skipxl/optim.hpp"
#include "skipxl/rng.hpp"
#include "skipxl/skip_schedule.hpp"

namespace skipxl {

struct EvalReport {
  double mean_nll = 0.0;  // nats per token
  double ppl = 0.0;
  double bpc = 0.0;
  std::size_t tokens = 0;
  std::size_t context = 0;
};

EvalReport make_report(double total_nll, std::size_t tokens, std::size_t context);

// Streams `ids` in eval_block blocks with memory length eval_context - eval_block,
// scoring every token. No skipping, identity heads, no dropout.
EvalReport evaluate(const Model& model, std::span<const std::int64_t> ids,
                    std::size_t eval_context, std::size_t eval_block,
                    const std::vector<PruneMask>* prune = nullptr);

struct LossRecord {
  std::int64_t step = 0;
  Phase phase = Phase::SkipRetain;
  double lr = 0.0;
  double train_nll = 0.0;
  std::optional<double> eval_ppl;
};

// Delimited loss log: header "step,phase,lr,train_nll,eval_ppl", values at
// round-trip precision, empty eval_ppl when no evaluation ran that step.
std::string loss_log_header();
std::string loss_log_line(const LossRecord& r);
std::vector<LossRecord> parse_loss_log(const std::string& text);

// Two-phase training loop. Per step: skip mask (SkipRetain phase only), one
// head assignment per layer, forward over every stream with its memory, mean
// cross-entropy, backward, grad clipping, Adam with cosine lr, periodic
// evaluation feeding the phase controller.
// The training vocabulary stored by Trainer::checkpoint(); null when absent.
std::shared_ptr<const Vocabulary> checkpoint_vocabulary(const Checkpoint& ckpt);

class Trainer {
 public:
  // `stochastic_mechanisms = false` runs a separately compiled step in which
  // neither skip masks nor head assignments are sampled at all.
  Trainer(RunConfig config, Corpus train, std::optional<Corpus> valid = std::nullopt,
          bool stochastic_mechanisms = true);

  static Trainer resume(const Checkpoint& ckpt, Corpus train,
                        std::optional<Corpus> valid = std::nullopt);

  LossRecord step();
  // Trains until `steps_done() == last_step`.
  void run_until(std::int64_t last_step);
  void run() { run_until(config_.train.steps); }

  Checkpoint checkpoint() const;

  const RunConfig& config() const { return config_; }
  const Model& model() const { return model_; }
  Phase phase() const { return controller_.phase(); }
  const PhaseController& controller() const { return controller_; }
  std::int64_t steps_done() const { return step_; }
  const std::vector<LossRecord>& log() const { return log_; }
  const std::vector<MemoryState>& memories() const { return memories_; }
  const RngStreams& rngs() const { return rngs_; }
  const SkipMask& last_skip_mask() const { return last_skip_mask_; }
  const std::vector<HeadAssignment>& last_assignments() const { return last_assignments_; }

  // Called after every step (e.g. loss-log writer).
  void on_step(std::function<void(const LossRecord&)> callback) { callback_ = std::move(callback); }

  // Called for every layer forward of every stream with the scored offsets.
  void on_offsets(OffsetObserver observer) { offset_observer_ = std::move(observer); }

  // Replaces the next sampled skip mask (tests and scripted traces).
  void force_next_skip_mask(SkipMask mask) { forced_mask_ = std::move(mask); }

 private:
  template <bool kMechanisms>
  LossRecord step_impl();

  RunConfig config_;
  Corpus train_;
  std::optional<Corpus> valid_;
  bool mechanisms_ = true;
  Batchifier batches_;
  Model model_;
  std::vector<NamedTensor> params_;
  AdamState adam_;
  RngStreams rngs_;
  PhaseController controller_;
  std::vector<MemoryState> memories_;
  std::int64_t step_ = 0;
  std::vector<LossRecord> log_;
  SkipMask last_skip_mask_;
  std::vector<HeadAssignment> last_assignments_;
  std::optional<SkipMask> forced_mask_;
  std::function<void(const LossRecord&)> callback_;
  OffsetObserver offset_observer_;
};

}  // namespace skipxl
