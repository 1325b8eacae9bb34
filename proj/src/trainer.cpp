#include "skipxl/trainer.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "skipxl/errors.hpp"
#include "skipxl/ops.hpp"

namespace skipxl {

EvalReport make_report(double total_nll, std::size_t tokens, std::size_t context) {
  EvalReport r;
  r.tokens = tokens;
  r.context = context;
  r.mean_nll = total_nll / static_cast<double>(tokens);
  r.ppl = std::exp(r.mean_nll);
  r.bpc = r.mean_nll / std::numbers::ln2;
  return r;
}

EvalReport evaluate(const Model& model, std::span<const std::int64_t> ids,
                    std::size_t eval_context, std::size_t eval_block,
                    const std::vector<PruneMask>* prune) {
  if (eval_block == 0) throw ConfigError("evaluate: eval_block must be positive");
  if (eval_context < eval_block) throw ConfigError("evaluate: eval_context must be >= eval_block");
  if (ids.size() < eval_block + 1) {
    throw InputError("evaluate: split of " + std::to_string(ids.size()) +
                     " tokens is shorter than one block of " + std::to_string(eval_block));
  }
  NoGradGuard no_grad;
  const std::size_t blocks = (ids.size() - 1) / eval_block;
  ForwardOptions opts;
  opts.training = false;
  opts.mem_len = eval_context - eval_block;
  opts.prune = prune;
  MemoryState memory = MemoryState::empty(model.config().n_layers);
  double total = 0.0;
  for (std::size_t b = 0; b < blocks; ++b) {
    const auto inputs = ids.subspan(b * eval_block, eval_block);
    const auto targets = ids.subspan(b * eval_block + 1, eval_block);
    ForwardResult out = model_forward_eval(model, inputs, memory, opts);
    total += cross_entropy(out.logits, targets).item() * static_cast<double>(eval_block);
    memory = std::move(out.memory);
  }
  return make_report(total, blocks * eval_block, eval_context);
}

std::string loss_log_header() { return "step,phase,lr,train_nll,eval_ppl"; }

std::string loss_log_line(const LossRecord& r) {
  std::ostringstream os;
  os.precision(17);
  os << r.step << ',' << phase_name(r.phase) << ',' << r.lr << ',' << r.train_nll << ',';
  if (r.eval_ppl) os << *r.eval_ppl;
  return os.str();
}

std::vector<LossRecord> parse_loss_log(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<LossRecord> out;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      header = false;
      if (line != loss_log_header()) throw IoError("loss log has unexpected header '" + line + "'");
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::istringstream ls(line);
    std::string col;
    while (std::getline(ls, col, ',')) cols.push_back(col);
    if (cols.size() == 4) cols.emplace_back();
    if (cols.size() != 5) throw IoError("malformed loss log line '" + line + "'");
    LossRecord r;
    r.step = std::stoll(cols[0]);
    r.phase = parse_phase(cols[1]);
    r.lr = std::stod(cols[2]);
    r.train_nll = std::stod(cols[3]);
    if (!cols[4].empty()) r.eval_ppl = std::stod(cols[4]);
    out.push_back(r);
  }
  return out;
}

namespace {

RunConfig with_vocab(RunConfig config, const Corpus& train) {
  if (config.model.vocab_size == 0) {
    if (!train.vocab) throw ConfigError("vocab_size unset and corpus has no vocabulary");
    config.model.vocab_size = train.vocab->size();
  }
  for (auto id : train.ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= config.model.vocab_size) {
      throw InputError("training corpus id " + std::to_string(id) + " exceeds vocab_size");
    }
  }
  config.validate();
  return config;
}

}  // namespace

Trainer::Trainer(RunConfig config, Corpus train, std::optional<Corpus> valid,
                 bool stochastic_mechanisms)
    : config_(with_vocab(std::move(config), train)),
      train_(std::move(train)),
      valid_(std::move(valid)),
      mechanisms_(stochastic_mechanisms),
      batches_(train_.ids, config_.train.batch_size, config_.model.block_size),
      rngs_(config_.train.seed),
      controller_(config_.train.conv_window, config_.train.conv_delta) {
  model_ = Model::initialize(config_.model, rngs_.init);
  params_ = model_.named_parameters();
  adam_ = AdamState::zeros_like(params_);
  memories_.assign(config_.train.batch_size, MemoryState::empty(config_.model.n_layers));
}

template <bool kMechanisms>
LossRecord Trainer::step_impl() {
  const ModelConfig& mc = config_.model;
  const TrainConfig& tc = config_.train;
  const Phase phase = controller_.phase();

  SkipMask mask(mc.n_layers, false);
  std::vector<HeadAssignment> assignments = identity_assignments(mc);
  if constexpr (kMechanisms) {
    mask = sample_skip_mask(tc.schedule, mc.n_layers, rngs_.skip, phase);
    for (std::size_t i = 0; i < mc.n_layers; ++i)
      assignments[i] = sample_head_assignment(rngs_.heads, mc.beta, mc.n_heads);
  }
  if (forced_mask_) {
    if (forced_mask_->size() != mc.n_layers) throw DimensionError("forced skip mask has wrong size");
    mask = *forced_mask_;
    forced_mask_.reset();
  }

  const Batch batch = batches_.at(static_cast<std::size_t>(step_));
  ForwardOptions opts;
  opts.training = true;
  opts.dropout_rng = &rngs_.dropout;
  opts.observer = offset_observer_;

  Tensor total;
  for (std::size_t s = 0; s < batch.batch; ++s) {
    ForwardResult out = model_forward(model_, batch.input_row(s), memories_[s], mask, assignments, opts);
    Tensor loss = cross_entropy(out.logits, batch.target_row(s));
    total = total.defined() ? add(total, loss) : loss;
    memories_[s] = std::move(out.memory);
  }
  total = scale(total, 1.0 / static_cast<double>(batch.batch));
  const double nll = total.item();
  if (!std::isfinite(nll)) {
    const std::string base = config_.checkpoint_path.empty() ? "skipxl" : config_.checkpoint_path;
    const std::string diag = base + ".nonfinite.ckpt";
    try {
      checkpoint().save(diag);
    } catch (const std::exception&) {
    }
    throw RunAborted("non-finite training loss at step " + std::to_string(step_) +
                     "; diagnostic checkpoint written to " + diag);
  }

  model_.zero_grad();
  total.backward();
  clip_grad_norm(params_, tc.clip);
  const double lr = cosine_lr(step_, tc.lr, tc.max_iters);
  adam_update(params_, adam_, lr, tc.adam);
  model_.zero_grad();

  LossRecord rec;
  rec.step = step_;
  rec.phase = phase;
  rec.lr = lr;
  rec.train_nll = nll;
  last_skip_mask_ = mask;
  last_assignments_ = std::move(assignments);
  ++step_;

  if (step_ % tc.eval_interval == 0) {
    const Corpus& split = valid_ ? *valid_ : train_;
    const EvalReport report = evaluate(model_, split.ids, tc.eval_context, tc.eval_block);
    rec.eval_ppl = report.ppl;
    controller_.observe(report.ppl, step_);
  }
  log_.push_back(rec);
  if (callback_) callback_(rec);
  return rec;
}

LossRecord Trainer::step() {
  return mechanisms_ ? step_impl<true>() : step_impl<false>();
}

void Trainer::run_until(std::int64_t last_step) {
  while (step_ < last_step) step();
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint ckpt;
  write_model(ckpt, model_);
  ckpt.meta["kind"] = "skipxl-train";
  ckpt.meta["run_config"] = config_to_text(config_);
  ckpt.meta["step"] = step_;
  ckpt.meta["phase"] = phase_name(controller_.phase());
  ckpt.meta["mechanisms"] = mechanisms_;
  if (controller_.transition_step()) ckpt.meta["transition_step"] = *controller_.transition_step();
  ckpt.meta["controller"] = {{"window", controller_.window()},
                             {"delta", controller_.delta()},
                             {"start_step", controller_.start_step()}};
  ckpt.meta["rng"] = {{"init", rngs_.init.state()},
                      {"dropout", rngs_.dropout.state()},
                      {"skip", rngs_.skip.state()},
                      {"heads", rngs_.heads.state()},
                      {"data", rngs_.data.state()}};
  ckpt.meta["adam_t"] = adam_.t;
  ckpt.meta["streams"] = memories_.size();
  if (train_.vocab) {
    ckpt.meta["vocab"] = {{"level", level_name(train_.vocab->level())},
                          {"tokens", train_.vocab->tokens()}};
  }

  std::vector<std::int64_t> hist_steps;
  std::vector<double> hist_best;
  for (const auto& r : controller_.history()) {
    hist_steps.push_back(r.step);
    hist_best.push_back(r.best_ppl);
  }
  const std::size_t n_hist = hist_steps.size();
  ckpt.add_i64("controller.history.step", {n_hist}, std::move(hist_steps));
  ckpt.add_f64("controller.history.best_ppl", {n_hist}, std::move(hist_best));

  for (std::size_t k = 0; k < params_.size(); ++k) {
    ckpt.add_f64("adam.m." + params_[k].name, params_[k].tensor.shape(), adam_.m[k]);
    ckpt.add_f64("adam.v." + params_[k].name, params_[k].tensor.shape(), adam_.v[k]);
  }
  for (std::size_t s = 0; s < memories_.size(); ++s) {
    const std::string pre = "memory." + std::to_string(s) + ".";
    ckpt.add_i64(pre + "next_position", {1}, {memories_[s].next_position});
    for (std::size_t l = 0; l < memories_[s].layers.size(); ++l) {
      const LayerMemory& m = memories_[s].layers[l];
      const std::string lp = pre + std::to_string(l) + ".";
      ckpt.add_i64(lp + "tags", {m.tags.size()}, m.tags);
      ckpt.add_i64(lp + "staleness", {1}, {static_cast<std::int64_t>(m.staleness)});
      if (!m.empty()) ckpt.add(lp + "buffer", m.buffer);
    }
  }
  return ckpt;
}

std::shared_ptr<const Vocabulary> checkpoint_vocabulary(const Checkpoint& ckpt) {
  if (!ckpt.meta.contains("vocab")) return nullptr;
  const auto& v = ckpt.meta.at("vocab");
  return std::make_shared<const Vocabulary>(Vocabulary::from_tokens(
      v.at("tokens").get<std::vector<std::string>>(), parse_level(v.at("level").get<std::string>())));
}

Trainer Trainer::resume(const Checkpoint& ckpt, Corpus train, std::optional<Corpus> valid) {
  if (ckpt.meta.value("kind", "") != "skipxl-train") {
    throw IoError("checkpoint does not hold training state");
  }
  RunConfig config = parse_config_text(ckpt.meta.at("run_config").get<std::string>());
  Trainer t(config, std::move(train), std::move(valid), ckpt.meta.at("mechanisms").get<bool>());
  t.model_ = read_model(ckpt);
  t.params_ = t.model_.named_parameters();
  t.step_ = ckpt.meta.at("step").get<std::int64_t>();

  const auto& rng = ckpt.meta.at("rng");
  t.rngs_.init.set_state(rng.at("init"));
  t.rngs_.dropout.set_state(rng.at("dropout"));
  t.rngs_.skip.set_state(rng.at("skip"));
  t.rngs_.heads.set_state(rng.at("heads"));
  t.rngs_.data.set_state(rng.at("data"));

  const auto& ctl = ckpt.meta.at("controller");
  t.controller_ = PhaseController(ctl.at("window").get<std::int64_t>(), ctl.at("delta").get<double>(),
                                  ctl.at("start_step").get<std::int64_t>());
  std::vector<PhaseController::Record> history;
  const auto& hs = ckpt.get("controller.history.step").i64;
  const auto& hb = ckpt.get("controller.history.best_ppl").f64;
  for (std::size_t i = 0; i < hs.size(); ++i) history.push_back({hs[i], hb[i]});
  std::optional<std::int64_t> transition;
  if (ckpt.meta.contains("transition_step")) transition = ckpt.meta.at("transition_step").get<std::int64_t>();
  t.controller_.restore(parse_phase(ckpt.meta.at("phase")), transition, std::move(history));

  t.adam_.t = ckpt.meta.at("adam_t").get<std::int64_t>();
  for (std::size_t k = 0; k < t.params_.size(); ++k) {
    t.adam_.m[k] = ckpt.get("adam.m." + t.params_[k].name).f64;
    t.adam_.v[k] = ckpt.get("adam.v." + t.params_[k].name).f64;
  }

  const auto streams = ckpt.meta.at("streams").get<std::size_t>();
  if (streams != t.memories_.size()) throw IoError("checkpoint stream count does not match config");
  for (std::size_t s = 0; s < streams; ++s) {
    const std::string pre = "memory." + std::to_string(s) + ".";
    t.memories_[s].next_position = ckpt.get(pre + "next_position").i64.at(0);
    for (std::size_t l = 0; l < t.memories_[s].layers.size(); ++l) {
      LayerMemory& m = t.memories_[s].layers[l];
      const std::string lp = pre + std::to_string(l) + ".";
      m.tags = ckpt.get(lp + "tags").i64;
      m.staleness = static_cast<std::size_t>(ckpt.get(lp + "staleness").i64.at(0));
      if (!m.tags.empty()) {
        const auto& buf = ckpt.get(lp + "buffer");
        m.buffer = detach(Tensor::from_values(buf.shape, buf.f64));
      }
    }
  }
  return t;
}

}  // namespace skipxl
