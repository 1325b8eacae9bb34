// skipxl command-line front end: train, eval, prune, audit, context, gradcheck.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "skipxl/analysis.hpp"
#include "skipxl/checkpoint.hpp"
#include "skipxl/config.hpp"
#include "skipxl/corpus.hpp"
#include "skipxl/errors.hpp"
#include "skipxl/trainer.hpp"

namespace fs = std::filesystem;
using namespace skipxl;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config, "run configuration file (key = value lines)");
  cmd->add_option("-s,--set", c.sets, "override a config key, key=value (repeatable)");
  cmd->add_option("-o,--out", c.out, "write machine-readable output here");
}

RunConfig resolve_config(const Common& c) {
  RunConfig cfg = c.config.empty() ? default_run_config() : load_config(c.config);
  for (const auto& s : c.sets) apply_override(cfg, s);
  return cfg;
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty()) return;
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path);
  f << text;
  if (!f) throw IoError("write failed for " + path);
}

// New vocabulary at `level` when `vocab` is null.
Corpus require_corpus(const std::string& path, const std::string& what, TokenLevel level,
                      std::shared_ptr<const Vocabulary> vocab) {
  if (path.empty()) throw ConfigError(what + " is not set");
  return vocab ? load_corpus(path, std::move(vocab)) : load_corpus(path, level);
}

// Training vocabulary: from the checkpoint when stored, else rebuilt from train_path.
std::shared_ptr<const Vocabulary> vocabulary_for(const Checkpoint& ckpt, const RunConfig& cfg) {
  if (auto v = checkpoint_vocabulary(ckpt)) return v;
  if (cfg.train_path.empty()) throw ConfigError("checkpoint has no vocabulary and train_path is not set");
  return load_corpus(cfg.train_path, cfg.level).vocab;
}

Corpus split_corpus(const std::string& split, const RunConfig& cfg,
                    std::shared_ptr<const Vocabulary> vocab) {
  if (split == "train") return require_corpus(cfg.train_path, "train_path", cfg.level, vocab);
  if (split == "valid") return require_corpus(cfg.valid_path, "valid_path", cfg.level, vocab);
  if (split == "test") return require_corpus(cfg.test_path, "test_path", cfg.level, vocab);
  throw ConfigError("unknown split '" + split + "' (expected train, valid or test)");
}

int cmd_train(const Common& c, const std::string& resume) {
  RunConfig cfg = resolve_config(c);
  if (!c.out.empty()) cfg.log_path = c.out;
  if (cfg.checkpoint_path.empty()) cfg.checkpoint_path = "skipxl.ckpt";

  Corpus train = require_corpus(cfg.train_path, "train_path", cfg.level, nullptr);
  std::optional<Corpus> valid;
  if (!cfg.valid_path.empty()) valid = load_corpus(cfg.valid_path, train.vocab);

  std::optional<Trainer> trainer;
  if (!resume.empty()) {
    trainer.emplace(Trainer::resume(Checkpoint::load(resume), train, valid));
  } else {
    trainer.emplace(cfg, train, valid);
  }
  const RunConfig& rc = trainer->config();
  const std::string ckpt_path = cfg.checkpoint_path;
  const std::int64_t steps = cfg.train.steps;

  std::ofstream log;
  if (!cfg.log_path.empty()) {
    const bool append = !resume.empty() && fs::exists(cfg.log_path);
    log.open(cfg.log_path, append ? std::ios::app : std::ios::trunc);
    if (!log) throw IoError("cannot open loss log " + cfg.log_path);
    if (!append) log << loss_log_header() << '\n';
  }

  std::cout << "vocab " << rc.model.vocab_size << ", " << train.size() << " training tokens, "
            << rc.model.n_layers << " layers, schedule " << rc.train.schedule.name() << ", beta "
            << rc.model.beta << "\n";
  std::cout << std::setw(8) << "step" << std::setw(13) << "phase" << std::setw(12) << "lr"
            << std::setw(12) << "train_nll" << std::setw(12) << "eval_ppl" << '\n';
  const std::int64_t interval = rc.train.checkpoint_interval;
  Phase last_phase = trainer->phase();
  trainer->on_step([&](const LossRecord& r) {
    if (log.is_open()) log << loss_log_line(r) << '\n' << std::flush;
    if (r.eval_ppl) {
      std::cout << std::setw(8) << r.step << std::setw(13) << phase_name(r.phase) << std::setw(12)
                << std::scientific << std::setprecision(3) << r.lr << std::fixed << std::setw(12)
                << std::setprecision(4) << r.train_nll << std::setw(12) << *r.eval_ppl << '\n';
      std::cout.unsetf(std::ios::floatfield);
    }
    if (interval > 0 && (r.step + 1) % interval == 0)
      trainer->checkpoint().save(ckpt_path + "." + std::to_string(r.step + 1));
  });
  while (trainer->steps_done() < steps) {
    trainer->step();
    if (trainer->phase() != last_phase) {
      std::cout << "phase transition to " << phase_name(trainer->phase()) << " after step "
                << trainer->steps_done() << '\n';
      last_phase = trainer->phase();
    }
  }
  trainer->checkpoint().save(ckpt_path);
  std::cout << "checkpoint written to " << ckpt_path << '\n';
  return 0;
}

int cmd_eval(const Common& c, const std::string& ckpt_path, const std::string& split) {
  RunConfig cfg = resolve_config(c);
  const Checkpoint ckpt = Checkpoint::load(ckpt_path);
  const Model model = read_model(ckpt);
  const Corpus data = split_corpus(split, cfg, vocabulary_for(ckpt, cfg));
  const EvalReport r = evaluate(model, data.ids, cfg.train.eval_context, cfg.train.eval_block);
  std::cout << std::fixed << std::setprecision(4) << split << ": tokens " << r.tokens
            << ", context " << r.context << ", nll " << r.mean_nll << ", ppl " << r.ppl
            << ", bpc " << r.bpc << '\n';
  std::ostringstream os;
  os.precision(17);
  os << "split,tokens,context,mean_nll,ppl,bpc\n"
     << split << ',' << r.tokens << ',' << r.context << ',' << r.mean_nll << ',' << r.ppl << ','
     << r.bpc << '\n';
  write_text(c.out, os.str());
  return 0;
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

int cmd_prune(const Common& c, const std::string& ckpt_path, const std::string& split,
              const std::string& reference, const std::string& table_out) {
  RunConfig cfg = resolve_config(c);
  const Checkpoint ckpt = Checkpoint::load(ckpt_path);
  const Model model = read_model(ckpt);
  const Corpus data = split_corpus(split, cfg, vocabulary_for(ckpt, cfg));
  std::optional<PruneReport> ref;
  if (!reference.empty()) ref = PruneReport::parse_csv(read_file(reference));
  const PruneReport report = run_prune_experiment(model, data.ids, cfg.train.eval_context,
                                                  cfg.train.eval_block, ref ? &*ref : nullptr);
  std::cout << report.to_table();
  write_text(c.out, report.to_csv());
  write_text(table_out, report.to_table());
  return 0;
}

int cmd_audit(const Common& c, std::int64_t steps) {
  RunConfig cfg = resolve_config(c);
  const Corpus data = require_corpus(cfg.train_path, "train_path", cfg.level, nullptr);
  if (cfg.model.vocab_size == 0) cfg.model.vocab_size = data.vocab->size();
  const PositionAudit audit = position_audit(cfg, data.ids, steps);
  std::cout << audit.to_table();
  const auto bound = static_cast<std::int64_t>(cfg.model.mem_len + cfg.model.block_size - 1);
  std::uint64_t beyond = 0;
  for (const auto& h : audit.phase1) beyond += h.mass_above(bound);
  std::cout << "phase1 pairs beyond M+L-1=" << bound << ": " << beyond << '\n';
  write_text(c.out, audit.to_csv());
  return 0;
}

int cmd_context(const Common& c, std::size_t samples) {
  RunConfig cfg = resolve_config(c);
  Rng rng(RngStreams::derive_seed(cfg.train.seed, "context"));
  const ExpectedContextReport r = expected_context_report(cfg.train.schedule, cfg.model.n_layers,
                                                          cfg.model.mem_len, samples, rng);
  std::cout << r.to_table();
  write_text(c.out, r.to_csv());
  bool ok = samples == 0 || r.simulation_agrees();
  if (cfg.train.schedule.variant == SkipVariant::Linear) ok = ok && r.linear_relation_holds();
  std::cout << (ok ? "relations hold\n" : "relation check FAILED\n");
  return ok ? 0 : 1;
}

int cmd_gradcheck(const Common& c) {
  // The tiny model always; only seed and its own shape keys are honored.
  RunConfig base = default_run_config();
  base.model = gradcheck_model_config();
  if (!c.config.empty()) base = parse_config_text(read_file(c.config), base);
  for (const auto& s : c.sets) apply_override(base, s);
  const GradCheckSummary s = grad_check_command(base.model, base.train.seed);
  std::cout << s.to_table();
  write_text(c.out, s.to_csv());
  return s.passed ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"skipxl: transformer-XL with skip-retain training and cross-head attention"};
  app.require_subcommand(1);

  Common train_c, eval_c, prune_c, audit_c, context_c, grad_c;
  std::string resume, eval_ckpt, eval_split = "valid", prune_ckpt, prune_split = "valid",
                      prune_ref, prune_table;
  std::int64_t audit_steps = 200;
  std::size_t samples = 100000;

  auto* train = app.add_subcommand("train", "train a model, writing a loss log and checkpoints");
  add_common(train, train_c);
  train->add_option("--resume", resume, "continue from a training checkpoint");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval, eval_c);
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  eval->add_option("--split", eval_split, "train, valid or test");

  auto* prune = app.add_subcommand("prune", "single-head pruning sweep");
  add_common(prune, prune_c);
  prune->add_option("--checkpoint", prune_ckpt, "checkpoint file")->required();
  prune->add_option("--split", prune_split, "train, valid or test");
  prune->add_option("--reference", prune_ref, "earlier prune report (csv) for % stddev change");
  prune->add_option("--table", prune_table, "also write the aligned table here");

  auto* audit = app.add_subcommand("audit", "relative-position histograms per layer and phase");
  add_common(audit, audit_c);
  audit->add_option("--steps", audit_steps, "forward steps per phase");

  auto* context = app.add_subcommand("context", "expected context of the skip schedule");
  add_common(context, context_c);
  context->add_option("--samples", samples, "simulated masks");

  auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient check on a tiny model");
  add_common(grad, grad_c);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return cmd_train(train_c, resume);
    if (*eval) return cmd_eval(eval_c, eval_ckpt, eval_split);
    if (*prune) return cmd_prune(prune_c, prune_ckpt, prune_split, prune_ref, prune_table);
    if (*audit) return cmd_audit(audit_c, audit_steps);
    if (*context) return cmd_context(context_c, samples);
    if (*grad) return cmd_gradcheck(grad_c);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
