#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "skipxl/corpus.hpp"
#include "skipxl/model.hpp"
#include "skipxl/optim.hpp"
#include "skipxl/skip_schedule.hpp"

namespace skipxl {

struct TrainConfig {
  std::size_t batch_size = 4;
  std::int64_t steps = 2000;
  double lr = 2.5e-4;
  AdamConfig adam;
  std::int64_t max_iters = 16000;  // cosine annealing horizon
  double clip = 0.25;              // global grad-norm bound; 0 disables
  std::uint64_t seed = 1;
  SkipSchedule schedule = SkipSchedule::linear();
  std::int64_t eval_interval = 100;
  std::size_t eval_context = 64;  // memory + block tokens visible during evaluation
  std::size_t eval_block = 32;
  std::int64_t conv_window = 64000;
  double conv_delta = 0.2;
  std::int64_t checkpoint_interval = 0;  // 0 = only at the end

  void validate() const;
};

// Everything a run needs. Serialized as flat `key = value` lines; '#' starts a
// comment. See config_keys() for the full list.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  TokenLevel level = TokenLevel::Character;
  std::string train_path;
  std::string valid_path;
  std::string test_path;
  std::string log_path;
  std::string checkpoint_path;

  void validate() const;
};

// Desk-scale defaults: 4 layers, width 64, 4 heads of 16, M = L = 32.
RunConfig default_run_config();

const std::vector<std::string>& config_keys();

// Throws ConfigError for unknown keys or unparsable values.
void apply_setting(RunConfig& config, const std::string& key, const std::string& value);
// "key=value"
void apply_override(RunConfig& config, const std::string& assignment);

RunConfig parse_config_text(const std::string& text, RunConfig base = default_run_config());
RunConfig load_config(const std::filesystem::path& path);
std::string config_to_text(const RunConfig& config);

}  // namespace skipxl
