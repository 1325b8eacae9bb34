#include "skipxl/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "skipxl/errors.hpp"

namespace skipxl {

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (steps < 0) throw ConfigError("steps must be non-negative");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (max_iters <= 0) throw ConfigError("max_iters must be positive");
  if (eval_interval <= 0) throw ConfigError("eval_interval must be positive");
  if (eval_block == 0) throw ConfigError("eval_block must be positive");
  if (eval_context < eval_block) throw ConfigError("eval_context must be >= eval_block");
  if (conv_window <= 0) throw ConfigError("conv_window must be positive");
  if (!(conv_delta >= 0.0)) throw ConfigError("conv_delta must be non-negative");
  schedule.validate();
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
}

RunConfig default_run_config() {
  RunConfig c;
  c.model.n_layers = 4;
  c.model.d_model = 64;
  c.model.d_inner = 256;
  c.model.n_heads = 4;
  c.model.d_head = 16;
  c.model.mem_len = 32;
  c.model.block_size = 32;
  c.model.dropout = 0.1;
  c.model.beta = 0.1;
  c.model.init_std = 0.02;
  return c;
}

namespace {

const std::vector<std::string> kKeys = {
    "n_layers",   "d_model",      "d_inner",    "n_heads",         "d_head",
    "mem_len",    "block_size",   "vocab_size", "dropout",         "beta",
    "init_std",   "ln_eps",       "batch_size", "steps",           "lr",
    "adam_beta1", "adam_beta2",   "adam_eps",   "max_iters",       "clip",
    "seed",       "schedule",     "skip_p",     "eval_interval",   "eval_context",
    "eval_block", "conv_window",  "conv_delta", "checkpoint_interval", "level",
    "train_path", "valid_path",   "test_path",  "log_path",        "checkpoint_path"};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_integer(const std::string& key, const std::string& value) {
  T out{};
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("config key '" + key + "': '" + value + "' is not an integer");
  }
  return out;
}

double parse_real(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': '" + value + "' is not a number");
  }
}

std::string real_text(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

const std::vector<std::string>& config_keys() { return kKeys; }

void apply_setting(RunConfig& c, const std::string& raw_key, const std::string& raw_value) {
  const std::string key = trim(raw_key);
  const std::string value = trim(raw_value);
  auto sz = [&] { return parse_integer<std::size_t>(key, value); };
  auto i64 = [&] { return parse_integer<std::int64_t>(key, value); };
  auto real = [&] { return parse_real(key, value); };

  if (key == "n_layers") c.model.n_layers = sz();
  else if (key == "d_model") c.model.d_model = sz();
  else if (key == "d_inner") c.model.d_inner = sz();
  else if (key == "n_heads") c.model.n_heads = sz();
  else if (key == "d_head") c.model.d_head = sz();
  else if (key == "mem_len") c.model.mem_len = sz();
  else if (key == "block_size") c.model.block_size = sz();
  else if (key == "vocab_size") c.model.vocab_size = sz();
  else if (key == "dropout") c.model.dropout = real();
  else if (key == "beta") c.model.beta = real();
  else if (key == "init_std") c.model.init_std = real();
  else if (key == "ln_eps") c.model.ln_eps = real();
  else if (key == "batch_size") c.train.batch_size = sz();
  else if (key == "steps") c.train.steps = i64();
  else if (key == "lr") c.train.lr = real();
  else if (key == "adam_beta1") c.train.adam.beta1 = real();
  else if (key == "adam_beta2") c.train.adam.beta2 = real();
  else if (key == "adam_eps") c.train.adam.eps = real();
  else if (key == "max_iters") c.train.max_iters = i64();
  else if (key == "clip") c.train.clip = real();
  else if (key == "seed") c.train.seed = parse_integer<std::uint64_t>(key, value);
  else if (key == "schedule" || key == "variant")
    c.train.schedule = SkipSchedule::parse(value, c.train.schedule.p);
  else if (key == "skip_p" || key == "p") {
    c.train.schedule.p = real();
    c.train.schedule.validate();
  }
  else if (key == "eval_interval") c.train.eval_interval = i64();
  else if (key == "eval_context") c.train.eval_context = sz();
  else if (key == "eval_block") c.train.eval_block = sz();
  else if (key == "conv_window") c.train.conv_window = i64();
  else if (key == "conv_delta") c.train.conv_delta = real();
  else if (key == "checkpoint_interval") c.train.checkpoint_interval = i64();
  else if (key == "level") c.level = parse_level(value);
  else if (key == "train_path") c.train_path = value;
  else if (key == "valid_path") c.valid_path = value;
  else if (key == "test_path") c.test_path = value;
  else if (key == "log_path") c.log_path = value;
  else if (key == "checkpoint_path") c.checkpoint_path = value;
  else throw ConfigError("unknown config key '" + key + "'");
}

void apply_override(RunConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("override '" + assignment + "' is not of the form key=value");
  }
  apply_setting(config, assignment.substr(0, eq), assignment.substr(eq + 1));
}

RunConfig parse_config_text(const std::string& text, RunConfig base) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    // Several assignments may share a line: "schedule=uniform p=0.1".
    std::istringstream parts(line);
    std::string part;
    std::vector<std::string> tokens;
    while (parts >> part) tokens.push_back(part);
    // Re-join "key = value" written with spaces around '='.
    std::vector<std::string> assignments;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (i + 2 < tokens.size() && tokens[i + 1] == "=") {
        assignments.push_back(tokens[i] + "=" + tokens[i + 2]);
        i += 2;
      } else {
        assignments.push_back(tokens[i]);
      }
    }
    for (const auto& a : assignments) {
      try {
        apply_override(base, a);
      } catch (const ConfigError& e) {
        throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
      }
    }
  }
  return base;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

std::string config_to_text(const RunConfig& c) {
  std::ostringstream os;
  os << "n_layers = " << c.model.n_layers << "\n"
     << "d_model = " << c.model.d_model << "\n"
     << "d_inner = " << c.model.d_inner << "\n"
     << "n_heads = " << c.model.n_heads << "\n"
     << "d_head = " << c.model.d_head << "\n"
     << "mem_len = " << c.model.mem_len << "\n"
     << "block_size = " << c.model.block_size << "\n"
     << "vocab_size = " << c.model.vocab_size << "\n"
     << "dropout = " << real_text(c.model.dropout) << "\n"
     << "beta = " << real_text(c.model.beta) << "\n"
     << "init_std = " << real_text(c.model.init_std) << "\n"
     << "ln_eps = " << real_text(c.model.ln_eps) << "\n"
     << "batch_size = " << c.train.batch_size << "\n"
     << "steps = " << c.train.steps << "\n"
     << "lr = " << real_text(c.train.lr) << "\n"
     << "adam_beta1 = " << real_text(c.train.adam.beta1) << "\n"
     << "adam_beta2 = " << real_text(c.train.adam.beta2) << "\n"
     << "adam_eps = " << real_text(c.train.adam.eps) << "\n"
     << "max_iters = " << c.train.max_iters << "\n"
     << "clip = " << real_text(c.train.clip) << "\n"
     << "seed = " << c.train.seed << "\n"
     << "schedule = " << c.train.schedule.name() << "\n"
     << "skip_p = " << real_text(c.train.schedule.p) << "\n"
     << "eval_interval = " << c.train.eval_interval << "\n"
     << "eval_context = " << c.train.eval_context << "\n"
     << "eval_block = " << c.train.eval_block << "\n"
     << "conv_window = " << c.train.conv_window << "\n"
     << "conv_delta = " << real_text(c.train.conv_delta) << "\n"
     << "checkpoint_interval = " << c.train.checkpoint_interval << "\n"
     << "level = " << level_name(c.level) << "\n";
  auto path = [&](const char* key, const std::string& v) {
    if (!v.empty()) os << key << " = " << v << "\n";
  };
  path("train_path", c.train_path);
  path("valid_path", c.valid_path);
  path("test_path", c.test_path);
  path("log_path", c.log_path);
  path("checkpoint_path", c.checkpoint_path);
  return os.str();
}

}  // namespace skipxl
