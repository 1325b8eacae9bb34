#include "skipxl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "skipxl/errors.hpp"

namespace skipxl {

namespace {

constexpr char kMagic[8] = {'S', 'K', 'I', 'P', 'X', 'L', 'C', 'K'};

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  std::uint64_t bits = 0;
  static_assert(sizeof(T) <= sizeof(bits));
  std::memcpy(&bits, &value, sizeof(T));
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

template <typename T>
T get_le(const std::uint8_t* p) {
  std::uint64_t bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  T value;
  std::memcpy(&value, &bits, sizeof(T));
  return value;
}

}  // namespace

void Checkpoint::add(const std::string& name, const Tensor& t) {
  add_f64(name, t.shape(), std::vector<double>(t.values().begin(), t.values().end()));
}

void Checkpoint::add_f64(const std::string& name, Shape shape, std::vector<double> values) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("checkpoint tensor '" + name + "' size does not match its shape");
  }
  CheckpointTensor t;
  t.name = name;
  t.dtype = CheckpointTensor::DType::F64;
  t.shape = std::move(shape);
  t.f64 = std::move(values);
  tensors_.push_back(std::move(t));
}

void Checkpoint::add_i64(const std::string& name, Shape shape, std::vector<std::int64_t> values) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("checkpoint tensor '" + name + "' size does not match its shape");
  }
  CheckpointTensor t;
  t.name = name;
  t.dtype = CheckpointTensor::DType::I64;
  t.shape = std::move(shape);
  t.i64 = std::move(values);
  tensors_.push_back(std::move(t));
}

bool Checkpoint::contains(const std::string& name) const {
  for (const auto& t : tensors_)
    if (t.name == name) return true;
  return false;
}

const CheckpointTensor& Checkpoint::get(const std::string& name) const {
  for (const auto& t : tensors_)
    if (t.name == name) return t;
  throw IoError("checkpoint has no tensor '" + name + "'");
}

std::vector<std::uint8_t> Checkpoint::serialize() const {
  nlohmann::json index = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& t : tensors_) {
    const bool f = t.dtype == CheckpointTensor::DType::F64;
    const std::uint64_t count = f ? t.f64.size() : t.i64.size();
    index.push_back({{"name", t.name},
                     {"dtype", f ? "f64" : "i64"},
                     {"shape", t.shape},
                     {"offset", offset},
                     {"count", count}});
    offset += count * 8;
  }
  const std::string header = nlohmann::json{{"meta", meta}, {"tensors", index}}.dump();

  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_le<std::uint32_t>(out, kVersion);
  put_le<std::uint64_t>(out, header.size());
  out.insert(out.end(), header.begin(), header.end());
  out.reserve(out.size() + offset);
  for (const auto& t : tensors_) {
    if (t.dtype == CheckpointTensor::DType::F64) {
      for (double v : t.f64) put_le<double>(out, v);
    } else {
      for (std::int64_t v : t.i64) put_le<std::int64_t>(out, v);
    }
  }
  return out;
}

Checkpoint Checkpoint::deserialize(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 20 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw IoError("not a checkpoint file (bad magic)");
  }
  const auto version = get_le<std::uint32_t>(bytes.data() + 8);
  if (version != kVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto header_len = get_le<std::uint64_t>(bytes.data() + 12);
  if (20 + header_len > bytes.size()) throw IoError("truncated checkpoint header");
  const std::string header(bytes.begin() + 20, bytes.begin() + 20 + static_cast<std::ptrdiff_t>(header_len));
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed checkpoint header: ") + e.what());
  }
  const std::uint8_t* payload = bytes.data() + 20 + header_len;
  const std::size_t payload_len = bytes.size() - 20 - header_len;

  Checkpoint ckpt;
  ckpt.meta = j.at("meta");
  for (const auto& entry : j.at("tensors")) {
    const auto offset = entry.at("offset").get<std::uint64_t>();
    const auto count = entry.at("count").get<std::uint64_t>();
    if (offset + count * 8 > payload_len) {
      throw IoError("checkpoint tensor '" + entry.at("name").get<std::string>() + "' is truncated");
    }
    const Shape shape = entry.at("shape").get<Shape>();
    const std::string dtype = entry.at("dtype").get<std::string>();
    const std::uint8_t* p = payload + offset;
    if (dtype == "f64") {
      std::vector<double> v(count);
      for (std::size_t i = 0; i < count; ++i) v[i] = get_le<double>(p + 8 * i);
      ckpt.add_f64(entry.at("name"), shape, std::move(v));
    } else if (dtype == "i64") {
      std::vector<std::int64_t> v(count);
      for (std::size_t i = 0; i < count; ++i) v[i] = get_le<std::int64_t>(p + 8 * i);
      ckpt.add_i64(entry.at("name"), shape, std::move(v));
    } else {
      throw IoError("unknown checkpoint dtype '" + dtype + "'");
    }
  }
  return ckpt;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"n_layers", c.n_layers},   {"d_model", c.d_model},       {"d_inner", c.d_inner},
          {"n_heads", c.n_heads},     {"d_head", c.d_head},         {"mem_len", c.mem_len},
          {"block_size", c.block_size}, {"vocab_size", c.vocab_size}, {"dropout", c.dropout},
          {"beta", c.beta},           {"init_std", c.init_std},     {"ln_eps", c.ln_eps}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.n_layers = j.at("n_layers");
  c.d_model = j.at("d_model");
  c.d_inner = j.at("d_inner");
  c.n_heads = j.at("n_heads");
  c.d_head = j.at("d_head");
  c.mem_len = j.at("mem_len");
  c.block_size = j.at("block_size");
  c.vocab_size = j.at("vocab_size");
  c.dropout = j.at("dropout");
  c.beta = j.at("beta");
  c.init_std = j.at("init_std");
  c.ln_eps = j.at("ln_eps");
  return c;
}

void write_model(Checkpoint& ckpt, const Model& model) {
  ckpt.meta["model_config"] = config_to_json(model.config());
  for (const auto& p : model.named_parameters()) ckpt.add("param." + p.name, p.tensor);
}

Model read_model(const Checkpoint& ckpt) {
  const ModelConfig config = config_from_json(ckpt.meta.at("model_config"));
  Rng rng(0);
  Model model = Model::initialize(config, rng);
  for (auto& p : model.named_parameters()) {
    const auto& stored = ckpt.get("param." + p.name);
    if (stored.shape != p.tensor.shape() || stored.dtype != CheckpointTensor::DType::F64) {
      throw IoError("checkpoint parameter '" + p.name + "' has shape " + shape_str(stored.shape) +
                    ", model expects " + shape_str(p.tensor.shape()));
    }
    Tensor t = p.tensor;
    std::copy(stored.f64.begin(), stored.f64.end(), t.mutable_values().begin());
  }
  return model;
}

}  // namespace skipxl
