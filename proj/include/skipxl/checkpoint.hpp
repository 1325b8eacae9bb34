#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "skipxl/model.hpp"

namespace skipxl {

// Self-describing container.
//
//   bytes 0..7   magic "SKIPXLCK"
//   bytes 8..11  format version, u32 little-endian
//   bytes 12..19 header length H, u64 little-endian
//   next H bytes UTF-8 JSON: {"meta": {...}, "tensors": [{"name", "dtype",
//                "shape", "offset", "count"}, ...]}
//   remainder    payload; each tensor's raw little-endian values (f64 or i64)
//                at byte `offset` relative to the payload start.
struct CheckpointTensor {
  enum class DType { F64, I64 };

  std::string name;
  DType dtype = DType::F64;
  Shape shape;
  std::vector<double> f64;
  std::vector<std::int64_t> i64;
};

class Checkpoint {
 public:
  static constexpr std::uint32_t kVersion = 1;

  nlohmann::json meta = nlohmann::json::object();

  void add(const std::string& name, const Tensor& t);
  void add_f64(const std::string& name, Shape shape, std::vector<double> values);
  void add_i64(const std::string& name, Shape shape, std::vector<std::int64_t> values);

  bool contains(const std::string& name) const;
  const CheckpointTensor& get(const std::string& name) const;
  const std::vector<CheckpointTensor>& tensors() const { return tensors_; }

  std::vector<std::uint8_t> serialize() const;
  static Checkpoint deserialize(const std::vector<std::uint8_t>& bytes);

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

 private:
  std::vector<CheckpointTensor> tensors_;
};

nlohmann::json config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const nlohmann::json& j);

// Model parameters under their named_parameters() names plus meta.model_config.
void write_model(Checkpoint& ckpt, const Model& model);
Model read_model(const Checkpoint& ckpt);

}  // namespace skipxl
