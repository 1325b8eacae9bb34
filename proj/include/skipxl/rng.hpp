#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace skipxl {

// Seedable generator with portable draws. The std distributions are
// implementation-defined, so uniform/normal/below are computed here from the
// raw 64-bit engine output to keep trajectories identical across toolchains.
class Rng {
 public:
  Rng() : engine_(0) {}
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n). Rejection sampling, unbiased.
  std::uint64_t below(std::uint64_t n);

  // Standard normal via Box-Muller (one value per call, no caching).
  double normal();

  bool bernoulli(double p) { return uniform() < p; }

  // Fisher-Yates permutation of {0..n-1}.
  std::vector<std::size_t> permutation(std::size_t n);

  // Text form of the full engine state; restores bit-exactly.
  std::string state() const;
  void set_state(const std::string& text);

  bool operator==(const Rng& other) const { return engine_ == other.engine_; }

 private:
  std::mt19937_64 engine_;
};

// One independent generator per stochastic purpose, all derived from a master
// seed. Toggling one mechanism never shifts another's draws.
struct RngStreams {
  Rng init;
  Rng dropout;
  Rng skip;
  Rng heads;
  Rng data;

  RngStreams() = default;
  explicit RngStreams(std::uint64_t master_seed);

  static std::uint64_t derive_seed(std::uint64_t master, std::string_view purpose);
};

}  // namespace skipxl
