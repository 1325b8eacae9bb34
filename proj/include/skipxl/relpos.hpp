#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "skipxl/tensor.hpp"

namespace skipxl {

// Absolute token positions of stored activations: memory slots first, then the
// current block. Strictly increasing.
using PositionTags = std::vector<std::int64_t>;

struct RelativeEncoding {
  std::int64_t offset = 0;
  std::vector<double> vector;
};

// Sinusoidal encoding of a relative offset r (0 = most recent token):
// sin(r / 10000^(2i/d)) in the first half, cos(...) in the second half.
RelativeEncoding sinusoidal_pe(std::int64_t r, std::size_t d);

// Throws InputError unless tags are strictly increasing.
void validate_tags(const PositionTags& tags);

PositionTags consecutive_tags(std::int64_t first, std::size_t count);

// offset(i, j) = query_tag[i] - key_tag[j]. Negative entries are future keys.
struct OffsetMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::int64_t> offsets;

  std::int64_t at(std::size_t i, std::size_t j) const { return offsets[i * cols + j]; }
  bool visible(std::size_t i, std::size_t j) const { return at(i, j) >= 0; }
  std::int64_t max_visible() const;
  std::size_t visible_count() const;
};

OffsetMatrix relative_offsets(const PositionTags& query_tags, const PositionTags& key_tags);

// One encoding row per distinct visible offset, ascending. index[i*cols + j]
// selects the row for pair (i, j), or -1 for a masked (future) pair.
struct EncodedOffsets {
  std::vector<std::int64_t> distinct;
  Tensor table;  // [distinct.size() × d], constant
  std::vector<std::int64_t> index;
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::vector<bool> visibility() const;
};

EncodedOffsets encode_offsets(const OffsetMatrix& offsets, std::size_t d);

}  // namespace skipxl
