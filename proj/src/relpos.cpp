#include "skipxl/relpos.hpp"

#include <algorithm>
#include <cmath>

#include "skipxl/errors.hpp"

namespace skipxl {

RelativeEncoding sinusoidal_pe(std::int64_t r, std::size_t d) {
  if (d < 2 || d % 2 != 0) {
    throw ConfigError("sinusoidal_pe: dimension must be even and >= 2, got " + std::to_string(d));
  }
  if (r < 0) throw InputError("sinusoidal_pe: negative offset " + std::to_string(r));
  RelativeEncoding enc;
  enc.offset = r;
  enc.vector.resize(d);
  const std::size_t half = d / 2;
  const double rd = static_cast<double>(r);
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::pow(10000.0, 2.0 * static_cast<double>(i) / static_cast<double>(d));
    enc.vector[i] = std::sin(rd / freq);
    enc.vector[i + half] = std::cos(rd / freq);
  }
  return enc;
}

void validate_tags(const PositionTags& tags) {
  for (std::size_t i = 1; i < tags.size(); ++i) {
    if (tags[i] <= tags[i - 1]) {
      throw InputError("position tags not strictly increasing at index " + std::to_string(i));
    }
  }
}

PositionTags consecutive_tags(std::int64_t first, std::size_t count) {
  PositionTags tags(count);
  for (std::size_t i = 0; i < count; ++i) tags[i] = first + static_cast<std::int64_t>(i);
  return tags;
}

std::int64_t OffsetMatrix::max_visible() const {
  std::int64_t best = -1;
  for (auto o : offsets) best = std::max(best, o);
  return best;
}

std::size_t OffsetMatrix::visible_count() const {
  return static_cast<std::size_t>(
      std::count_if(offsets.begin(), offsets.end(), [](std::int64_t o) { return o >= 0; }));
}

OffsetMatrix relative_offsets(const PositionTags& query_tags, const PositionTags& key_tags) {
  OffsetMatrix m;
  m.rows = query_tags.size();
  m.cols = key_tags.size();
  m.offsets.resize(m.rows * m.cols);
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < m.cols; ++j) m.offsets[i * m.cols + j] = query_tags[i] - key_tags[j];
  return m;
}

std::vector<bool> EncodedOffsets::visibility() const {
  std::vector<bool> keep(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) keep[i] = index[i] >= 0;
  return keep;
}

EncodedOffsets encode_offsets(const OffsetMatrix& offsets, std::size_t d) {
  EncodedOffsets enc;
  enc.rows = offsets.rows;
  enc.cols = offsets.cols;
  for (auto o : offsets.offsets)
    if (o >= 0) enc.distinct.push_back(o);
  std::sort(enc.distinct.begin(), enc.distinct.end());
  enc.distinct.erase(std::unique(enc.distinct.begin(), enc.distinct.end()), enc.distinct.end());

  std::vector<double> table;
  table.reserve(enc.distinct.size() * d);
  for (auto o : enc.distinct) {
    const auto pe = sinusoidal_pe(o, d);
    table.insert(table.end(), pe.vector.begin(), pe.vector.end());
  }
  enc.table = Tensor::from_values({enc.distinct.size(), d}, std::move(table));

  enc.index.resize(offsets.offsets.size());
  for (std::size_t k = 0; k < offsets.offsets.size(); ++k) {
    const auto o = offsets.offsets[k];
    if (o < 0) {
      enc.index[k] = -1;
    } else {
      const auto it = std::lower_bound(enc.distinct.begin(), enc.distinct.end(), o);
      enc.index[k] = static_cast<std::int64_t>(it - enc.distinct.begin());
    }
  }
  return enc;
}

}  // namespace skipxl
