#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "skipxl/errors.hpp"
#include "skipxl/relpos.hpp"

using namespace skipxl;

TEST_CASE("sinusoidal_pe r=0 d=4") {
  const auto e = sinusoidal_pe(0, 4);
  CHECK(e.vector == std::vector<double>{0, 0, 1, 1});
  CHECK(e.offset == 0);
}

TEST_CASE("sinusoidal_pe pythagorean identity") {
  for (std::int64_t r : {0, 1, 2, 7, 100, 12345}) {
    const auto e = sinusoidal_pe(r, 4);
    CHECK(std::abs(e.vector[0] * e.vector[0] + e.vector[2] * e.vector[2] - 1.0) < 1e-9);
    CHECK(std::abs(e.vector[1] * e.vector[1] + e.vector[3] * e.vector[3] - 1.0) < 1e-9);
    const auto w = sinusoidal_pe(r, 64);
    for (std::size_t i = 0; i < 32; ++i)
      CHECK(std::abs(w.vector[i] * w.vector[i] + w.vector[i + 32] * w.vector[i + 32] - 1.0) < 1e-9);
  }
}

TEST_CASE("sinusoidal_pe r=7 d=8 extended precision") {
  const auto e = sinusoidal_pe(7, 8);
  for (int i = 0; i < 4; ++i) {
    const long double freq = powl(10000.0L, 2.0L * i / 8.0L);
    CHECK(std::abs(e.vector[i] - (double)sinl(7.0L / freq)) < 1e-15);
    CHECK(std::abs(e.vector[i + 4] - (double)cosl(7.0L / freq)) < 1e-15);
  }
}

TEST_CASE("sinusoidal_pe rejects odd or tiny dimension") {
  CHECK_THROWS_AS(sinusoidal_pe(1, 3), ConfigError);
  CHECK_THROWS_AS(sinusoidal_pe(1, 0), ConfigError);
  CHECK_NOTHROW(sinusoidal_pe(1'000'000, 2));
}

TEST_CASE("tags") {
  CHECK(consecutive_tags(5, 3) == PositionTags{5, 6, 7});
  CHECK_NOTHROW(validate_tags({0, 2, 9}));
  CHECK_THROWS_AS(validate_tags({0, 2, 2}), InputError);
  CHECK_THROWS_AS(validate_tags({3, 1}), InputError);
}

TEST_CASE("fresh memory M=L=3 spans 0..5") {
  // memory holds D E F (3..5), block G H I (6..8)
  const auto q = consecutive_tags(6, 3);
  PositionTags k = consecutive_tags(3, 3);
  const auto blk = consecutive_tags(6, 3);
  k.insert(k.end(), blk.begin(), blk.end());
  const OffsetMatrix m = relative_offsets(q, k);
  CHECK(m.rows == 3);
  CHECK(m.cols == 6);
  for (std::size_t j = 0; j < 6; ++j) CHECK(m.at(2, j) == static_cast<std::int64_t>(5 - j));
  CHECK(m.max_visible() == 5);
  // future keys flagged
  CHECK_FALSE(m.visible(0, 4));
  CHECK(m.visible(0, 3));
  CHECK(m.visible_count() == 3 * 3 + 3 + 2 + 1);
}

TEST_CASE("stale memory after one skip spans 0..8") {
  // memory still holds A B C (0..2)
  const auto q = consecutive_tags(6, 3);
  PositionTags k = consecutive_tags(0, 3);
  const auto blk = consecutive_tags(6, 3);
  k.insert(k.end(), blk.begin(), blk.end());
  const OffsetMatrix m = relative_offsets(q, k);
  CHECK(m.at(2, 0) == 8);  // I reaching A
  CHECK(m.max_visible() == 8);
  const auto enc = encode_offsets(m, 8);
  CHECK(enc.distinct.back() == 8);
  const auto pe8 = sinusoidal_pe(8, 8);
  const auto row = enc.table.values().subspan(enc.distinct.size() * 8 - 8, 8);
  for (std::size_t i = 0; i < 8; ++i) CHECK(row[i] == pe8.vector[i]);
}

TEST_CASE("empty memory offsets are 0..L-1") {
  const auto q = consecutive_tags(0, 4);
  const OffsetMatrix m = relative_offsets(q, q);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j <= i; ++j) CHECK(m.at(i, j) == static_cast<std::int64_t>(i - j));
  CHECK(m.max_visible() == 3);
}

TEST_CASE("offsets are translation invariant") {
  PositionTags k = {1, 4, 5, 6, 7};
  PositionTags q = {5, 6, 7};
  const OffsetMatrix a = relative_offsets(q, k);
  for (auto& t : k) t += 1000;
  for (auto& t : q) t += 1000;
  CHECK(relative_offsets(q, k).offsets == a.offsets);
}

TEST_CASE("encode_offsets") {
  SUBCASE("single zero offset") {
    const OffsetMatrix m = relative_offsets({0}, {0});
    const auto enc = encode_offsets(m, 6);
    CHECK(enc.distinct == std::vector<std::int64_t>{0});
    CHECK(std::vector<double>(enc.table.values().begin(), enc.table.values().end()) ==
          std::vector<double>{0, 0, 0, 1, 1, 1});
    CHECK(enc.index == std::vector<std::int64_t>{0});
  }
  SUBCASE("offsets 0..5") {
    PositionTags k = consecutive_tags(0, 6);
    const OffsetMatrix m = relative_offsets({3, 4, 5}, k);
    const auto enc = encode_offsets(m, 4);
    CHECK(enc.distinct.size() == 6);
    for (std::size_t r = 0; r < 6; ++r) {
      const auto v = enc.table.values().subspan(r * 4, 4);
      CHECK(std::abs(v[0] * v[0] + v[2] * v[2] - 1.0) < 1e-9);
      CHECK(std::abs(v[1] * v[1] + v[3] * v[3] - 1.0) < 1e-9);
    }
    // index points at the row of the pair's offset, -1 for future keys
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 6; ++j) {
        const auto idx = enc.index[i * 6 + j];
        if (m.at(i, j) < 0)
          CHECK(idx == -1);
        else
          CHECK(enc.distinct[static_cast<std::size_t>(idx)] == m.at(i, j));
      }
    const auto vis = enc.visibility();
    CHECK(std::count(vis.begin(), vis.end(), true) == static_cast<long>(m.visible_count()));
  }
  SUBCASE("encodings depend only on the offset") {
    const auto a = encode_offsets(relative_offsets({10}, {3, 10}), 8);
    const auto b = encode_offsets(relative_offsets({107, 108}, {100, 101, 107}), 8);
    // offset 7 appears in both
    const auto row = [](const EncodedOffsets& e, std::int64_t o) {
      const auto it = std::find(e.distinct.begin(), e.distinct.end(), o);
      const auto r = static_cast<std::size_t>(it - e.distinct.begin());
      const auto v = e.table.values().subspan(r * 8, 8);
      return std::vector<double>(v.begin(), v.end());
    };
    CHECK(row(a, 7) == row(b, 7));
    CHECK(row(a, 7) == sinusoidal_pe(7, 8).vector);
  }
}

TEST_CASE("staleness law on tag arithmetic") {
  // Layer updated at block t0 with M=L=4, then skipped k times.
  const std::int64_t M = 4, L = 4;
  for (std::int64_t k = 0; k <= 5; ++k) {
    const PositionTags mem = consecutive_tags(4, 4);  // last update covered block 1 (tags 4..7)
    const auto q = consecutive_tags(8 + k * L, 4);
    PositionTags keys = mem;
    keys.insert(keys.end(), q.begin(), q.end());
    CHECK(relative_offsets(q, keys).max_visible() == M + L - 1 + k * L);
  }
}
