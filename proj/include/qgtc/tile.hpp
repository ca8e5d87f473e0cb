#pragma once

#include <array>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "qgtc/bitpack.hpp"
#include "qgtc/errors.hpp"

namespace qgtc {

// Geometry of the 1-bit MMA primitive: 8 rows x 128 K-bits x 8 cols.
inline constexpr std::size_t kTileM = 8;
inline constexpr std::size_t kTileN = 8;
inline constexpr std::size_t kTileK = 128;
inline constexpr std::size_t kTileKWords = kTileK / 32;

// 8 lhs rows x 4 words, row-major.
using ATile = std::array<std::uint32_t, kTileM * kTileKWords>;
// 8 rhs columns x 4 words, column-major (one column's words contiguous).
using BTile = std::array<std::uint32_t, kTileN * kTileKWords>;
// 8 x 8 accumulator, row-major.
using TileAcc = std::array<std::uint32_t, kTileM * kTileN>;

// acc[i][j] += sum_w popcount(a[i][w] & b[j][w]).
inline void mma_tile_1bit(const ATile &a, const BTile &b, TileAcc &acc) noexcept {
  for (std::size_t i = 0; i < kTileM; ++i) {
    const std::uint32_t *ar = &a[i * kTileKWords];
    for (std::size_t j = 0; j < kTileN; ++j) {
      const std::uint32_t *bc = &b[j * kTileKWords];
      acc[i * kTileN + j] += static_cast<std::uint32_t>(
          std::popcount(ar[0] & bc[0]) + std::popcount(ar[1] & bc[1]) +
          std::popcount(ar[2] & bc[2]) + std::popcount(ar[3] & bc[3]));
    }
  }
}

inline void load_a_tile(const PackedBitMatrix &a, std::size_t row_tile, std::size_t k_tile,
                        ATile &out) noexcept {
  const std::size_t wpl = a.words_per_line();
  const std::uint32_t *base = a.words().data() + row_tile * kTileM * wpl + k_tile * kTileKWords;
  for (std::size_t i = 0; i < kTileM; ++i)
    for (std::size_t w = 0; w < kTileKWords; ++w) out[i * kTileKWords + w] = base[i * wpl + w];
}

inline void load_b_tile(const PackedBitMatrix &b, std::size_t k_tile, std::size_t col_tile,
                        BTile &out) noexcept {
  const std::size_t wpl = b.words_per_line();
  const std::uint32_t *base = b.words().data() + col_tile * kTileN * wpl + k_tile * kTileKWords;
  for (std::size_t j = 0; j < kTileN; ++j)
    for (std::size_t w = 0; w < kTileKWords; ++w) out[j * kTileKWords + w] = base[j * wpl + w];
}

// Zero/non-zero flag per 8x128 tile of a column-wise packed plane.
class TileMap {
public:
  TileMap() = default;
  TileMap(std::size_t row_tiles, std::size_t col_tiles)
      : row_tiles_(row_tiles), col_tiles_(col_tiles), zero_(row_tiles * col_tiles, 0) {}

  std::size_t row_tiles() const noexcept { return row_tiles_; }
  std::size_t col_tiles() const noexcept { return col_tiles_; }
  std::size_t total() const noexcept { return zero_.size(); }

  bool is_zero(std::size_t i, std::size_t j) const noexcept { return zero_[i * col_tiles_ + j]; }
  void mark_zero(std::size_t i, std::size_t j, bool z) noexcept { zero_[i * col_tiles_ + j] = z; }

  std::size_t zero_count() const noexcept {
    std::size_t n = 0;
    for (auto z : zero_) n += z;
    return n;
  }
  std::size_t nonzero_count() const noexcept { return total() - zero_count(); }

  friend bool operator==(const TileMap &, const TileMap &) = default;

private:
  std::size_t row_tiles_ = 0;
  std::size_t col_tiles_ = 0;
  std::vector<std::uint8_t> zero_;
};

// A tile is zero iff the OR of its 8x4 words is zero.
inline TileMap scan_zero_tiles(const PackedBitMatrix &a) {
  if (a.orientation() != Orientation::column_wise)
    throw ShapeError("zero-tile scan expects a column-wise packed matrix");
  TileMap map(a.padded_rows() / kTileM, a.padded_cols() / kTileK);
  const std::size_t wpl = a.words_per_line();
  const std::uint32_t *words = a.words().data();
  for (std::size_t i = 0; i < map.row_tiles(); ++i) {
    for (std::size_t j = 0; j < map.col_tiles(); ++j) {
      std::uint32_t any = 0;
      const std::uint32_t *base = words + i * kTileM * wpl + j * kTileKWords;
      for (std::size_t r = 0; r < kTileM; ++r)
        for (std::size_t w = 0; w < kTileKWords; ++w) any |= base[r * wpl + w];
      map.mark_zero(i, j, any == 0);
    }
  }
  return map;
}

} // namespace qgtc
