#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <limits>
#include <optional>
#include <span>
#include <thread>
#include <vector>

#include "qgtc/bitpack.hpp"
#include "qgtc/epilogue.hpp"
#include "qgtc/errors.hpp"
#include "qgtc/matrix.hpp"
#include "qgtc/tile.hpp"

namespace qgtc {

// Work counters of one kernel invocation. Fetches count lhs tile loads.
struct OpCounters {
  std::uint64_t tile_mma_count = 0;
  std::uint64_t tile_fetch_count = 0;
  std::uint64_t tiles_skipped = 0;
  std::uint64_t word_and_popcount_count = 0;

  OpCounters &operator+=(const OpCounters &o) noexcept {
    tile_mma_count += o.tile_mma_count;
    tile_fetch_count += o.tile_fetch_count;
    tiles_skipped += o.tiles_skipped;
    word_and_popcount_count += o.word_and_popcount_count;
    return *this;
  }
  friend bool operator==(const OpCounters &, const OpCounters &) = default;
};

// cross_bit: for every rhs plane, sweep all lhs tiles (each lhs tile is
// reloaded once per rhs plane). cross_tile: load each lhs tile once and
// multiply it against every rhs plane before moving on.
enum class Reuse { cross_bit, cross_tile };

struct GemmOptions {
  bool jump = true;
  Reuse reuse = Reuse::cross_tile;
  unsigned threads = 1;
};

namespace detail {

inline constexpr std::uint64_t kWordOpsPerMma = kTileM * kTileN * kTileKWords;

// Accumulators of one 8-row output strip, one buffer per bit position.
class StripAcc {
public:
  StripAcc(unsigned positions, std::size_t cols)
      : positions_(positions), cols_(cols), data_(positions * kTileM * cols, 0u) {}

  unsigned positions() const noexcept { return positions_; }
  std::size_t cols() const noexcept { return cols_; }
  void clear() noexcept { std::fill(data_.begin(), data_.end(), 0u); }

  std::uint32_t at(unsigned pos, std::size_t i, std::size_t j) const noexcept {
    return data_[(pos * kTileM + i) * cols_ + j];
  }
  void add_tile(unsigned pos, std::size_t col_tile, const TileAcc &t) noexcept {
    for (std::size_t i = 0; i < kTileM; ++i) {
      std::uint32_t *dst = &data_[(pos * kTileM + i) * cols_ + col_tile * kTileN];
      for (std::size_t j = 0; j < kTileN; ++j) dst[j] += t[i * kTileN + j];
    }
  }

private:
  unsigned positions_;
  std::size_t cols_;
  std::vector<std::uint32_t> data_;
};

inline void check_operands(std::span<const PackedBitMatrix> lhs,
                           std::span<const PackedBitMatrix> rhs) {
  if (lhs.empty() || rhs.empty()) throw ShapeError("bit GEMM needs at least one plane per side");
  const auto &l = lhs.front();
  const auto &r = rhs.front();
  if (l.orientation() != Orientation::column_wise)
    throw ShapeError("lhs operand must be column-wise packed");
  if (r.orientation() != Orientation::row_wise)
    throw ShapeError("rhs operand must be row-wise packed");
  for (const auto &p : lhs)
    if (!p.same_layout(l)) throw StructureError("lhs planes have inconsistent layout");
  for (const auto &p : rhs)
    if (!p.same_layout(r)) throw StructureError("rhs planes have inconsistent layout");
  if (l.logical_cols() != r.logical_rows() || l.padded_cols() != r.padded_rows())
    throw ShapeError("inner dimensions do not match (" + std::to_string(l.logical_cols()) +
                     " vs " + std::to_string(r.logical_rows()) + ")");
  const std::uint64_t worst = static_cast<std::uint64_t>(l.padded_cols()) *
                              std::min(lhs.size(), rhs.size());
  if (worst > std::numeric_limits<std::uint32_t>::max())
    throw OverflowError("inner dimension too large for 32-bit plane accumulators");
}

// Drives the tile loop over every lhs row strip and hands each finished strip
// to `sink(row_tile, strip)`. Strips are distributed over worker threads in
// groups of four (32 rows) so that row-wise packed outputs written by the
// sink never share a word between workers.
template <class Sink>
void run_bitserial(std::span<const PackedBitMatrix> lhs, std::span<const PackedBitMatrix> rhs,
                   std::span<const TileMap> lhs_maps, const GemmOptions &opts,
                   OpCounters *counters, Sink &&sink) {
  check_operands(lhs, rhs);
  const auto &l0 = lhs.front();
  const auto &r0 = rhs.front();
  const std::size_t row_tiles = l0.padded_rows() / kTileM;
  const std::size_t k_tiles = l0.padded_cols() / kTileK;
  const std::size_t col_tiles = (r0.logical_cols() + kTileN - 1) / kTileN;
  const unsigned positions = static_cast<unsigned>(lhs.size() + rhs.size() - 1);

  std::vector<TileMap> own_maps;
  if (opts.jump && lhs_maps.empty()) {
    for (const auto &p : lhs) own_maps.push_back(scan_zero_tiles(p));
    lhs_maps = own_maps;
  }
  if (opts.jump && lhs_maps.size() != lhs.size())
    throw ShapeError("one tile map per lhs plane required");

  auto work = [&](std::size_t first, std::size_t last, OpCounters &tally) {
    StripAcc strip(positions, col_tiles * kTileN);
    ATile a{};
    BTile b{};
    auto multiply = [&](unsigned li, unsigned ri, std::size_t k) {
      const auto &rp = rhs[ri];
      for (std::size_t c = 0; c < col_tiles; ++c) {
        TileAcc acc{};
        load_b_tile(rp, k, c, b);
        mma_tile_1bit(a, b, acc);
        strip.add_tile(li + ri, c, acc);
      }
      tally.tile_mma_count += col_tiles;
    };
    for (std::size_t rt = first; rt < last; ++rt) {
      strip.clear();
      if (opts.reuse == Reuse::cross_tile) {
        for (unsigned li = 0; li < lhs.size(); ++li) {
          for (std::size_t k = 0; k < k_tiles; ++k) {
            if (opts.jump && lhs_maps[li].is_zero(rt, k)) {
              ++tally.tiles_skipped;
              continue;
            }
            load_a_tile(lhs[li], rt, k, a);
            ++tally.tile_fetch_count;
            for (unsigned ri = 0; ri < rhs.size(); ++ri) multiply(li, ri, k);
          }
        }
      } else {
        for (unsigned ri = 0; ri < rhs.size(); ++ri) {
          for (unsigned li = 0; li < lhs.size(); ++li) {
            for (std::size_t k = 0; k < k_tiles; ++k) {
              if (opts.jump && lhs_maps[li].is_zero(rt, k)) {
                if (ri == 0) ++tally.tiles_skipped;
                continue;
              }
              load_a_tile(lhs[li], rt, k, a);
              ++tally.tile_fetch_count;
              multiply(li, ri, k);
            }
          }
        }
      }
      sink(rt, strip);
    }
  };

  const std::size_t groups = (row_tiles + 3) / 4;
  const std::size_t workers =
      std::max<std::size_t>(1, std::min<std::size_t>(opts.threads, groups));
  std::vector<OpCounters> tallies(workers);
  if (workers == 1) {
    work(0, row_tiles, tallies[0]);
  } else {
    std::vector<std::exception_ptr> errors(workers);
    {
      std::vector<std::jthread> pool;
      pool.reserve(workers);
      for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t g0 = groups * w / workers, g1 = groups * (w + 1) / workers;
        const std::size_t first = std::min(row_tiles, g0 * 4);
        const std::size_t last = std::min(row_tiles, g1 * 4);
        pool.emplace_back([&, first, last, w] {
          try {
            work(first, last, tallies[w]);
          } catch (...) {
            errors[w] = std::current_exception();
          }
        });
      }
    }
    for (auto &e : errors)
      if (e) std::rethrow_exception(e);
  }
  if (counters) {
    OpCounters total;
    for (const auto &t : tallies) total += t;
    total.word_and_popcount_count = total.tile_mma_count * kWordOpsPerMma;
    *counters += total;
  }
}

// Sum_pos strip[pos] << pos for one element, narrowed to int32.
inline std::int32_t reduce_positions(const StripAcc &s, std::size_t i, std::size_t j) {
  std::int64_t v = 0;
  for (unsigned p = 0; p < s.positions(); ++p) v += static_cast<std::int64_t>(s.at(p, i, j)) << p;
  if (v > std::numeric_limits<std::int32_t>::max())
    throw OverflowError("shifted reduction exceeds int32 output range");
  return static_cast<std::int32_t>(v);
}

} // namespace detail

// A (1-bit, column-wise) times each plane of X (row-wise): one exact integer
// product per X plane.
inline std::vector<IntMatrix> bmm_1bit_by_nbit(const PackedBitMatrix &a, const BitPlaneStack &x,
                                               const GemmOptions &opts = {},
                                               OpCounters *counters = nullptr,
                                               const TileMap *a_map = nullptr) {
  x.validate();
  const std::size_t rows = a.logical_rows(), cols = x.cols();
  std::vector<IntMatrix> out(x.bits(), IntMatrix(rows, cols));
  std::span<const TileMap> maps;
  if (a_map) maps = {a_map, 1};
  detail::run_bitserial({&a, 1}, x.planes(), maps, opts, counters,
                        [&](std::size_t rt, const detail::StripAcc &s) {
                          const std::size_t r0 = rt * kTileM;
                          for (std::size_t i = 0; i < kTileM && r0 + i < rows; ++i)
                            for (unsigned p = 0; p < x.bits(); ++p)
                              for (std::size_t j = 0; j < cols; ++j)
                                out[p](r0 + i, j) = static_cast<std::int32_t>(s.at(p, i, j));
                        });
  return out;
}

// Any-bitwidth product: sum_i sum_j (X_i * W_j) << (i + j), with per-bit-
// position 32-bit accumulators and a 64-bit shifted reduction.
inline IntMatrix gemm_sbit_by_tbit(const BitPlaneStack &x, const BitPlaneStack &w,
                                   const GemmOptions &opts = {}, OpCounters *counters = nullptr,
                                   std::span<const TileMap> x_maps = {}) {
  x.validate();
  w.validate();
  const std::size_t rows = x.rows(), cols = w.cols();
  IntMatrix out(rows, cols);
  detail::run_bitserial(x.planes(), w.planes(), x_maps, opts, counters,
                        [&](std::size_t rt, const detail::StripAcc &s) {
                          const std::size_t r0 = rt * kTileM;
                          for (std::size_t i = 0; i < kTileM && r0 + i < rows; ++i)
                            for (std::size_t j = 0; j < cols; ++j)
                              out(r0 + i, j) = detail::reduce_positions(s, i, j);
                        });
  return out;
}

// gemm_sbit_by_tbit with the epilogue applied to each strip as it finishes;
// bit-exact to apply_epilogue(gemm_sbit_by_tbit(x, w), epi).
inline EpilogueResult gemm_sbit_by_tbit_fused(const BitPlaneStack &x, const BitPlaneStack &w,
                                              const EpilogueSpec &epi,
                                              const GemmOptions &opts = {},
                                              OpCounters *counters = nullptr,
                                              std::span<const TileMap> x_maps = {}) {
  x.validate();
  w.validate();
  const std::size_t rows = x.rows(), cols = w.cols();
  EpilogueWriter writer(epi, rows, cols);
  detail::run_bitserial(x.planes(), w.planes(), x_maps, opts, counters,
                        [&](std::size_t rt, const detail::StripAcc &s) {
                          const std::size_t r0 = rt * kTileM;
                          for (std::size_t i = 0; i < kTileM && r0 + i < rows; ++i)
                            for (std::size_t j = 0; j < cols; ++j)
                              writer.put(r0 + i, j, detail::reduce_positions(s, i, j));
                        });
  return std::move(writer).take();
}

// Aggregation A * X with the per-plane products reduced by shift and the
// epilogue fused in; equal to gemm_sbit_by_tbit_fused with A as a 1-bit stack.
inline EpilogueResult aggregate_fused(const PackedBitMatrix &a, const BitPlaneStack &x,
                                      const EpilogueSpec &epi, const GemmOptions &opts = {},
                                      OpCounters *counters = nullptr,
                                      const TileMap *a_map = nullptr) {
  x.validate();
  const std::size_t rows = a.logical_rows(), cols = x.cols();
  EpilogueWriter writer(epi, rows, cols);
  std::span<const TileMap> maps;
  if (a_map) maps = {a_map, 1};
  detail::run_bitserial({&a, 1}, x.planes(), maps, opts, counters,
                        [&](std::size_t rt, const detail::StripAcc &s) {
                          const std::size_t r0 = rt * kTileM;
                          for (std::size_t i = 0; i < kTileM && r0 + i < rows; ++i)
                            for (std::size_t j = 0; j < cols; ++j)
                              writer.put(r0 + i, j, detail::reduce_positions(s, i, j));
                        });
  return std::move(writer).take();
}

} // namespace qgtc
