#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "qgtc/bytes.hpp"
#include "qgtc/errors.hpp"
#include "qgtc/matrix.hpp"
#include "qgtc/quantizer.hpp"

namespace qgtc {

constexpr std::size_t pad8(std::size_t n) noexcept { return (n + 7) / 8 * 8; }
constexpr std::size_t pad128(std::size_t n) noexcept { return (n + 127) / 128 * 128; }

enum class Pad : unsigned { to8 = 8, to128 = 128 };

constexpr std::size_t pad_to(std::size_t n, Pad p) noexcept {
  return p == Pad::to8 ? pad8(n) : pad128(n);
}

// Column-wise: each matrix row is a line of words running along the columns
// (the A operand of C = A x B). Row-wise: each matrix column is a line of
// words running down the rows (the B operand).
enum class Orientation : std::uint8_t { column_wise = 0, row_wise = 1 };

// One bit plane packed into 32-bit words, bit j of a word holding line
// offset j (little-endian). Lines are stored contiguously, words within a
// line in ascending order. Padding bits are always zero.
class PackedBitMatrix {
public:
  PackedBitMatrix() = default;

  // Zero matrix. `pad` selects PAD8/PAD128 for the dimension that is not the
  // packed one (rows for column-wise, cols for row-wise); the packed
  // dimension always uses PAD128.
  PackedBitMatrix(Orientation o, std::size_t rows, std::size_t cols, Pad pad = Pad::to8)
      : orientation_(o), logical_rows_(rows), logical_cols_(cols) {
    if (o == Orientation::column_wise) {
      padded_rows_ = pad_to(rows, pad);
      padded_cols_ = pad128(cols);
    } else {
      padded_rows_ = pad128(rows);
      padded_cols_ = pad_to(cols, pad);
    }
    words_.assign(padded_rows_ * padded_cols_ / 32, 0u);
  }

  // Adopts raw words; throws StructureError unless every invariant holds.
  PackedBitMatrix(Orientation o, std::size_t rows, std::size_t cols, std::size_t padded_rows,
                  std::size_t padded_cols, std::vector<std::uint32_t> words)
      : orientation_(o), logical_rows_(rows), logical_cols_(cols), padded_rows_(padded_rows),
        padded_cols_(padded_cols), words_(std::move(words)) {
    validate();
  }

  Orientation orientation() const noexcept { return orientation_; }
  std::size_t logical_rows() const noexcept { return logical_rows_; }
  std::size_t logical_cols() const noexcept { return logical_cols_; }
  std::size_t padded_rows() const noexcept { return padded_rows_; }
  std::size_t padded_cols() const noexcept { return padded_cols_; }

  // Number of lines and words per line.
  std::size_t lines() const noexcept {
    return orientation_ == Orientation::column_wise ? padded_rows_ : padded_cols_;
  }
  std::size_t words_per_line() const noexcept {
    return (orientation_ == Orientation::column_wise ? padded_cols_ : padded_rows_) / 32;
  }

  std::span<const std::uint32_t> words() const noexcept { return words_; }
  std::span<std::uint32_t> words() noexcept { return words_; }
  std::span<const std::uint32_t> line(std::size_t i) const noexcept {
    return words().subspan(i * words_per_line(), words_per_line());
  }

  bool get(std::size_t r, std::size_t c) const noexcept {
    const auto [w, b] = locate(r, c);
    return (words_[w] >> b) & 1u;
  }
  void set(std::size_t r, std::size_t c, bool v = true) noexcept {
    const auto [w, b] = locate(r, c);
    if (v)
      words_[w] |= std::uint32_t{1} << b;
    else
      words_[w] &= ~(std::uint32_t{1} << b);
  }

  // The PAD8/PAD128 choice made for the selectable dimension.
  Pad pad() const noexcept {
    const std::size_t logical =
        orientation_ == Orientation::column_wise ? logical_rows_ : logical_cols_;
    const std::size_t padded =
        orientation_ == Orientation::column_wise ? padded_rows_ : padded_cols_;
    return padded == pad8(logical) ? Pad::to8 : Pad::to128;
  }

  bool same_layout(const PackedBitMatrix &o) const noexcept {
    return orientation_ == o.orientation_ && logical_rows_ == o.logical_rows_ &&
           logical_cols_ == o.logical_cols_ && padded_rows_ == o.padded_rows_ &&
           padded_cols_ == o.padded_cols_;
  }

  void validate() const {
    const bool colwise = orientation_ == Orientation::column_wise;
    const std::size_t packed_logical = colwise ? logical_cols_ : logical_rows_;
    const std::size_t packed_padded = colwise ? padded_cols_ : padded_rows_;
    const std::size_t other_logical = colwise ? logical_rows_ : logical_cols_;
    const std::size_t other_padded = colwise ? padded_rows_ : padded_cols_;
    if (packed_padded != pad128(packed_logical))
      throw StructureError("packed dimension must be PAD128 of its logical size");
    if (other_padded != pad8(other_logical) && other_padded != pad128(other_logical))
      throw StructureError("padded dimension must be PAD8 or PAD128 of its logical size");
    if (words_.size() != padded_rows_ * padded_cols_ / 32)
      throw StructureError("word count does not match padded dims");
    for (std::size_t l = 0; l < lines(); ++l) {
      const auto ln = line(l);
      if (l >= other_logical) {
        for (auto w : ln)
          if (w) throw StructureError("non-zero padding line");
        continue;
      }
      for (std::size_t w = 0; w < ln.size(); ++w) {
        const std::size_t first = w * 32;
        if (first + 32 <= packed_logical) continue;
        const std::size_t valid = packed_logical > first ? packed_logical - first : 0;
        const std::uint32_t mask = valid == 0 ? 0u : (0xffffffffu >> (32 - valid));
        if (ln[w] & ~mask) throw StructureError("non-zero padding bits");
      }
    }
  }

  friend bool operator==(const PackedBitMatrix &, const PackedBitMatrix &) = default;

private:
  std::pair<std::size_t, unsigned> locate(std::size_t r, std::size_t c) const noexcept {
    if (orientation_ == Orientation::column_wise)
      return {r * (padded_cols_ / 32) + c / 32, static_cast<unsigned>(c % 32)};
    return {c * (padded_rows_ / 32) + r / 32, static_cast<unsigned>(r % 32)};
  }

  Orientation orientation_ = Orientation::column_wise;
  std::size_t logical_rows_ = 0;
  std::size_t logical_cols_ = 0;
  std::size_t padded_rows_ = 0;
  std::size_t padded_cols_ = 0;
  std::vector<std::uint32_t> words_;
};

namespace detail {

inline PackedBitMatrix pack_plane(const BinaryMatrix &plane, Orientation o, Pad pad) {
  PackedBitMatrix out(o, plane.rows(), plane.cols(), pad);
  for (std::size_t r = 0; r < plane.rows(); ++r) {
    for (std::size_t c = 0; c < plane.cols(); ++c) {
      const auto v = plane(r, c);
      if (v > 1)
        throw DataError("non-binary entry at (" + std::to_string(r) + ", " + std::to_string(c) +
                        ")");
      if (v) out.set(r, c);
    }
  }
  return out;
}

} // namespace detail

inline PackedBitMatrix pack_colwise(const BinaryMatrix &plane, Pad pad_rows_to = Pad::to8) {
  return detail::pack_plane(plane, Orientation::column_wise, pad_rows_to);
}

inline PackedBitMatrix pack_rowwise(const BinaryMatrix &plane, Pad pad_cols_to = Pad::to8) {
  return detail::pack_plane(plane, Orientation::row_wise, pad_cols_to);
}

inline BinaryMatrix unpack(const PackedBitMatrix &p) {
  if (p.words().size() != p.padded_rows() * p.padded_cols() / 32)
    throw StructureError("word count does not match padded dims");
  BinaryMatrix out(p.logical_rows(), p.logical_cols());
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) = p.get(r, c) ? 1 : 0;
  return out;
}

// An n-bit matrix stored as n packed planes sharing one layout; plane i
// holds bit i.
class BitPlaneStack {
public:
  BitPlaneStack() = default;
  explicit BitPlaneStack(std::vector<PackedBitMatrix> planes) : planes_(std::move(planes)) {
    validate();
  }
  // `bits` zero planes of the given layout.
  BitPlaneStack(unsigned bits, Orientation o, std::size_t rows, std::size_t cols,
                Pad pad = Pad::to8)
      : planes_(bits, PackedBitMatrix(o, rows, cols, pad)) {
    validate();
  }

  unsigned bits() const noexcept { return static_cast<unsigned>(planes_.size()); }
  const PackedBitMatrix &plane(unsigned i) const { return planes_.at(i); }
  PackedBitMatrix &plane(unsigned i) { return planes_.at(i); }
  std::span<const PackedBitMatrix> planes() const noexcept { return planes_; }

  const PackedBitMatrix &layout() const { return planes_.front(); }
  Orientation orientation() const { return layout().orientation(); }
  std::size_t rows() const { return layout().logical_rows(); }
  std::size_t cols() const { return layout().logical_cols(); }

  std::uint32_t value(std::size_t r, std::size_t c) const noexcept {
    std::uint32_t v = 0;
    for (unsigned b = 0; b < bits(); ++b) v |= static_cast<std::uint32_t>(planes_[b].get(r, c)) << b;
    return v;
  }

  void validate() const {
    if (planes_.empty() || planes_.size() > kMaxBits)
      throw StructureError("bit-plane stack needs between 1 and 8 planes");
    for (const auto &p : planes_)
      if (!p.same_layout(planes_.front()))
        throw StructureError("bit planes have inconsistent layout");
  }

  friend bool operator==(const BitPlaneStack &, const BitPlaneStack &) = default;

private:
  std::vector<PackedBitMatrix> planes_;
};

// Decompose and pack in one pass (the 3D-stacked representation).
inline BitPlaneStack pack_stack(const QuantMatrix &qm, Orientation o, Pad pad = Pad::to8) {
  BitPlaneStack out(qm.bits, o, qm.rows(), qm.cols(), pad);
  for (std::size_t r = 0; r < qm.rows(); ++r) {
    for (std::size_t c = 0; c < qm.cols(); ++c) {
      const std::uint32_t v = qm.values(r, c);
      if (v >> qm.bits) throw DataError("quantized value exceeds bit width");
      for (unsigned b = 0; b < qm.bits; ++b)
        if ((v >> b) & 1u) out.plane(b).set(r, c);
    }
  }
  return out;
}

inline BitPlaneStack pack_planes(const UnpackedPlanes &planes, Orientation o, Pad pad = Pad::to8) {
  std::vector<PackedBitMatrix> packed;
  packed.reserve(planes.size());
  for (const auto &p : planes) packed.push_back(detail::pack_plane(p, o, pad));
  return BitPlaneStack(std::move(packed));
}

inline UnpackedPlanes unpack_stack(const BitPlaneStack &s) {
  UnpackedPlanes out;
  for (const auto &p : s.planes()) out.push_back(unpack(p));
  return out;
}

inline IntMatrix to_val(const BitPlaneStack &s) {
  s.validate();
  IntMatrix out(s.rows(), s.cols());
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) = static_cast<std::int32_t>(s.value(r, c));
  return out;
}

inline QuantMatrix to_quant(const BitPlaneStack &s) {
  s.validate();
  QuantMatrix out{Matrix<std::uint32_t>(s.rows(), s.cols()), s.bits()};
  for (std::size_t r = 0; r < s.rows(); ++r)
    for (std::size_t c = 0; c < s.cols(); ++c) out.values(r, c) = s.value(r, c);
  return out;
}

// Same logical content in another orientation / padding.
inline BitPlaneStack repack(const BitPlaneStack &s, Orientation o, Pad pad) {
  if (s.orientation() == o && s.layout().pad() == pad) return s;
  BitPlaneStack out(s.bits(), o, s.rows(), s.cols(), pad);
  for (unsigned b = 0; b < s.bits(); ++b)
    for (std::size_t r = 0; r < s.rows(); ++r)
      for (std::size_t c = 0; c < s.cols(); ++c)
        if (s.plane(b).get(r, c)) out.plane(b).set(r, c);
  return out;
}

// Sum of quantized values along each packed line: per row for a column-wise
// stack, per column for a row-wise stack.
inline std::vector<std::int64_t> line_sums(const BitPlaneStack &s) {
  const std::size_t n = s.orientation() == Orientation::column_wise ? s.rows() : s.cols();
  std::vector<std::int64_t> sums(n, 0);
  for (unsigned b = 0; b < s.bits(); ++b) {
    const auto &p = s.plane(b);
    for (std::size_t l = 0; l < n; ++l) {
      std::int64_t ones = 0;
      for (auto w : p.line(l)) ones += std::popcount(w);
      sums[l] += ones << b;
    }
  }
  return sums;
}

// --- serialization -------------------------------------------------------

inline constexpr std::uint16_t kStackFormatVersion = 1;

inline void write_stack(io::ByteWriter &w, const BitPlaneStack &s) {
  s.validate();
  const auto &l = s.layout();
  w.bytes("QGTC");
  w.u16(kStackFormatVersion);
  w.u8(static_cast<std::uint8_t>(l.orientation()));
  w.u8(static_cast<std::uint8_t>(s.bits()));
  w.u32(static_cast<std::uint32_t>(l.logical_rows()));
  w.u32(static_cast<std::uint32_t>(l.logical_cols()));
  w.u32(static_cast<std::uint32_t>(l.padded_rows()));
  w.u32(static_cast<std::uint32_t>(l.padded_cols()));
  for (const auto &p : s.planes())
    for (auto word : p.words()) w.u32(word);
}

inline BitPlaneStack read_stack(io::ByteReader &r) {
  r.expect_magic("QGTC");
  if (const auto v = r.u16(); v != kStackFormatVersion)
    throw FormatError("unsupported bit-plane stack version " + std::to_string(v));
  const auto orient = r.u8();
  if (orient > 1) throw FormatError("bad orientation byte");
  const unsigned bits = r.u8();
  if (bits < 1 || bits > kMaxBits) throw FormatError("bit count out of range");
  const std::size_t lr = r.u32(), lc = r.u32(), pr = r.u32(), pc = r.u32();
  if (pr % 8 || pc % 8 || (pr * pc) % 32) throw FormatError("padded dims not tile aligned");
  const std::size_t nwords = pr * pc / 32;
  r.need(nwords * bits * 4);
  std::vector<PackedBitMatrix> planes;
  planes.reserve(bits);
  try {
    for (unsigned b = 0; b < bits; ++b) {
      std::vector<std::uint32_t> words(nwords);
      for (auto &w : words) w = r.u32();
      planes.emplace_back(static_cast<Orientation>(orient), lr, lc, pr, pc, std::move(words));
    }
  } catch (const StructureError &e) {
    throw FormatError(std::string("invalid bit-plane payload: ") + e.what());
  }
  return BitPlaneStack(std::move(planes));
}

inline std::vector<char> serialize(const BitPlaneStack &s) {
  io::ByteWriter w;
  write_stack(w, s);
  return std::move(w).take();
}

inline BitPlaneStack deserialize(std::span<const char> bytes) {
  io::ByteReader r(bytes);
  auto s = read_stack(r);
  if (r.remaining() != 0) throw FormatError("trailing bytes after bit-plane stack");
  return s;
}

} // namespace qgtc
