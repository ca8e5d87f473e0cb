#pragma once

// Bit-tensor interface: quantize and pack a real matrix, decode it back to
// levels, and multiply two bit tensors to integers or to a new bit tensor.

#include <optional>

#include "qgtc/bitgemm.hpp"
#include "qgtc/bitpack.hpp"
#include "qgtc/engine.hpp"
#include "qgtc/quantizer.hpp"

namespace qgtc {

struct BitTensor {
  BitPlaneStack planes;
  QuantParams quant;

  std::size_t rows() const noexcept { return planes.rows(); }
  std::size_t cols() const noexcept { return planes.cols(); }
  unsigned bits() const noexcept { return planes.bits(); }
};

// Without an explicit range the tensor's own [min, max] is used.
inline BitTensor to_bit(const RealMatrix &x, unsigned nbits,
                        std::optional<QuantParams> range = std::nullopt,
                        Orientation o = Orientation::row_wise) {
  if (nbits < 1 || nbits > kMaxBits)
    throw ParameterError("nbits must be in [1, 8], got " + std::to_string(nbits));
  if (x.empty()) throw ShapeError("to_bit needs a non-empty 2-D matrix");
  QuantParams p;
  if (range) {
    p = *range;
    p.bits = nbits;
    p.validate();
  } else {
    const auto [lo, hi] = value_range(x);
    p = range_params(lo, hi, nbits);
  }
  return {pack_stack(quantize_matrix(x, p), o, Pad::to8), p};
}

inline IntMatrix to_val(const BitTensor &t) { return to_val(t.planes); }

namespace detail {

inline BitPlaneStack as_orientation(const BitPlaneStack &s, Orientation o) {
  return s.orientation() == o ? s : repack(s, o, Pad::to8);
}

} // namespace detail

// Integer product of the quantized levels of a and b.
inline IntMatrix bitMM2Int(const BitTensor &a, const BitTensor &b, const GemmOptions &opts = {}) {
  if (a.cols() != b.rows())
    throw ShapeError("inner dimensions differ: " + std::to_string(a.cols()) + " vs " +
                     std::to_string(b.rows()));
  return gemm_sbit_by_tbit(detail::as_orientation(a.planes, Orientation::column_wise),
                           detail::as_orientation(b.planes, Orientation::row_wise), opts);
}

// bitMM2Int re-quantized to out_bits, over the product's own range unless one
// is given.
inline BitTensor bitMM2Bit(const BitTensor &a, const BitTensor &b, unsigned out_bits,
                           std::optional<QuantParams> range = std::nullopt,
                           const GemmOptions &opts = {}) {
  if (out_bits < 1 || out_bits > kMaxBits)
    throw ParameterError("out_bits must be in [1, 8], got " + std::to_string(out_bits));
  const IntMatrix z = bitMM2Int(a, b, opts);
  QuantParams p;
  if (range) {
    p = *range;
    p.bits = out_bits;
    p.validate();
  } else {
    const auto [lo, hi] = value_range(z);
    p = range_params(lo, hi, out_bits);
  }
  Matrix<double> zd(z.rows(), z.cols());
  for (std::size_t i = 0; i < z.size(); ++i) zd.data()[i] = z.data()[i];
  return {pack_stack(quantize_matrix(zd, p), a.planes.orientation(), Pad::to8), p};
}

} // namespace qgtc
