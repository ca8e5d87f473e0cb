#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "qgtc/errors.hpp"
#include "qgtc/matrix.hpp"

namespace qgtc {

inline constexpr unsigned kMaxBits = 8;

// Per-tensor affine quantization range. A real value a maps to
// floor((a - alpha_min) / scale) with scale = (alpha_max - alpha_min) / 2^bits,
// clamped into [0, 2^bits - 1]. Dequantized value is alpha_min + scale * q.
struct QuantParams {
  double alpha_min = 0.0;
  double alpha_max = 1.0;
  unsigned bits = 8;

  double scale() const noexcept {
    return (alpha_max - alpha_min) / static_cast<double>(std::uint32_t{1} << bits);
  }
  std::uint32_t max_level() const noexcept { return (std::uint32_t{1} << bits) - 1; }

  void validate() const {
    if (bits < 1 || bits > kMaxBits)
      throw ParameterError("quantization bits must be in [1, 8], got " + std::to_string(bits));
    if (!std::isfinite(alpha_min) || !std::isfinite(alpha_max) || !(alpha_max > alpha_min))
      throw ParameterError("quantization range requires finite alpha_max > alpha_min");
  }

  friend bool operator==(const QuantParams &, const QuantParams &) = default;
};

inline QuantParams make_quant_params(double alpha_min, double alpha_max, unsigned bits) {
  QuantParams p{alpha_min, alpha_max, bits};
  p.validate();
  return p;
}

// Unsigned q-bit matrix, row-major; every value lies in [0, 2^bits - 1].
struct QuantMatrix {
  Matrix<std::uint32_t> values;
  unsigned bits = 1;

  std::size_t rows() const noexcept { return values.rows(); }
  std::size_t cols() const noexcept { return values.cols(); }

  friend bool operator==(const QuantMatrix &, const QuantMatrix &) = default;
};

namespace detail {

inline std::uint32_t quantize_unchecked(double alpha, const QuantParams &p, double scale) noexcept {
  const double level = std::floor((alpha - p.alpha_min) / scale);
  if (!(level > 0.0)) return 0;
  const double top = static_cast<double>(p.max_level());
  return level >= top ? p.max_level() : static_cast<std::uint32_t>(level);
}

} // namespace detail

inline std::uint32_t quantize_scalar(double alpha, const QuantParams &p) {
  p.validate();
  if (std::isnan(alpha)) throw DataError("cannot quantize NaN");
  return detail::quantize_unchecked(alpha, p, p.scale());
}

inline double dequantize_scalar(std::uint32_t level, const QuantParams &p) noexcept {
  return p.alpha_min + p.scale() * static_cast<double>(level);
}

template <class Real> QuantMatrix quantize_matrix(const Matrix<Real> &m, const QuantParams &p) {
  p.validate();
  const double scale = p.scale();
  QuantMatrix out{Matrix<std::uint32_t>(m.rows(), m.cols()), p.bits};
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) {
      const double v = static_cast<double>(m(r, c));
      if (!std::isfinite(v))
        throw DataError("non-finite element at (" + std::to_string(r) + ", " +
                        std::to_string(c) + ")");
      out.values(r, c) = detail::quantize_unchecked(v, p, scale);
    }
  }
  return out;
}

// Logical (unpacked) bit planes; plane i holds bit i of every element.
using UnpackedPlanes = std::vector<BinaryMatrix>;

inline UnpackedPlanes bit_decompose(const QuantMatrix &qm) {
  if (qm.bits < 1 || qm.bits > kMaxBits) throw ParameterError("bit width out of range");
  UnpackedPlanes planes(qm.bits, BinaryMatrix(qm.rows(), qm.cols()));
  const auto values = qm.values.data();
  for (unsigned b = 0; b < qm.bits; ++b) {
    auto dst = planes[b].data();
    for (std::size_t i = 0; i < values.size(); ++i)
      dst[i] = static_cast<std::uint8_t>((values[i] >> b) & 1u);
  }
  return planes;
}

inline IntMatrix to_val(const UnpackedPlanes &planes) {
  if (planes.empty()) return {};
  const std::size_t rows = planes.front().rows(), cols = planes.front().cols();
  IntMatrix out(rows, cols);
  for (std::size_t b = 0; b < planes.size(); ++b) {
    if (planes[b].rows() != rows || planes[b].cols() != cols)
      throw StructureError("bit planes have inconsistent dims");
    const auto src = planes[b].data();
    auto dst = out.data();
    for (std::size_t i = 0; i < src.size(); ++i)
      dst[i] += static_cast<std::int32_t>(src[i] & 1u) << b;
  }
  return out;
}

} // namespace qgtc
