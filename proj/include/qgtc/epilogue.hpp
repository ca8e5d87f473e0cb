#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "qgtc/bitpack.hpp"
#include "qgtc/errors.hpp"
#include "qgtc/matrix.hpp"
#include "qgtc/quantizer.hpp"

namespace qgtc {

enum class Activation { none, relu, tanh };

// Per-output-column batch norm: (x - mean) / sqrt(var + eps) * gamma + beta.
struct BatchNormParams {
  std::vector<double> mean;
  std::vector<double> var;
  std::vector<double> gamma;
  std::vector<double> beta;
  double eps = 1e-5;
};

// Reconstructs sum_k (lmin + ls*L_ik)(rmin + rs*R_kj) from the integer product
// Z = L*R of the quantized operands:
//   ls*rs*Z_ij + lmin*rs*colsum(R)_j + rmin*ls*rowsum(L)_i + K*lmin*rmin.
// Row/column sums may be left empty when their coefficient is zero.
struct AffineDequant {
  double lhs_min = 0.0;
  double lhs_scale = 1.0;
  double rhs_min = 0.0;
  double rhs_scale = 1.0;
  std::size_t inner_dim = 0;
  std::vector<std::int64_t> lhs_row_sums;
  std::vector<std::int64_t> rhs_col_sums;

  static AffineDequant between(const QuantParams &lhs, const QuantParams &rhs,
                               std::size_t inner_dim) {
    return {lhs.alpha_min, lhs.scale(), rhs.alpha_min, rhs.scale(), inner_dim, {}, {}};
  }
};

// Re-quantization target for fused bit-plane output.
struct OutputQuant {
  QuantParams params;
  Orientation orientation = Orientation::column_wise;
  Pad pad = Pad::to8;
};

struct EpilogueSpec {
  AffineDequant dequant;
  std::vector<double> bias; // empty = no bias
  std::optional<BatchNormParams> bn;
  Activation act = Activation::none;
  std::optional<OutputQuant> quant;

  void validate(std::size_t rows, std::size_t cols) const {
    const auto &d = dequant;
    if (d.lhs_min != 0.0 && d.rhs_col_sums.size() != cols)
      throw ShapeError("affine dequant needs one rhs column sum per output column");
    if (d.rhs_min != 0.0 && d.lhs_row_sums.size() != rows)
      throw ShapeError("affine dequant needs one lhs row sum per output row");
    if (!bias.empty() && bias.size() != cols) throw ShapeError("bias length != output cols");
    if (bn) {
      if (bn->mean.size() != cols || bn->var.size() != cols || bn->gamma.size() != cols ||
          bn->beta.size() != cols)
        throw ShapeError("batch-norm parameter count != output cols");
      for (std::size_t j = 0; j < cols; ++j)
        if (!(bn->var[j] + bn->eps > 0.0))
          throw ParameterError("batch-norm Var + eps must be positive (column " +
                               std::to_string(j) + ")");
    }
    if (quant) quant->params.validate();
  }
};

using EpilogueResult = std::variant<RealMatrix, BitPlaneStack>;

// Everything before re-quantization, for one output element.
inline double epilogue_value(const EpilogueSpec &e, std::size_t r, std::size_t c,
                             std::int64_t acc) noexcept {
  const auto &d = e.dequant;
  const double colsum = d.rhs_col_sums.empty() ? 0.0 : static_cast<double>(d.rhs_col_sums[c]);
  const double rowsum = d.lhs_row_sums.empty() ? 0.0 : static_cast<double>(d.lhs_row_sums[r]);
  double v = d.lhs_scale * d.rhs_scale * static_cast<double>(acc) +
             d.lhs_min * d.rhs_scale * colsum + d.rhs_min * d.lhs_scale * rowsum +
             static_cast<double>(d.inner_dim) * d.lhs_min * d.rhs_min;
  if (!e.bias.empty()) v += e.bias[c];
  if (e.bn) v = (v - e.bn->mean[c]) / std::sqrt(e.bn->var[c] + e.bn->eps) * e.bn->gamma[c] +
                e.bn->beta[c];
  switch (e.act) {
  case Activation::relu:
    v = v > 0.0 ? v : 0.0;
    break;
  case Activation::tanh:
    v = static_cast<double>(std::tanh(static_cast<float>(v)));
    break;
  case Activation::none:
    break;
  }
  return v;
}

// Collects epilogue output element by element; used by the fused kernels.
class EpilogueWriter {
public:
  EpilogueWriter(const EpilogueSpec &e, std::size_t rows, std::size_t cols) : spec_(e) {
    e.validate(rows, cols);
    if (e.quant) {
      scale_ = e.quant->params.scale();
      result_ = BitPlaneStack(e.quant->params.bits, e.quant->orientation, rows, cols, e.quant->pad);
    } else {
      result_ = RealMatrix(rows, cols);
    }
  }

  void put(std::size_t r, std::size_t c, std::int64_t acc) {
    const double v = epilogue_value(spec_, r, c, acc);
    if (auto *m = std::get_if<RealMatrix>(&result_)) {
      (*m)(r, c) = static_cast<float>(v);
      return;
    }
    auto &s = std::get<BitPlaneStack>(result_);
    const std::uint32_t q = detail::quantize_unchecked(v, spec_.quant->params, scale_);
    for (unsigned b = 0; b < s.bits(); ++b)
      if ((q >> b) & 1u) s.plane(b).set(r, c);
  }

  EpilogueResult take() && { return std::move(result_); }

private:
  const EpilogueSpec &spec_;
  double scale_ = 1.0;
  EpilogueResult result_;
};

inline EpilogueResult apply_epilogue(const IntMatrix &acc, const EpilogueSpec &e) {
  EpilogueWriter w(e, acc.rows(), acc.cols());
  for (std::size_t r = 0; r < acc.rows(); ++r)
    for (std::size_t c = 0; c < acc.cols(); ++c) w.put(r, c, acc(r, c));
  return std::move(w).take();
}

} // namespace qgtc
