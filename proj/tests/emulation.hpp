#pragma once

// Scalar integer emulation of the quantized layer pipeline: quantize, plain
// integer matmuls on level matrices, then the per-element epilogue written
// out longhand. Works on dense matrices only.

#include <cmath>
#include <cstdint>

#include "oracles.hpp"
#include "qgtc/engine.hpp"

namespace qgtc::oracle {

using DMatrix = Matrix<double>;

inline std::vector<std::int64_t> row_sums(const I64Matrix &m) {
  std::vector<std::int64_t> s(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) s[i] += m(i, j);
  return s;
}

inline std::vector<std::int64_t> col_sums(const I64Matrix &m) {
  std::vector<std::int64_t> s(m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) s[j] += m(i, j);
  return s;
}

inline double step(const QuantParams &p) {
  return (p.alpha_max - p.alpha_min) / std::pow(2.0, p.bits);
}

// sum_k (lmin + ls*L_ik)(rmin + rs*R_kj), expanded the same way the kernels do.
inline DMatrix dequant_product(const I64Matrix &l, double lmin, double ls, const I64Matrix &r,
                               double rmin, double rs) {
  const auto z = int_gemm(l, r);
  const auto lr = row_sums(l);
  const auto rc = col_sums(r);
  const double k = static_cast<double>(l.cols());
  DMatrix out(z.rows(), z.cols());
  for (std::size_t i = 0; i < z.rows(); ++i)
    for (std::size_t j = 0; j < z.cols(); ++j)
      out(i, j) = ls * rs * static_cast<double>(z(i, j)) + lmin * rs * static_cast<double>(rc[j]) +
                  rmin * ls * static_cast<double>(lr[i]) + k * lmin * rmin;
  return out;
}

inline void finish(DMatrix &v, const LayerConfig &c) {
  for (std::size_t i = 0; i < v.rows(); ++i)
    for (std::size_t j = 0; j < v.cols(); ++j) {
      double x = v(i, j);
      if (!c.bias.empty()) x += c.bias[j];
      if (c.bn)
        x = (x - c.bn->mean[j]) / std::sqrt(c.bn->var[j] + c.bn->eps) * c.bn->gamma[j] +
            c.bn->beta[j];
      if (c.act == Activation::relu && !(x > 0.0)) x = 0.0;
      if (c.act == Activation::tanh) x = static_cast<double>(std::tanh(static_cast<float>(x)));
      v(i, j) = x;
    }
}

inline I64Matrix quantize_all(const DMatrix &v, const QuantParams &p) {
  I64Matrix q(v.rows(), v.cols());
  for (std::size_t i = 0; i < v.size(); ++i) q.data()[i] = quantize(v.data()[i], p);
  return q;
}

template <class T> I64Matrix widen(const Matrix<T> &m) {
  I64Matrix o(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.size(); ++i) o.data()[i] = static_cast<std::int64_t>(m.data()[i]);
  return o;
}

// Returns the real epilogue output of a layer before any re-quantization.
inline DMatrix emulate_layer(const I64Matrix &a, const I64Matrix &x, const QuantParams &xq,
                             const LayerConfig &c) {
  I64Matrix w(c.weight.rows(), c.weight.cols());
  for (std::size_t i = 0; i < w.size(); ++i) w.data()[i] = quantize(c.weight.data()[i], c.w_quant);
  const auto &mq = c.mid_quant;
  DMatrix out;
  if (c.order == LayerOrder::aggregate_then_update) {
    const auto y = quantize_all(dequant_product(a, 0.0, 1.0, x, xq.alpha_min, step(xq)), mq);
    out = dequant_product(y, mq.alpha_min, step(mq), w, c.w_quant.alpha_min, step(c.w_quant));
  } else {
    const auto m = quantize_all(
        dequant_product(x, xq.alpha_min, step(xq), w, c.w_quant.alpha_min, step(c.w_quant)), mq);
    out = dequant_product(a, 0.0, 1.0, m, mq.alpha_min, step(mq));
  }
  finish(out, c);
  return out;
}

inline RealMatrix emulate_model(const BinaryMatrix &adjacency, const I64Matrix &x_levels,
                                const QuantParams &xq, const ModelConfig &m) {
  const auto a = widen(adjacency);
  I64Matrix x = x_levels;
  QuantParams q = xq;
  DMatrix v;
  for (const auto &c : m.layers) {
    v = emulate_layer(a, x, q, c);
    if (c.out_quant) {
      x = quantize_all(v, *c.out_quant);
      q = *c.out_quant;
    }
  }
  RealMatrix out(v.rows(), v.cols());
  for (std::size_t i = 0; i < v.size(); ++i) out.data()[i] = static_cast<float>(v.data()[i]);
  return out;
}

// Convenience: emulate directly on a batch, using its packed contents as input.
inline RealMatrix emulate_batch(const SubgraphBatch &b, const ModelConfig &m) {
  return emulate_model(unpack(b.adjacency), widen(to_val(*b.features)), b.x_quant, m);
}

} // namespace qgtc::oracle
