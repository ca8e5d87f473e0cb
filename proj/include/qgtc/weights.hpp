#pragma once

// Weight file: "QGTW", u16 version, u32 layer count, then per layer
// u32 in, u32 out, in*out f32 row-major weights, f64 min, f64 max, u8 bits,
// u8 has_bias and, if set, out f32 bias values. Little-endian throughout.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "qgtc/bytes.hpp"
#include "qgtc/engine.hpp"
#include "qgtc/errors.hpp"

namespace qgtc {

inline constexpr std::uint16_t kWeightFormatVersion = 1;

struct LayerWeights {
  RealMatrix weight;
  QuantParams quant;
  std::vector<double> bias;

  bool operator==(const LayerWeights &) const = default;
};

inline std::vector<LayerWeights> model_weights(const ModelConfig &m) {
  std::vector<LayerWeights> w;
  for (const auto &c : m.layers) w.push_back({c.weight, c.w_quant, c.bias});
  return w;
}

inline std::vector<char> encode_weights(std::span<const LayerWeights> layers) {
  io::ByteWriter w;
  w.bytes("QGTW");
  w.u16(kWeightFormatVersion);
  w.u32(static_cast<std::uint32_t>(layers.size()));
  for (const auto &l : layers) {
    if (!l.bias.empty() && l.bias.size() != l.weight.cols())
      throw ShapeError("bias length != output dim");
    w.u32(static_cast<std::uint32_t>(l.weight.rows()));
    w.u32(static_cast<std::uint32_t>(l.weight.cols()));
    for (float v : l.weight.data()) w.f32(v);
    w.f64(l.quant.alpha_min);
    w.f64(l.quant.alpha_max);
    w.u8(static_cast<std::uint8_t>(l.quant.bits));
    w.u8(l.bias.empty() ? 0 : 1);
    for (double b : l.bias) w.f32(static_cast<float>(b));
  }
  return std::move(w).take();
}

inline std::vector<LayerWeights> decode_weights(std::span<const char> bytes) {
  io::ByteReader r(bytes);
  r.expect_magic("QGTW");
  if (r.u16() != kWeightFormatVersion) throw FormatError("unsupported weight file version");
  const std::uint32_t count = r.u32();
  std::vector<LayerWeights> layers;
  for (std::uint32_t l = 0; l < count; ++l) {
    const std::size_t in = r.u32(), out = r.u32();
    if (in == 0 || out == 0) throw FormatError("layer " + std::to_string(l) + " has a zero dimension");
    r.need(4 * in * out);
    LayerWeights lw;
    lw.weight = RealMatrix(in, out);
    for (auto &v : lw.weight.data()) v = r.f32();
    lw.quant.alpha_min = r.f64();
    lw.quant.alpha_max = r.f64();
    lw.quant.bits = r.u8();
    try {
      lw.quant.validate();
    } catch (const ParameterError &e) {
      throw FormatError("layer " + std::to_string(l) + ": " + e.what());
    }
    const std::uint8_t has_bias = r.u8();
    if (has_bias > 1) throw FormatError("bad bias flag");
    if (has_bias)
      for (std::size_t j = 0; j < out; ++j) lw.bias.push_back(r.f32());
    layers.push_back(std::move(lw));
  }
  if (r.remaining()) throw FormatError("trailing bytes after weight data");
  return layers;
}

inline void save_weights(std::span<const LayerWeights> layers, const std::string &path) {
  io::write_file(path, encode_weights(layers));
}

inline std::vector<LayerWeights> load_weights(const std::string &path) {
  return decode_weights(io::read_file(path));
}

// Installs loaded weights into a model of matching shape. The stored range is
// kept; the bit count follows the model.
inline void apply_weights(ModelConfig &m, std::span<const LayerWeights> layers) {
  if (layers.size() != m.layers.size())
    throw ShapeError("weight file has " + std::to_string(layers.size()) + " layers, model has " +
                     std::to_string(m.layers.size()));
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto &c = m.layers[l];
    const auto &w = layers[l];
    if (w.weight.rows() != c.in_dim() || w.weight.cols() != c.out_dim())
      throw ShapeError("layer " + std::to_string(l) + " weight is " +
                       std::to_string(w.weight.rows()) + "x" + std::to_string(w.weight.cols()) +
                       ", model expects " + std::to_string(c.in_dim()) + "x" +
                       std::to_string(c.out_dim()));
    c.weight = w.weight;
    c.w_quant = make_quant_params(w.quant.alpha_min, w.quant.alpha_max, m.weight_bits);
    c.bias = w.bias;
  }
}

} // namespace qgtc
