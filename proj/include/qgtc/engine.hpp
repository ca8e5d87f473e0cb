#pragma once

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "qgtc/batch.hpp"
#include "qgtc/bitgemm.hpp"
#include "qgtc/bitpack.hpp"
#include "qgtc/epilogue.hpp"
#include "qgtc/errors.hpp"
#include "qgtc/matrix.hpp"
#include "qgtc/quantizer.hpp"
#include "qgtc/tile.hpp"

namespace qgtc {

enum class LayerOrder { aggregate_then_update, update_then_aggregate };
enum class ModelKind { cluster_gcn, batched_gin };

inline const char *to_string(ModelKind k) noexcept {
  return k == ModelKind::cluster_gcn ? "gcn" : "gin";
}

struct LayerConfig {
  RealMatrix weight; // in_dim x out_dim
  QuantParams w_quant{0.0, 1.0, 8};
  // Range of the intermediate between the two stages (A*X for
  // aggregate-then-update, X*W otherwise).
  QuantParams mid_quant{0.0, 1.0, 8};
  // Hidden layers re-quantize their output; the last layer leaves it empty and
  // emits full precision.
  std::optional<QuantParams> out_quant;
  std::vector<double> bias;
  std::optional<BatchNormParams> bn;
  Activation act = Activation::none;
  LayerOrder order = LayerOrder::aggregate_then_update;

  std::size_t in_dim() const noexcept { return weight.rows(); }
  std::size_t out_dim() const noexcept { return weight.cols(); }
};

struct ModelConfig {
  ModelKind kind = ModelKind::cluster_gcn;
  unsigned feature_bits = 8;
  unsigned weight_bits = 8;
  std::vector<LayerConfig> layers;

  std::size_t in_dim() const { return layers.empty() ? 0 : layers.front().in_dim(); }
  std::size_t out_dim() const { return layers.empty() ? 0 : layers.back().out_dim(); }

  void validate() const {
    if (layers.empty()) throw ParameterError("model has no layers");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto &c = layers[l];
      const std::string at = "layer " + std::to_string(l) + ": ";
      if (c.weight.empty()) throw ShapeError(at + "empty weight matrix");
      if (l + 1 < layers.size() && c.out_dim() != layers[l + 1].in_dim())
        throw ShapeError(at + "out_dim " + std::to_string(c.out_dim()) +
                         " does not match next in_dim " + std::to_string(layers[l + 1].in_dim()));
      if (l + 1 == layers.size() && c.out_quant)
        throw ParameterError(at + "the last layer must output full precision");
      if (l + 1 < layers.size() && !c.out_quant)
        throw ParameterError(at + "hidden layers need an output quantization range");
      c.w_quant.validate();
      c.mid_quant.validate();
      if (c.w_quant.bits != weight_bits) throw ParameterError(at + "weight bits != model t");
      if (c.mid_quant.bits != feature_bits) throw ParameterError(at + "mid bits != model s");
      if (c.out_quant) {
        c.out_quant->validate();
        if (c.out_quant->bits != feature_bits) throw ParameterError(at + "output bits != model s");
      }
      if (!c.bias.empty() && c.bias.size() != c.out_dim()) throw ShapeError(at + "bias length");
      EpilogueSpec probe;
      probe.bn = c.bn;
      probe.validate(0, c.out_dim());
    }
  }
};

// Quant range over [lo, hi]; an empty range is widened to one unit.
inline QuantParams range_params(double lo, double hi, unsigned bits) {
  if (!std::isfinite(lo) || !std::isfinite(hi)) throw DataError("non-finite calibration range");
  if (!(hi > lo)) hi = lo + 1.0;
  return make_quant_params(lo, hi, bits);
}

template <class T> std::pair<double, double> value_range(const Matrix<T> &m) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (auto v : m.data()) {
    lo = std::min(lo, static_cast<double>(v));
    hi = std::max(hi, static_cast<double>(v));
  }
  if (m.empty()) lo = hi = 0.0;
  return {lo, hi};
}

// Uniform weights in +-1/sqrt(in_dim); relu on hidden layers. Quant ranges
// other than the weights' own are placeholders until calibrated.
inline ModelConfig make_model(ModelKind kind, std::size_t in_dim, std::size_t hidden,
                              std::size_t out_dim, std::size_t num_layers, unsigned s, unsigned t,
                              std::uint64_t seed) {
  if (num_layers == 0 || in_dim == 0 || hidden == 0 || out_dim == 0)
    throw ParameterError("model dimensions and layer count must be positive");
  ModelConfig m;
  m.kind = kind;
  m.feature_bits = s;
  m.weight_bits = t;
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l < num_layers; ++l) {
    const std::size_t in = l == 0 ? in_dim : hidden;
    const std::size_t out = l + 1 == num_layers ? out_dim : hidden;
    LayerConfig c;
    c.weight = RealMatrix(in, out);
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> d(-bound, bound);
    for (auto &w : c.weight.data()) w = static_cast<float>(d(rng));
    const auto [lo, hi] = value_range(c.weight);
    c.w_quant = range_params(lo, hi, t);
    c.mid_quant = make_quant_params(0.0, 1.0, s);
    if (l + 1 < num_layers) {
      c.out_quant = make_quant_params(0.0, 1.0, s);
      c.act = Activation::relu;
    }
    c.order = kind == ModelKind::cluster_gcn ? LayerOrder::aggregate_then_update
                                             : LayerOrder::update_then_aggregate;
    m.layers.push_back(std::move(c));
  }
  return m;
}

inline std::size_t preset_hidden(ModelKind kind) noexcept {
  return kind == ModelKind::cluster_gcn ? 16 : 64;
}

// Three layers; 16 hidden dims for GCN, 64 for GIN.
inline ModelConfig make_preset(ModelKind kind, std::size_t in_dim, std::size_t out_dim, unsigned s,
                               unsigned t, std::uint64_t seed) {
  return make_model(kind, in_dim, preset_hidden(kind), out_dim, 3, s, t, seed);
}

// ---------------------------------------------------------------------------
// Cached operands

struct PreparedLayer {
  LayerConfig config;
  BitPlaneStack w; // row-wise, in_dim x out_dim
  std::vector<std::int64_t> w_col_sums;
  // Layout expected by whatever consumes this layer's bit-plane output.
  Orientation out_orientation = Orientation::row_wise;
};

inline Orientation input_orientation(LayerOrder o) noexcept {
  return o == LayerOrder::aggregate_then_update ? Orientation::row_wise : Orientation::column_wise;
}

inline PreparedLayer prepare_layer(const LayerConfig &c,
                                   LayerOrder next = LayerOrder::aggregate_then_update) {
  PreparedLayer p;
  p.config = c;
  p.w = pack_stack(quantize_matrix(c.weight, c.w_quant), Orientation::row_wise, Pad::to8);
  p.w_col_sums = line_sums(p.w);
  p.out_orientation = input_orientation(next);
  return p;
}

struct PreparedBatch {
  const SubgraphBatch *batch = nullptr;
  TileMap a_map;
  std::vector<std::int64_t> degrees; // row sums of A

  const PackedBitMatrix &adjacency() const noexcept { return batch->adjacency; }
  std::size_t nodes() const noexcept { return batch->total_nodes(); }
};

inline PreparedBatch prepare_batch(const SubgraphBatch &b) {
  PreparedBatch p;
  p.batch = &b;
  p.a_map = scan_zero_tiles(b.adjacency);
  p.degrees.resize(b.total_nodes());
  for (std::size_t r = 0; r < p.degrees.size(); ++r)
    for (auto w : b.adjacency.line(r)) p.degrees[r] += std::popcount(w);
  return p;
}

struct ForwardStats {
  OpCounters aggregate;
  OpCounters update;
  double aggregate_seconds = 0.0;
  double update_seconds = 0.0;
  double epilogue_seconds = 0.0; // operand sums and re-layouts feeding the fused epilogues
  std::uint64_t adjacency_tiles = 0; // adjacency tiles visited, skipped or not

  ForwardStats &operator+=(const ForwardStats &o) {
    aggregate += o.aggregate;
    update += o.update;
    aggregate_seconds += o.aggregate_seconds;
    update_seconds += o.update_seconds;
    epilogue_seconds += o.epilogue_seconds;
    adjacency_tiles += o.adjacency_tiles;
    return *this;
  }
};

namespace detail {

class Stopwatch {
public:
  Stopwatch() : t0_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
  }

private:
  std::chrono::steady_clock::time_point t0_;
};

inline EpilogueSpec final_epilogue(const PreparedLayer &l) {
  EpilogueSpec e;
  e.bias = l.config.bias;
  e.bn = l.config.bn;
  e.act = l.config.act;
  if (l.config.out_quant) e.quant = OutputQuant{*l.config.out_quant, l.out_orientation, Pad::to8};
  return e;
}

} // namespace detail

// One layer on bit-plane input x quantized with xq. Aggregate-then-update:
// Y = requant(A*X), out = epilogue(Y*W). Update-then-aggregate:
// M = requant(X*W), out = epilogue(A*M). Hidden layers return bit planes,
// the last layer a real matrix.
inline EpilogueResult layer_forward(const PreparedBatch &pb, const PreparedLayer &layer,
                                    const BitPlaneStack &x, const QuantParams &xq,
                                    const GemmOptions &opts = {}, ForwardStats *stats = nullptr) {
  const auto &c = layer.config;
  const std::size_t n = pb.nodes();
  if (x.rows() != n)
    throw ShapeError("layer input has " + std::to_string(x.rows()) + " rows, batch has " +
                     std::to_string(n) + " nodes");
  if (x.cols() != c.in_dim())
    throw ShapeError("layer input has " + std::to_string(x.cols()) + " features, layer expects " +
                     std::to_string(c.in_dim()));
  if (x.bits() != xq.bits) throw ParameterError("input planes disagree with their quant params");
  ForwardStats local;
  ForwardStats &st = stats ? *stats : local;
  EpilogueSpec fin = detail::final_epilogue(layer);
  st.adjacency_tiles += pb.a_map.total();

  if (c.order == LayerOrder::aggregate_then_update) {
    detail::Stopwatch prep;
    const BitPlaneStack xr =
        x.orientation() == Orientation::row_wise ? x : repack(x, Orientation::row_wise, Pad::to8);
    EpilogueSpec agg;
    agg.dequant = {0.0, 1.0, xq.alpha_min, xq.scale(), n, pb.degrees, {}};
    agg.quant = OutputQuant{c.mid_quant, Orientation::column_wise, Pad::to8};
    st.epilogue_seconds += prep.seconds();

    detail::Stopwatch ta;
    auto y = std::get<BitPlaneStack>(
        aggregate_fused(pb.adjacency(), xr, agg, opts, &st.aggregate, &pb.a_map));
    st.aggregate_seconds += ta.seconds();

    detail::Stopwatch tp;
    fin.dequant = AffineDequant::between(c.mid_quant, c.w_quant, c.in_dim());
    fin.dequant.lhs_row_sums = line_sums(y);
    fin.dequant.rhs_col_sums = layer.w_col_sums;
    st.epilogue_seconds += tp.seconds();

    detail::Stopwatch tu;
    auto out = gemm_sbit_by_tbit_fused(y, layer.w, fin, opts, &st.update);
    st.update_seconds += tu.seconds();
    return out;
  }

  detail::Stopwatch prep;
  const BitPlaneStack xc = x.orientation() == Orientation::column_wise
                               ? x
                               : repack(x, Orientation::column_wise, Pad::to8);
  EpilogueSpec upd;
  upd.dequant = AffineDequant::between(xq, c.w_quant, c.in_dim());
  upd.dequant.lhs_row_sums = line_sums(xc);
  upd.dequant.rhs_col_sums = layer.w_col_sums;
  upd.quant = OutputQuant{c.mid_quant, Orientation::row_wise, Pad::to8};
  st.epilogue_seconds += prep.seconds();

  detail::Stopwatch tu;
  auto m = std::get<BitPlaneStack>(gemm_sbit_by_tbit_fused(xc, layer.w, upd, opts, &st.update));
  st.update_seconds += tu.seconds();

  fin.dequant = {0.0, 1.0, c.mid_quant.alpha_min, c.mid_quant.scale(), n, pb.degrees, {}};
  detail::Stopwatch ta;
  auto out = aggregate_fused(pb.adjacency(), m, fin, opts, &st.aggregate, &pb.a_map);
  st.aggregate_seconds += ta.seconds();
  return out;
}

// Quantized model with its weight bit planes packed once.
class Engine {
public:
  explicit Engine(ModelConfig model, GemmOptions opts = {})
      : model_(std::move(model)), opts_(opts) {
    model_.validate();
    for (std::size_t l = 0; l < model_.layers.size(); ++l) {
      const auto next = l + 1 < model_.layers.size() ? model_.layers[l + 1].order
                                                     : LayerOrder::aggregate_then_update;
      layers_.push_back(prepare_layer(model_.layers[l], next));
    }
  }

  const ModelConfig &model() const noexcept { return model_; }
  const std::vector<PreparedLayer> &layers() const noexcept { return layers_; }
  const GemmOptions &options() const noexcept { return opts_; }
  void set_options(const GemmOptions &o) noexcept { opts_ = o; }

  RealMatrix forward(const SubgraphBatch &b, ForwardStats *stats = nullptr) const {
    if (!b.features) throw DataError("batch carries no node features");
    return forward(prepare_batch(b), *b.features, b.x_quant, stats);
  }

  RealMatrix forward(const PreparedBatch &pb, const BitPlaneStack &x, const QuantParams &xq,
                     ForwardStats *stats = nullptr) const {
    if (xq.bits != model_.feature_bits)
      throw ParameterError("batch features have " + std::to_string(xq.bits) +
                           " bits, model expects " + std::to_string(model_.feature_bits));
    // Activations stay packed between layers; only the last layer is real.
    EpilogueResult h = layer_forward(pb, layers_[0], x, xq, opts_, stats);
    for (std::size_t l = 1; l < layers_.size(); ++l) {
      const auto &in = std::get<BitPlaneStack>(h);
      h = layer_forward(pb, layers_[l], in, *layers_[l - 1].config.out_quant, opts_, stats);
    }
    return std::get<RealMatrix>(std::move(h));
  }

private:
  ModelConfig model_;
  GemmOptions opts_;
  std::vector<PreparedLayer> layers_;
};

inline RealMatrix model_forward(const SubgraphBatch &b, const ModelConfig &m,
                                const GemmOptions &opts = {}, ForwardStats *stats = nullptr) {
  return Engine(m, opts).forward(b, stats);
}

// ---------------------------------------------------------------------------
// Float reference and calibration

// Observed value ranges of the intermediate and output of every layer.
struct RangeLog {
  std::vector<std::pair<double, double>> mid;
  std::vector<std::pair<double, double>> out;

  void merge(const RangeLog &o) {
    if (mid.empty()) {
      *this = o;
      return;
    }
    for (std::size_t l = 0; l < mid.size() && l < o.mid.size(); ++l) {
      mid[l] = {std::min(mid[l].first, o.mid[l].first), std::max(mid[l].second, o.mid[l].second)};
      out[l] = {std::min(out[l].first, o.out[l].first), std::max(out[l].second, o.out[l].second)};
    }
  }
};

namespace detail {

using DMatrix = Matrix<double>;

inline DMatrix aggregate_f(const PackedBitMatrix &a, const DMatrix &x) {
  DMatrix out(a.logical_rows(), x.cols());
  for (std::size_t r = 0; r < out.rows(); ++r) {
    const auto line = a.line(r);
    for (std::size_t w = 0; w < line.size(); ++w)
      for (std::uint32_t bits = line[w]; bits; bits &= bits - 1) {
        const std::size_t c = w * 32 + static_cast<std::size_t>(std::countr_zero(bits));
        for (std::size_t j = 0; j < x.cols(); ++j) out(r, j) += x(c, j);
      }
  }
  return out;
}

inline DMatrix matmul_f(const DMatrix &x, const RealMatrix &w) {
  DMatrix out(x.rows(), w.cols());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t k = 0; k < x.cols(); ++k) {
      const double v = x(i, k);
      if (v == 0.0) continue;
      for (std::size_t j = 0; j < w.cols(); ++j) out(i, j) += v * static_cast<double>(w(k, j));
    }
  return out;
}

inline std::pair<double, double> range_of(const DMatrix &m) { return value_range(m); }

} // namespace detail

// Unquantized forward pass over the same adjacency and weights.
inline RealMatrix reference_forward_f32(const SubgraphBatch &b, const RealMatrix &features,
                                        const ModelConfig &m, RangeLog *ranges = nullptr) {
  if (m.layers.empty()) throw ParameterError("model has no layers");
  if (features.rows() != b.total_nodes() || features.cols() != m.in_dim())
    throw ShapeError("reference features do not match batch and model");
  detail::DMatrix h(features.rows(), features.cols());
  for (std::size_t i = 0; i < h.size(); ++i) h.data()[i] = features.data()[i];
  RangeLog log;
  for (const auto &c : m.layers) {
    detail::DMatrix mid, z;
    if (c.order == LayerOrder::aggregate_then_update) {
      mid = detail::aggregate_f(b.adjacency, h);
      z = detail::matmul_f(mid, c.weight);
    } else {
      mid = detail::matmul_f(h, c.weight);
      z = detail::aggregate_f(b.adjacency, mid);
    }
    EpilogueSpec e;
    e.bias = c.bias;
    e.bn = c.bn;
    e.act = c.act;
    for (std::size_t r = 0; r < z.rows(); ++r)
      for (std::size_t j = 0; j < z.cols(); ++j) {
        double v = z(r, j);
        if (!e.bias.empty()) v += e.bias[j];
        if (e.bn)
          v = (v - e.bn->mean[j]) / std::sqrt(e.bn->var[j] + e.bn->eps) * e.bn->gamma[j] +
              e.bn->beta[j];
        if (e.act == Activation::relu) v = v > 0.0 ? v : 0.0;
        if (e.act == Activation::tanh) v = std::tanh(v);
        z(r, j) = v;
      }
    log.mid.push_back(detail::range_of(mid));
    log.out.push_back(detail::range_of(z));
    h = std::move(z);
  }
  if (ranges) *ranges = std::move(log);
  RealMatrix out(h.rows(), h.cols());
  for (std::size_t i = 0; i < h.size(); ++i) out.data()[i] = static_cast<float>(h.data()[i]);
  return out;
}

// Sets every intermediate and hidden-output range from observed float ranges
// and every weight range from the weights themselves.
inline void apply_calibration(ModelConfig &m, const RangeLog &r) {
  if (r.mid.size() != m.layers.size()) throw ParameterError("range log does not match model");
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    auto &c = m.layers[l];
    const auto [wlo, whi] = value_range(c.weight);
    c.w_quant = range_params(wlo, whi, m.weight_bits);
    c.mid_quant = range_params(r.mid[l].first, r.mid[l].second, m.feature_bits);
    if (l + 1 < m.layers.size())
      c.out_quant = range_params(r.out[l].first, r.out[l].second, m.feature_bits);
  }
}

// Calibrates intermediate and hidden ranges from a float pass over each batch.
inline RangeLog calibrate(ModelConfig &m,
                          std::span<const std::pair<const SubgraphBatch *, const RealMatrix *>> runs) {
  RangeLog all;
  for (const auto &[b, f] : runs) {
    RangeLog r;
    reference_forward_f32(*b, *f, m, &r);
    all.merge(r);
  }
  apply_calibration(m, all);
  return all;
}

inline RangeLog calibrate(ModelConfig &m, const SubgraphBatch &b, const RealMatrix &features) {
  const std::pair<const SubgraphBatch *, const RealMatrix *> run{&b, &features};
  return calibrate(m, std::span(&run, 1));
}

// Logit deviation between the quantized and float paths.
struct Deviation {
  double mean_abs = 0.0;
  double max_abs = 0.0;
};

inline Deviation deviation(const RealMatrix &a, const RealMatrix &b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("deviation shape mismatch");
  Deviation d;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double e = std::abs(static_cast<double>(a.data()[i]) - b.data()[i]);
    d.mean_abs += e;
    d.max_abs = std::max(d.max_abs, e);
  }
  if (a.size()) d.mean_abs /= static_cast<double>(a.size());
  return d;
}

} // namespace qgtc
