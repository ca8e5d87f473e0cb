#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qgtc/bitpack.hpp"
#include "qgtc/bytes.hpp"
#include "qgtc/errors.hpp"
#include "qgtc/graph.hpp"
#include "qgtc/partition.hpp"
#include "qgtc/quantizer.hpp"

namespace qgtc {

// In-edges per destination node (CSR), used to gather induced subgraphs.
struct InEdgeIndex {
  std::vector<std::size_t> offsets;
  std::vector<std::uint32_t> sources;

  explicit InEdgeIndex(const Graph &g) : offsets(g.num_nodes + 1, 0) {
    for (const auto &e : g.edges) ++offsets[e.dst + 1];
    for (std::size_t v = 0; v < g.num_nodes; ++v) offsets[v + 1] += offsets[v];
    sources.resize(g.edges.size());
    auto fill = offsets;
    for (const auto &e : g.edges) sources[fill[e.dst]++] = e.src;
  }

  std::span<const std::uint32_t> in(std::uint32_t v) const {
    return {sources.data() + offsets[v], offsets[v + 1] - offsets[v]};
  }
};

// Block-diagonal batch of subgraphs. Batch row i is original node
// node_ids[i]; subgraph s occupies rows [boundaries[s], boundaries[s+1]).
// adjacency(i, j) = 1 iff j -> i is an edge inside one subgraph.
struct SubgraphBatch {
  std::vector<std::uint32_t> node_ids;
  std::vector<std::uint32_t> boundaries;
  PackedBitMatrix adjacency;
  std::optional<BitPlaneStack> features;
  QuantParams x_quant;

  std::size_t num_subgraphs() const noexcept {
    return boundaries.empty() ? 0 : boundaries.size() - 1;
  }
  std::size_t total_nodes() const noexcept { return node_ids.size(); }

  friend bool operator==(const SubgraphBatch &, const SubgraphBatch &) = default;
};

struct BatchOptions {
  bool self_loops = true;
  // Column padding of the row-wise feature stack (PAD128 when it feeds a
  // hidden layer).
  Pad feature_pad = Pad::to128;
};

inline SubgraphBatch build_batch(const Graph &g, const InEdgeIndex &index,
                                 const PartitionAssignment &assign,
                                 std::span<const std::uint32_t> part_ids,
                                 const QuantParams &x_quant, const BatchOptions &opts = {}) {
  if (part_ids.empty()) throw ParameterError("empty batch: no partitions selected");
  {
    std::vector<std::uint32_t> sorted(part_ids.begin(), part_ids.end());
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
      throw ParameterError("batch partition ids must be distinct");
    if (sorted.back() >= assign.num_parts) throw ParameterError("batch partition id out of range");
  }
  const auto members = assign.members();
  SubgraphBatch b;
  b.x_quant = x_quant;
  b.boundaries.push_back(0);
  for (auto p : part_ids) {
    b.node_ids.insert(b.node_ids.end(), members[p].begin(), members[p].end());
    b.boundaries.push_back(static_cast<std::uint32_t>(b.node_ids.size()));
  }
  const std::size_t n = b.node_ids.size();
  if (n == 0) throw ParameterError("empty batch: selected partitions contain no nodes");

  // Original id -> batch row, only for nodes inside this batch.
  std::vector<std::pair<std::uint32_t, std::uint32_t>> local(n);
  for (std::size_t i = 0; i < n; ++i) local[i] = {b.node_ids[i], static_cast<std::uint32_t>(i)};
  std::sort(local.begin(), local.end());
  auto row_of = [&](std::uint32_t v) -> std::optional<std::uint32_t> {
    auto it = std::lower_bound(local.begin(), local.end(), std::make_pair(v, 0u));
    if (it == local.end() || it->first != v) return std::nullopt;
    return it->second;
  };

  b.adjacency = PackedBitMatrix(Orientation::column_wise, n, n, Pad::to8);
  for (std::size_t s = 0; s < b.num_subgraphs(); ++s) {
    for (std::uint32_t i = b.boundaries[s]; i < b.boundaries[s + 1]; ++i) {
      const std::uint32_t v = b.node_ids[i];
      if (opts.self_loops) b.adjacency.set(i, i);
      for (auto u : index.in(v)) {
        const auto j = row_of(u);
        // Cross-partition edges are dropped.
        if (j && *j >= b.boundaries[s] && *j < b.boundaries[s + 1]) b.adjacency.set(i, *j);
      }
    }
  }

  if (g.features) {
    const auto &f = *g.features;
    RealMatrix rows(n, f.cols());
    for (std::size_t i = 0; i < n; ++i) std::ranges::copy(f.row(b.node_ids[i]), rows.row(i).begin());
    b.features = pack_stack(quantize_matrix(rows, x_quant), Orientation::row_wise, opts.feature_pad);
  }
  return b;
}

inline SubgraphBatch build_batch(const Graph &g, const PartitionAssignment &assign,
                                 std::span<const std::uint32_t> part_ids,
                                 const QuantParams &x_quant, const BatchOptions &opts = {}) {
  return build_batch(g, InEdgeIndex(g), assign, part_ids, x_quant, opts);
}

// Consecutive groups of `batch_size` partition ids.
inline std::vector<std::vector<std::uint32_t>> batch_groups(std::size_t num_parts,
                                                            std::size_t batch_size) {
  if (batch_size == 0) throw ParameterError("batch size must be positive");
  std::vector<std::vector<std::uint32_t>> out;
  for (std::size_t p = 0; p < num_parts; p += batch_size) {
    std::vector<std::uint32_t> g;
    for (std::size_t q = p; q < std::min(num_parts, p + batch_size); ++q)
      g.push_back(static_cast<std::uint32_t>(q));
    out.push_back(std::move(g));
  }
  return out;
}

// Full-precision features of the batch rows (reference path input).
inline RealMatrix gather_features(const Graph &g, const SubgraphBatch &b) {
  if (!g.features) throw ParameterError("graph has no features");
  RealMatrix out(b.total_nodes(), g.features->cols());
  for (std::size_t i = 0; i < b.total_nodes(); ++i)
    std::ranges::copy(g.features->row(b.node_ids[i]), out.row(i).begin());
  return out;
}

// --- compound transfer buffer ---------------------------------------------
//
// "QGTB" | u16 version | u32 num_subgraphs | u32 total_nodes | u8 feature_bits
// | f64 alpha_min | f64 alpha_max | u8 quant_bits | u64 nodes_offset
// | u64 adjacency_offset | u64 features_offset | u64 end_offset
// | node map: (num_subgraphs + 1) u32 boundaries, total_nodes u32 ids
// | adjacency stack | feature stack (absent when features_offset == end_offset)

inline constexpr std::uint16_t kCompoundFormatVersion = 1;
inline constexpr std::size_t kCompoundHeaderBytes = 4 + 2 + 4 + 4 + 1 + 8 + 8 + 1 + 4 * 8;

struct CompoundBuffer {
  std::vector<char> bytes;
  std::size_t size() const noexcept { return bytes.size(); }
};

inline CompoundBuffer pack_batch(const SubgraphBatch &b) {
  io::ByteWriter w;
  w.bytes("QGTB");
  w.u16(kCompoundFormatVersion);
  w.u32(static_cast<std::uint32_t>(b.num_subgraphs()));
  w.u32(static_cast<std::uint32_t>(b.total_nodes()));
  w.u8(static_cast<std::uint8_t>(b.features ? b.features->bits() : 0));
  w.f64(b.x_quant.alpha_min);
  w.f64(b.x_quant.alpha_max);
  w.u8(static_cast<std::uint8_t>(b.x_quant.bits));
  const std::size_t slots = w.size();
  for (int i = 0; i < 4; ++i) w.u64(0);

  w.patch_u64(slots, w.size());
  for (auto v : b.boundaries) w.u32(v);
  for (auto v : b.node_ids) w.u32(v);
  w.patch_u64(slots + 8, w.size());
  write_stack(w, BitPlaneStack({b.adjacency}));
  w.patch_u64(slots + 16, w.size());
  if (b.features) write_stack(w, *b.features);
  w.patch_u64(slots + 24, w.size());
  return {std::move(w).take()};
}

inline SubgraphBatch unpack_batch(std::span<const char> bytes) {
  io::ByteReader r(bytes);
  r.expect_magic("QGTB");
  if (r.u16() != kCompoundFormatVersion) throw FormatError("unsupported compound buffer version");
  const std::size_t num_subgraphs = r.u32(), total_nodes = r.u32();
  const unsigned feature_bits = r.u8();
  SubgraphBatch b;
  b.x_quant.alpha_min = r.f64();
  b.x_quant.alpha_max = r.f64();
  b.x_quant.bits = r.u8();
  try {
    b.x_quant.validate();
  } catch (const ParameterError &e) {
    throw FormatError(std::string("bad quant params: ") + e.what());
  }
  const std::uint64_t nodes_at = r.u64(), adj_at = r.u64(), feat_at = r.u64(), end_at = r.u64();
  const std::uint64_t node_bytes = 4ull * (num_subgraphs + 1 + total_nodes);
  if (nodes_at != kCompoundHeaderBytes || adj_at != nodes_at + node_bytes || feat_at < adj_at ||
      end_at < feat_at || end_at != bytes.size())
    throw FormatError("inconsistent section offsets");

  for (std::size_t i = 0; i <= num_subgraphs; ++i) b.boundaries.push_back(r.u32());
  for (std::size_t i = 0; i < total_nodes; ++i) b.node_ids.push_back(r.u32());
  if (b.boundaries.front() != 0 || b.boundaries.back() != total_nodes ||
      !std::is_sorted(b.boundaries.begin(), b.boundaries.end()))
    throw FormatError("bad subgraph boundaries");

  io::ByteReader adj(bytes.subspan(adj_at, feat_at - adj_at));
  auto adjacency = read_stack(adj);
  if (adj.remaining() || adjacency.bits() != 1 ||
      adjacency.orientation() != Orientation::column_wise || adjacency.rows() != total_nodes ||
      adjacency.cols() != total_nodes)
    throw FormatError("adjacency section does not match header");
  b.adjacency = adjacency.plane(0);

  if (feat_at != end_at) {
    io::ByteReader fr(bytes.subspan(feat_at, end_at - feat_at));
    auto features = read_stack(fr);
    if (fr.remaining() || features.bits() != feature_bits || features.rows() != total_nodes ||
        features.orientation() != Orientation::row_wise)
      throw FormatError("feature section does not match header");
    b.features = std::move(features);
  } else if (feature_bits != 0) {
    throw FormatError("header declares features but section is empty");
  }
  return b;
}

// Bytes of the same batch as a dense float32 adjacency plus float32 features.
inline std::size_t float32_dense_bytes(const SubgraphBatch &b) {
  const std::size_t n = b.total_nodes();
  const std::size_t d = b.features ? b.features->cols() : 0;
  return 4 * (n * n + n * d);
}

} // namespace qgtc
