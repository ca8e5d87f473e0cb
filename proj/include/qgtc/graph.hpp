#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <istream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "qgtc/bytes.hpp"
#include "qgtc/errors.hpp"
#include "qgtc/matrix.hpp"

namespace qgtc {

struct Edge {
  std::uint32_t src = 0;
  std::uint32_t dst = 0;
  friend auto operator<=>(const Edge &, const Edge &) = default;
};

// Directed edge set over [0, num_nodes); duplicates collapsed, self loops kept.
struct Graph {
  std::size_t num_nodes = 0;
  std::vector<Edge> edges;
  std::optional<RealMatrix> features;
};

inline Graph make_graph(std::size_t num_nodes, std::vector<Edge> edges) {
  for (const auto &e : edges)
    if (e.src >= num_nodes || e.dst >= num_nodes)
      throw DataError("edge (" + std::to_string(e.src) + ", " + std::to_string(e.dst) +
                      ") out of range for " + std::to_string(num_nodes) + " nodes");
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  return Graph{num_nodes, std::move(edges), std::nullopt};
}

enum class GraphFormat { edge_list_text, binary };

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Parses the next unsigned integer token; advances `s` past it.
inline std::optional<std::uint64_t> next_uint(std::string_view &s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || (ptr != s.data() + s.size() && *ptr != ' ' && *ptr != '\t'))
    return std::nullopt;
  s.remove_prefix(static_cast<std::size_t>(ptr - s.data()));
  return v;
}

} // namespace detail

// Edge-list text: optional "# nodes N" header, then one "src dst" pair per
// line. Other '#' lines and blank lines are ignored.
inline Graph parse_edge_list(std::istream &in) {
  std::optional<std::uint64_t> declared;
  std::vector<Edge> edges;
  std::uint64_t max_index = 0;
  bool any = false;
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    std::string_view line = detail::trim(raw);
    if (line.empty()) continue;
    if (line.front() == '#') {
      std::string_view rest = detail::trim(line.substr(1));
      if (rest.starts_with("nodes")) {
        rest.remove_prefix(5);
        const auto n = detail::next_uint(rest);
        if (!n || !detail::trim(rest).empty()) throw ParseError(lineno, "malformed nodes header");
        if (any) throw ParseError(lineno, "nodes header must precede edges");
        declared = *n;
      }
      continue;
    }
    const auto src = detail::next_uint(line);
    const auto dst = src ? detail::next_uint(line) : std::nullopt;
    if (!src || !dst || !detail::trim(line).empty())
      throw ParseError(lineno, "expected \"src dst\"");
    if (*src > UINT32_MAX || *dst > UINT32_MAX) throw ParseError(lineno, "node index too large");
    if (declared && (*src >= *declared || *dst >= *declared))
      throw ParseError(lineno, "node index out of declared range");
    max_index = std::max({max_index, *src, *dst});
    any = true;
    edges.push_back({static_cast<std::uint32_t>(*src), static_cast<std::uint32_t>(*dst)});
  }
  const std::size_t n = declared ? *declared : (any ? max_index + 1 : 0);
  return make_graph(n, std::move(edges));
}

inline void write_edge_list(std::ostream &out, const Graph &g) {
  out << "# nodes " << g.num_nodes << '\n';
  for (const auto &e : g.edges) out << e.src << ' ' << e.dst << '\n';
}

inline constexpr std::uint16_t kGraphFormatVersion = 1;

inline std::vector<char> encode_graph(const Graph &g) {
  io::ByteWriter w;
  w.bytes("QGTE");
  w.u16(kGraphFormatVersion);
  w.u32(static_cast<std::uint32_t>(g.num_nodes));
  w.u64(g.edges.size());
  for (const auto &e : g.edges) {
    w.u32(e.src);
    w.u32(e.dst);
  }
  return std::move(w).take();
}

inline Graph decode_graph(std::span<const char> bytes) {
  io::ByteReader r(bytes);
  r.expect_magic("QGTE");
  if (r.u16() != kGraphFormatVersion) throw FormatError("unsupported graph version");
  const std::size_t n = r.u32();
  const std::uint64_t m = r.u64();
  if (m > r.remaining() / 8) throw FormatError("truncated edge section");
  std::vector<Edge> edges(static_cast<std::size_t>(m));
  for (auto &e : edges) {
    e.src = r.u32();
    e.dst = r.u32();
  }
  if (r.remaining()) throw FormatError("trailing bytes after edge section");
  return make_graph(n, std::move(edges));
}

inline Graph load_graph(const std::string &path, GraphFormat format) {
  if (format == GraphFormat::binary) return decode_graph(io::read_file(path));
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return parse_edge_list(in);
}

inline void save_graph(const Graph &g, const std::string &path, GraphFormat format) {
  if (format == GraphFormat::binary) {
    io::write_file(path, encode_graph(g));
    return;
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  write_edge_list(out, g);
}

// Symmetric neighbour lists without self loops (partitioner view).
inline std::vector<std::vector<std::uint32_t>> undirected_neighbours(const Graph &g) {
  std::vector<std::vector<std::uint32_t>> nbr(g.num_nodes);
  for (const auto &e : g.edges) {
    if (e.src == e.dst) continue;
    nbr[e.src].push_back(e.dst);
    nbr[e.dst].push_back(e.src);
  }
  for (auto &l : nbr) {
    std::sort(l.begin(), l.end());
    l.erase(std::unique(l.begin(), l.end()), l.end());
  }
  return nbr;
}

// Planted-cluster random graph: `clusters` equal groups, each node draws
// `intra_degree` symmetric edges inside its group and `inter_degree` outside.
inline Graph clustered_graph(std::size_t num_nodes, std::size_t clusters, std::size_t intra_degree,
                             std::size_t inter_degree, std::uint64_t seed) {
  if (num_nodes == 0 || clusters == 0 || clusters > num_nodes)
    throw ParameterError("clustered_graph needs 1 <= clusters <= num_nodes");
  std::mt19937_64 rng(seed);
  std::vector<Edge> edges;
  auto cluster_of = [&](std::size_t v) { return v * clusters / num_nodes; };
  auto cluster_begin = [&](std::size_t c) { return (c * num_nodes + clusters - 1) / clusters; };
  for (std::size_t v = 0; v < num_nodes; ++v) {
    const std::size_t c = cluster_of(v);
    const std::size_t lo = cluster_begin(c), hi = cluster_begin(c + 1);
    std::uniform_int_distribution<std::size_t> in(lo, hi - 1), any(0, num_nodes - 1);
    for (std::size_t k = 0; k < intra_degree && hi - lo > 1; ++k) {
      const auto u = static_cast<std::uint32_t>(in(rng));
      if (u == v) continue;
      edges.push_back({static_cast<std::uint32_t>(v), u});
      edges.push_back({u, static_cast<std::uint32_t>(v)});
    }
    for (std::size_t k = 0; k < inter_degree && clusters > 1; ++k) {
      const auto u = static_cast<std::uint32_t>(any(rng));
      if (cluster_of(u) == c) continue;
      edges.push_back({static_cast<std::uint32_t>(v), u});
      edges.push_back({u, static_cast<std::uint32_t>(v)});
    }
  }
  return make_graph(num_nodes, std::move(edges));
}

inline RealMatrix random_features(std::size_t num_nodes, std::size_t dim, std::uint64_t seed,
                                  float lo = 0.0f, float hi = 1.0f) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> d(lo, hi);
  RealMatrix m(num_nodes, dim);
  for (auto &v : m.data()) v = d(rng);
  return m;
}

} // namespace qgtc
