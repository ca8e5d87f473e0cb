#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "qgtc/errors.hpp"
#include "qgtc/graph.hpp"

namespace qgtc {

struct PartitionAssignment {
  std::size_t num_parts = 0;
  std::vector<std::uint32_t> part_of;

  void validate(std::size_t num_nodes) const {
    if (part_of.size() != num_nodes)
      throw DataError("partition has " + std::to_string(part_of.size()) + " entries for " +
                      std::to_string(num_nodes) + " nodes");
    if (num_parts == 0 && num_nodes > 0) throw DataError("partition has zero parts");
    for (std::size_t v = 0; v < part_of.size(); ++v)
      if (part_of[v] >= num_parts)
        throw DataError("node " + std::to_string(v) + " assigned to part " +
                        std::to_string(part_of[v]) + " >= " + std::to_string(num_parts));
  }

  // Node ids of each part, ascending.
  std::vector<std::vector<std::uint32_t>> members() const {
    std::vector<std::vector<std::uint32_t>> m(num_parts);
    for (std::size_t v = 0; v < part_of.size(); ++v)
      m[part_of[v]].push_back(static_cast<std::uint32_t>(v));
    return m;
  }

  std::vector<std::size_t> sizes() const {
    std::vector<std::size_t> s(num_parts, 0);
    for (auto p : part_of) ++s[p];
    return s;
  }

  friend bool operator==(const PartitionAssignment &, const PartitionAssignment &) = default;
};

// Number of distinct unordered node pairs {u, v}, u != v, joined by an edge
// and split across parts.
inline std::size_t edge_cut(const Graph &g, const PartitionAssignment &a) {
  std::size_t cut = 0;
  const auto nbr = undirected_neighbours(g);
  for (std::size_t u = 0; u < nbr.size(); ++u)
    for (auto v : nbr[u])
      if (u < v && a.part_of[u] != a.part_of[v]) ++cut;
  return cut;
}

// Greedy BFS-grown partitioner. Parts are grown one at a time from a
// low-degree unassigned seed, always absorbing the frontier node with the
// most edges into the growing part (ties: first discovered). Part p receives
// ceil(remaining / (num_parts - p)) nodes, so no part exceeds ceil(n / P).
inline PartitionAssignment partition(const Graph &g, std::size_t num_parts, std::uint64_t seed = 0) {
  const std::size_t n = g.num_nodes;
  if (num_parts < 1 || num_parts > n)
    throw ParameterError("num_parts must be in [1, " + std::to_string(n) + "]");
  PartitionAssignment out{num_parts, std::vector<std::uint32_t>(n, 0)};
  if (num_parts == 1) return out;

  const auto nbr = undirected_neighbours(g);
  std::vector<std::uint32_t> rank(n);
  {
    std::vector<std::uint32_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0u);
    std::mt19937_64 rng(seed);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t i = 0; i < n; ++i) rank[perm[i]] = static_cast<std::uint32_t>(i);
  }
  std::vector<std::uint32_t> seeds(n);
  std::iota(seeds.begin(), seeds.end(), 0u);
  std::sort(seeds.begin(), seeds.end(), [&](std::uint32_t a, std::uint32_t b) {
    if (nbr[a].size() != nbr[b].size()) return nbr[a].size() < nbr[b].size();
    return rank[a] < rank[b];
  });

  constexpr std::uint32_t kUnassigned = UINT32_MAX;
  std::vector<std::uint32_t> part(n, kUnassigned);
  std::vector<std::uint32_t> gain(n, 0);
  std::vector<std::uint64_t> discovered(n, 0);
  std::size_t next_seed = 0, remaining = n;
  std::uint64_t clock = 0;

  for (std::size_t p = 0; p < num_parts; ++p) {
    const std::size_t target = (remaining + (num_parts - p) - 1) / (num_parts - p);
    // Frontier ordered by (more gain first, earlier discovery first).
    std::set<std::tuple<std::int64_t, std::uint64_t, std::uint32_t>> frontier;
    std::vector<std::uint32_t> touched;
    std::size_t size = 0;
    auto absorb = [&](std::uint32_t u) {
      part[u] = static_cast<std::uint32_t>(p);
      ++size;
      --remaining;
      for (auto v : nbr[u]) {
        if (part[v] != kUnassigned) continue;
        if (gain[v] > 0) frontier.erase({-static_cast<std::int64_t>(gain[v]), discovered[v], v});
        else {
          discovered[v] = ++clock;
          touched.push_back(v);
        }
        ++gain[v];
        frontier.insert({-static_cast<std::int64_t>(gain[v]), discovered[v], v});
      }
    };
    while (size < target) {
      if (frontier.empty()) {
        while (part[seeds[next_seed]] != kUnassigned) ++next_seed;
        absorb(seeds[next_seed]);
        continue;
      }
      const auto [neg, when, u] = *frontier.begin();
      frontier.erase(frontier.begin());
      absorb(u);
    }
    for (auto v : touched) gain[v] = 0;
  }
  for (std::size_t v = 0; v < n; ++v) out.part_of[v] = part[v];
  return out;
}

inline PartitionAssignment parse_partition(std::istream &in, std::size_t num_nodes,
                                           std::optional<std::size_t> num_parts = std::nullopt) {
  PartitionAssignment a;
  std::string raw;
  std::size_t lineno = 0;
  std::uint64_t max_part = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    std::string_view line = detail::trim(raw);
    if (line.empty()) continue;
    const auto v = detail::next_uint(line);
    if (!v || !detail::trim(line).empty()) throw ParseError(lineno, "expected one part index");
    if (*v > UINT32_MAX) throw ParseError(lineno, "part index too large");
    max_part = std::max(max_part, *v);
    a.part_of.push_back(static_cast<std::uint32_t>(*v));
  }
  a.num_parts = num_parts ? *num_parts : (a.part_of.empty() ? 0 : max_part + 1);
  a.validate(num_nodes);
  return a;
}

inline PartitionAssignment import_partition(const std::string &path, std::size_t num_nodes,
                                            std::optional<std::size_t> num_parts = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return parse_partition(in, num_nodes, num_parts);
}

inline void export_partition(const PartitionAssignment &a, const std::string &path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  for (auto p : a.part_of) out << p << '\n';
}

} // namespace qgtc
