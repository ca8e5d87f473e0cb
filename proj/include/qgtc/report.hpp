#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <istream>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "qgtc/errors.hpp"

namespace qgtc {

struct RunReport {
  std::string dataset;
  std::string model;
  std::uint64_t num_nodes = 0;
  std::uint64_t num_parts = 0;
  std::uint64_t batch_size = 0;
  std::uint64_t num_batches = 0;
  std::uint64_t layers = 0;
  std::uint64_t hidden = 0;
  std::uint64_t bits_x = 0;
  std::uint64_t bits_w = 0;
  bool jump = true;
  std::string reuse;
  std::uint64_t threads = 1;
  std::uint64_t rounds = 0;
  std::uint64_t seed = 0;
  // Mean seconds per round for the timed phases; partition and pack run once.
  double partition_s = 0;
  double pack_s = 0;
  double aggregate_s = 0;
  double update_s = 0;
  double epilogue_s = 0;
  double forward_s = 0;
  // Counters of one forward pass over all batches.
  std::uint64_t agg_tile_mma = 0;
  std::uint64_t agg_tile_fetch = 0;
  std::uint64_t agg_tiles_skipped = 0;
  std::uint64_t agg_total_tiles = 0;
  std::uint64_t agg_word_ops = 0;
  std::uint64_t upd_tile_mma = 0;
  std::uint64_t upd_tile_fetch = 0;
  std::uint64_t upd_tiles_skipped = 0;
  std::uint64_t upd_word_ops = 0;
  double skip_ratio = 0; // agg_tiles_skipped / agg_total_tiles
  std::uint64_t compound_bytes = 0;
  std::uint64_t float32_bytes = 0;
  double mean_abs_dev = 0;
  double max_abs_dev = 0;

  bool operator==(const RunReport &) const = default;
};

namespace detail {

// Column name plus accessors that print and parse one field.
struct CsvColumn {
  const char *name;
  std::function<std::string(const RunReport &)> get;
  std::function<void(RunReport &, const std::string &)> set;
};

template <class T> CsvColumn csv_column(const char *name, T RunReport::*field) {
  CsvColumn c{name, {}, {}};
  c.get = [field](const RunReport &r) {
    std::ostringstream o;
    if constexpr (std::is_same_v<T, double>) {
      o.precision(17);
      o << r.*field;
    } else if constexpr (std::is_same_v<T, bool>) {
      o << (r.*field ? 1 : 0);
    } else {
      o << r.*field;
    }
    return o.str();
  };
  c.set = [field, name](RunReport &r, const std::string &s) {
    if constexpr (std::is_same_v<T, std::string>) {
      r.*field = s;
    } else {
      std::istringstream in(s);
      if constexpr (std::is_same_v<T, bool>) {
        int v = -1;
        in >> v;
        if (v != 0 && v != 1) throw FormatError(std::string("bad boolean in column ") + name);
        r.*field = v == 1;
      } else {
        in >> r.*field;
      }
      if (in.fail() || !in.eof()) throw FormatError(std::string("bad value in column ") + name);
    }
  };
  return c;
}

inline const std::vector<CsvColumn> &csv_columns() {
  static const std::vector<CsvColumn> cols = {
      csv_column("dataset", &RunReport::dataset),
      csv_column("model", &RunReport::model),
      csv_column("num_nodes", &RunReport::num_nodes),
      csv_column("num_parts", &RunReport::num_parts),
      csv_column("batch_size", &RunReport::batch_size),
      csv_column("num_batches", &RunReport::num_batches),
      csv_column("layers", &RunReport::layers),
      csv_column("hidden", &RunReport::hidden),
      csv_column("bits_x", &RunReport::bits_x),
      csv_column("bits_w", &RunReport::bits_w),
      csv_column("jump", &RunReport::jump),
      csv_column("reuse", &RunReport::reuse),
      csv_column("threads", &RunReport::threads),
      csv_column("rounds", &RunReport::rounds),
      csv_column("seed", &RunReport::seed),
      csv_column("partition_s", &RunReport::partition_s),
      csv_column("pack_s", &RunReport::pack_s),
      csv_column("aggregate_s", &RunReport::aggregate_s),
      csv_column("update_s", &RunReport::update_s),
      csv_column("epilogue_s", &RunReport::epilogue_s),
      csv_column("forward_s", &RunReport::forward_s),
      csv_column("agg_tile_mma", &RunReport::agg_tile_mma),
      csv_column("agg_tile_fetch", &RunReport::agg_tile_fetch),
      csv_column("agg_tiles_skipped", &RunReport::agg_tiles_skipped),
      csv_column("agg_total_tiles", &RunReport::agg_total_tiles),
      csv_column("agg_word_ops", &RunReport::agg_word_ops),
      csv_column("upd_tile_mma", &RunReport::upd_tile_mma),
      csv_column("upd_tile_fetch", &RunReport::upd_tile_fetch),
      csv_column("upd_tiles_skipped", &RunReport::upd_tiles_skipped),
      csv_column("upd_word_ops", &RunReport::upd_word_ops),
      csv_column("skip_ratio", &RunReport::skip_ratio),
      csv_column("compound_bytes", &RunReport::compound_bytes),
      csv_column("float32_bytes", &RunReport::float32_bytes),
      csv_column("mean_abs_dev", &RunReport::mean_abs_dev),
      csv_column("max_abs_dev", &RunReport::max_abs_dev),
  };
  return cols;
}

inline std::string csv_quote(const std::string &s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string o = "\"";
  for (char c : s) {
    if (c == '"') o += '"';
    o += c;
  }
  return o + '"';
}

inline std::vector<std::string> csv_split(const std::string &line, std::size_t line_no) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        out.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        out.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back();
    } else {
      out.back() += c;
    }
  }
  if (quoted) throw ParseError(line_no, "unterminated quote");
  return out;
}

} // namespace detail

inline std::string csv_header() {
  std::string h;
  for (const auto &c : detail::csv_columns()) h += (h.empty() ? "" : ",") + std::string(c.name);
  return h;
}

inline std::string csv_row(const RunReport &r) {
  std::string row;
  bool first = true;
  for (const auto &c : detail::csv_columns()) {
    if (!first) row += ',';
    row += detail::csv_quote(c.get(r));
    first = false;
  }
  return row;
}

inline void write_csv(std::ostream &out, const std::vector<RunReport> &reports) {
  out << csv_header() << '\n';
  for (const auto &r : reports) out << csv_row(r) << '\n';
}

inline void emit_csv(const std::vector<RunReport> &reports, const std::string &path) {
  if (reports.empty()) throw ParameterError("no reports to write");
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  write_csv(out, reports);
  if (!out) throw IoError("write failed for " + path);
}

inline std::vector<RunReport> parse_csv(std::istream &in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty CSV");
  if (line != csv_header()) throw ParseError(1, "unexpected CSV header");
  const auto &cols = detail::csv_columns();
  std::vector<RunReport> out;
  for (std::size_t no = 2; std::getline(in, line); ++no) {
    if (line.empty()) continue;
    const auto fields = detail::csv_split(line, no);
    if (fields.size() != cols.size())
      throw ParseError(no, "expected " + std::to_string(cols.size()) + " fields, got " +
                               std::to_string(fields.size()));
    RunReport r;
    try {
      for (std::size_t i = 0; i < cols.size(); ++i) cols[i].set(r, fields[i]);
    } catch (const FormatError &e) {
      throw ParseError(no, e.what());
    }
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<RunReport> read_csv(const std::string &path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return parse_csv(in);
}

} // namespace qgtc
