#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "qgtc/qgtc.hpp"

using namespace qgtc;

namespace {

constexpr std::size_t kDefaultParts = 1500;
// Auto-scaling keeps at least this many nodes per partition on small graphs.
constexpr std::size_t kMinNodesPerPart = 16;

struct RunArgs {
  std::string graph;
  std::string format = "text";
  std::optional<std::size_t> num_parts;
  std::size_t batch_size = 10;
  std::string model = "gcn";
  std::size_t layers = 3;
  std::optional<std::size_t> hidden;
  std::size_t feature_dim = 64;
  std::size_t classes = 8;
  unsigned bits_x = 4;
  unsigned bits_w = 4;
  std::vector<std::string> alpha_min_args;
  std::vector<std::string> alpha_max_args;
  std::map<std::string, double> alpha_min;
  std::map<std::string, double> alpha_max;
  bool no_jump = false;
  std::string reuse = "cross-tile";
  unsigned threads = 1;
  std::size_t rounds = 200;
  std::uint64_t seed = 0;
  std::string partition_file;
  std::string weights;
  std::string csv;
  std::string self_loops = "on";
  std::string dataset;
};

GraphFormat parse_format(const std::string &f) {
  return f == "binary" ? GraphFormat::binary : GraphFormat::edge_list_text;
}

// "ROLE=VALUE" pairs; roles are x (input features), w (weights), mid (between
// the two stages of a layer) and hidden (hidden-layer outputs).
std::map<std::string, double> parse_roles(const std::vector<std::string> &args, const char *flag) {
  std::map<std::string, double> out;
  for (const auto &a : args) {
    const auto eq = a.find('=');
    const std::string role = a.substr(0, eq);
    if (eq == std::string::npos || (role != "x" && role != "w" && role != "mid" && role != "hidden"))
      throw CLI::ValidationError(flag, "expected ROLE=VALUE with ROLE in x, w, mid, hidden: " + a);
    try {
      std::size_t used = 0;
      out[role] = std::stod(a.substr(eq + 1), &used);
      if (used != a.size() - eq - 1) throw std::invalid_argument(a);
    } catch (const std::logic_error &) {
      throw CLI::ValidationError(flag, "bad number in " + a);
    }
  }
  return out;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::optional<QuantParams> role_range(const RunArgs &a, const std::string &role, unsigned bits,
                                      std::pair<double, double> fallback) {
  const auto lo = a.alpha_min.find(role), hi = a.alpha_max.find(role);
  if (lo == a.alpha_min.end() && hi == a.alpha_max.end()) return std::nullopt;
  return make_quant_params(lo != a.alpha_min.end() ? lo->second : fallback.first,
                           hi != a.alpha_max.end() ? hi->second : fallback.second, bits);
}

int run(const RunArgs &a) {
  const auto kind = a.model == "gin" ? ModelKind::batched_gin : ModelKind::cluster_gcn;
  auto graph = load_graph(a.graph, parse_format(a.format));
  const std::size_t n = graph.num_nodes;
  if (n == 0) throw DataError("graph has no nodes");
  if (!graph.features) graph.features = random_features(n, a.feature_dim, a.seed + 1);

  std::size_t parts = a.num_parts.value_or(
      std::min(kDefaultParts, std::max<std::size_t>(1, n / kMinNodesPerPart)));

  // Partitioning and packing run once, outside the timed rounds.
  auto t0 = std::chrono::steady_clock::now();
  PartitionAssignment assign;
  if (!a.partition_file.empty()) {
    assign = import_partition(a.partition_file, n, a.num_parts);
    parts = assign.num_parts;
  } else {
    assign = partition(graph, parts, a.seed);
  }
  const double partition_s = seconds_since(t0);

  const auto feature_range = value_range(*graph.features);
  const auto xq = role_range(a, "x", a.bits_x, feature_range)
                      .value_or(range_params(feature_range.first, feature_range.second, a.bits_x));

  t0 = std::chrono::steady_clock::now();
  const InEdgeIndex index(graph);
  const BatchOptions bopts{.self_loops = a.self_loops == "on"};
  std::vector<SubgraphBatch> batches;
  std::uint64_t compound_bytes = 0, dense_bytes = 0;
  for (const auto &group : batch_groups(parts, a.batch_size)) {
    // Each batch goes through its compound buffer, as it would for a transfer.
    const auto buffer = pack_batch(build_batch(graph, index, assign, group, xq, bopts));
    compound_bytes += buffer.size();
    batches.push_back(unpack_batch(buffer.bytes));
    dense_bytes += float32_dense_bytes(batches.back());
  }
  const double pack_s = seconds_since(t0);

  std::vector<RealMatrix> float_features;
  for (const auto &b : batches) float_features.push_back(gather_features(graph, b));

  const std::size_t hidden = a.hidden.value_or(preset_hidden(kind));
  auto model = make_model(kind, graph.features->cols(), hidden, a.classes, a.layers, a.bits_x,
                          a.bits_w, a.seed);
  if (!a.weights.empty()) apply_weights(model, load_weights(a.weights));
  {
    std::vector<std::pair<const SubgraphBatch *, const RealMatrix *>> runs;
    for (std::size_t i = 0; i < batches.size(); ++i) runs.push_back({&batches[i], &float_features[i]});
    calibrate(model, runs);
  }
  for (auto &c : model.layers) {
    if (auto w = role_range(a, "w", a.bits_w, {c.w_quant.alpha_min, c.w_quant.alpha_max})) c.w_quant = *w;
    if (auto m = role_range(a, "mid", a.bits_x, {c.mid_quant.alpha_min, c.mid_quant.alpha_max}))
      c.mid_quant = *m;
    if (c.out_quant)
      if (auto h = role_range(a, "hidden", a.bits_x, {c.out_quant->alpha_min, c.out_quant->alpha_max}))
        c.out_quant = *h;
  }

  const GemmOptions opts{.jump = !a.no_jump,
                         .reuse = a.reuse == "cross-bit" ? Reuse::cross_bit : Reuse::cross_tile,
                         .threads = a.threads};
  const Engine engine(model, opts);
  const Engine baseline(model, GemmOptions{.threads = a.threads});

  // One untimed pass for counters, logits and the ablation check.
  ForwardStats counters;
  std::vector<RealMatrix> logits;
  for (const auto &b : batches) logits.push_back(engine.forward(b, &counters));
  for (std::size_t i = 0; i < batches.size(); ++i)
    if (!(baseline.forward(batches[i]) == logits[i])) {
      std::cerr << "error: logits changed under ablation options (batch " << i << ")\n";
      return 3;
    }

  double dev_sum = 0, dev_max = 0;
  std::size_t dev_count = 0;
  for (std::size_t i = 0; i < batches.size(); ++i) {
    const auto d = deviation(logits[i], reference_forward_f32(batches[i], float_features[i], model));
    dev_sum += d.mean_abs * static_cast<double>(logits[i].size());
    dev_count += logits[i].size();
    dev_max = std::max(dev_max, d.max_abs);
  }

  std::vector<PreparedBatch> prepared;
  for (const auto &b : batches) prepared.push_back(prepare_batch(b));
  ForwardStats timed;
  t0 = std::chrono::steady_clock::now();
  for (std::size_t r = 0; r < a.rounds; ++r)
    for (std::size_t i = 0; i < batches.size(); ++i)
      engine.forward(prepared[i], *batches[i].features, batches[i].x_quant, &timed);
  const double total_s = seconds_since(t0);
  const double rounds = static_cast<double>(std::max<std::size_t>(1, a.rounds));

  RunReport rep;
  rep.dataset = a.dataset.empty() ? std::filesystem::path(a.graph).stem().string() : a.dataset;
  rep.model = to_string(kind);
  rep.num_nodes = n;
  rep.num_parts = parts;
  rep.batch_size = a.batch_size;
  rep.num_batches = batches.size();
  rep.layers = a.layers;
  rep.hidden = hidden;
  rep.bits_x = a.bits_x;
  rep.bits_w = a.bits_w;
  rep.jump = opts.jump;
  rep.reuse = a.reuse;
  rep.threads = a.threads;
  rep.rounds = a.rounds;
  rep.seed = a.seed;
  rep.partition_s = partition_s;
  rep.pack_s = pack_s;
  rep.aggregate_s = timed.aggregate_seconds / rounds;
  rep.update_s = timed.update_seconds / rounds;
  rep.epilogue_s = timed.epilogue_seconds / rounds;
  rep.forward_s = a.rounds ? total_s / rounds : 0.0;
  rep.agg_tile_mma = counters.aggregate.tile_mma_count;
  rep.agg_tile_fetch = counters.aggregate.tile_fetch_count;
  rep.agg_tiles_skipped = counters.aggregate.tiles_skipped;
  rep.agg_total_tiles = counters.adjacency_tiles;
  rep.agg_word_ops = counters.aggregate.word_and_popcount_count;
  rep.upd_tile_mma = counters.update.tile_mma_count;
  rep.upd_tile_fetch = counters.update.tile_fetch_count;
  rep.upd_tiles_skipped = counters.update.tiles_skipped;
  rep.upd_word_ops = counters.update.word_and_popcount_count;
  rep.skip_ratio = counters.adjacency_tiles
                       ? static_cast<double>(counters.aggregate.tiles_skipped) /
                             static_cast<double>(counters.adjacency_tiles)
                       : 0.0;
  rep.compound_bytes = compound_bytes;
  rep.float32_bytes = dense_bytes;
  rep.mean_abs_dev = dev_count ? dev_sum / static_cast<double>(dev_count) : 0.0;
  rep.max_abs_dev = dev_max;

  std::printf("%s %s: %zu nodes, %zu parts, %zu batches, s=%u t=%u\n", rep.dataset.c_str(),
              rep.model.c_str(), n, parts, batches.size(), a.bits_x, a.bits_w);
  std::printf("partition %.4fs  pack %.4fs  per round: forward %.6fs (aggregate %.6fs, update "
              "%.6fs, epilogue prep %.6fs)\n",
              partition_s, pack_s, rep.forward_s, rep.aggregate_s, rep.update_s, rep.epilogue_s);
  std::printf("aggregate: %llu mma, %llu fetches, %llu/%llu tiles skipped (%.1f%%)\n",
              (unsigned long long)rep.agg_tile_mma, (unsigned long long)rep.agg_tile_fetch,
              (unsigned long long)rep.agg_tiles_skipped, (unsigned long long)rep.agg_total_tiles,
              100.0 * rep.skip_ratio);
  std::printf("update: %llu mma, %llu fetches, %llu tiles skipped\n",
              (unsigned long long)rep.upd_tile_mma, (unsigned long long)rep.upd_tile_fetch,
              (unsigned long long)rep.upd_tiles_skipped);
  std::printf("compound %llu bytes vs float32 %llu bytes (1/%.1f)\n",
              (unsigned long long)compound_bytes, (unsigned long long)dense_bytes,
              compound_bytes ? double(dense_bytes) / double(compound_bytes) : 0.0);
  std::printf("logit deviation vs float: mean %.6g max %.6g\n", rep.mean_abs_dev, rep.max_abs_dev);
  if (!a.csv.empty()) emit_csv({rep}, a.csv);
  return 0;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Bit-serial quantized GNN inference"};
  app.require_subcommand(1);

  RunArgs ra;
  auto *run_cmd = app.add_subcommand("run", "Partition, batch and run a model over a graph");
  run_cmd->add_option("--graph", ra.graph, "Graph file")->required()->check(CLI::ExistingFile);
  run_cmd->add_option("--format", ra.format, "Graph file format")
      ->check(CLI::IsMember({"text", "binary"}))
      ->capture_default_str();
  run_cmd->add_option("--num-parts", ra.num_parts,
                      "Partitions (default 1500, reduced to keep >= 16 nodes per part)");
  run_cmd->add_option("--batch-size", ra.batch_size, "Partitions per batch")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  run_cmd->add_option("--model", ra.model, "Model preset")
      ->check(CLI::IsMember({"gcn", "gin"}))
      ->capture_default_str();
  run_cmd->add_option("--layers", ra.layers, "Layer count")->check(CLI::PositiveNumber)->capture_default_str();
  run_cmd->add_option("--hidden", ra.hidden, "Hidden dims (default 16 for gcn, 64 for gin)")
      ->check(CLI::PositiveNumber);
  run_cmd->add_option("--feature-dim", ra.feature_dim, "Random feature dims")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  run_cmd->add_option("--classes", ra.classes, "Output dims")->check(CLI::PositiveNumber)->capture_default_str();
  run_cmd->add_option("--bits-x", ra.bits_x, "Feature bits s")->check(CLI::Range(1, 8))->capture_default_str();
  run_cmd->add_option("--bits-w", ra.bits_w, "Weight bits t")->check(CLI::Range(1, 8))->capture_default_str();
  run_cmd->add_option("--alpha-min", ra.alpha_min_args, "Lower bound per role, ROLE=VALUE (x, w, mid, hidden)")
      ->delimiter(',');
  run_cmd->add_option("--alpha-max", ra.alpha_max_args, "Upper bound per role, ROLE=VALUE")->delimiter(',');
  run_cmd->callback([&] {
    ra.alpha_min = parse_roles(ra.alpha_min_args, "--alpha-min");
    ra.alpha_max = parse_roles(ra.alpha_max_args, "--alpha-max");
  });
  run_cmd->add_flag("--no-jump", ra.no_jump, "Disable zero-tile jumping");
  run_cmd->add_option("--reuse", ra.reuse, "Tile reuse mode")
      ->check(CLI::IsMember({"cross-bit", "cross-tile"}))
      ->capture_default_str();
  run_cmd->add_option("--threads", ra.threads, "Worker threads")->check(CLI::PositiveNumber)->capture_default_str();
  run_cmd->add_option("--rounds", ra.rounds, "Timed rounds")->capture_default_str();
  run_cmd->add_option("--seed", ra.seed, "Seed")->capture_default_str();
  run_cmd->add_option("--partition-file", ra.partition_file, "Partition assignment to import")
      ->check(CLI::ExistingFile);
  run_cmd->add_option("--weights", ra.weights, "Weight file")->check(CLI::ExistingFile);
  run_cmd->add_option("--csv", ra.csv, "Write the run report as CSV");
  run_cmd->add_option("--self-loops", ra.self_loops, "Add self loops to every subgraph")
      ->check(CLI::IsMember({"on", "off"}))
      ->capture_default_str();
  run_cmd->add_option("--dataset", ra.dataset, "Name in the report (default: graph file stem)");

  std::size_t gen_nodes = 5000, gen_clusters = 50, gen_intra = 8, gen_inter = 1;
  std::uint64_t gen_seed = 0;
  std::string gen_out, gen_format = "text";
  auto *gen_cmd = app.add_subcommand("generate", "Write a synthetic clustered graph");
  gen_cmd->add_option("--nodes", gen_nodes)->check(CLI::PositiveNumber)->capture_default_str();
  gen_cmd->add_option("--clusters", gen_clusters)->check(CLI::PositiveNumber)->capture_default_str();
  gen_cmd->add_option("--intra-degree", gen_intra)->capture_default_str();
  gen_cmd->add_option("--inter-degree", gen_inter)->capture_default_str();
  gen_cmd->add_option("--seed", gen_seed)->capture_default_str();
  gen_cmd->add_option("--format", gen_format)->check(CLI::IsMember({"text", "binary"}))->capture_default_str();
  gen_cmd->add_option("--out", gen_out)->required();

  std::string part_graph, part_format = "text", part_out;
  std::size_t part_count = 0;
  std::uint64_t part_seed = 0;
  auto *part_cmd = app.add_subcommand("partition", "Partition a graph and export the assignment");
  part_cmd->add_option("--graph", part_graph)->required()->check(CLI::ExistingFile);
  part_cmd->add_option("--format", part_format)->check(CLI::IsMember({"text", "binary"}))->capture_default_str();
  part_cmd->add_option("--num-parts", part_count)->required()->check(CLI::PositiveNumber);
  part_cmd->add_option("--seed", part_seed)->capture_default_str();
  part_cmd->add_option("--out", part_out)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run_cmd) return run(ra);
    if (*gen_cmd) {
      const auto g = clustered_graph(gen_nodes, gen_clusters, gen_intra, gen_inter, gen_seed);
      save_graph(g, gen_out, parse_format(gen_format));
      std::printf("wrote %zu nodes, %zu edges to %s\n", g.num_nodes, g.edges.size(), gen_out.c_str());
      return 0;
    }
    const auto g = load_graph(part_graph, parse_format(part_format));
    const auto assign = partition(g, part_count, part_seed);
    export_partition(assign, part_out);
    std::printf("%zu parts, edge cut %zu\n", assign.num_parts, edge_cut(g, assign));
    return 0;
  } catch (const Error &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
