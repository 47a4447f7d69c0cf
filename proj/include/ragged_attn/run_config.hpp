// SPDX-License-Identifier: Apache-2.0
#pragma once

// Run configuration shared by every CLI subcommand. Round-trips through JSON;
// unknown keys are rejected at every nesting level.

#include <cstdint>
#include <initializer_list>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "ragged_attn/bench.hpp"
#include "ragged_attn/core.hpp"
#include "ragged_attn/pruning.hpp"

namespace ragged_attn {

enum class BenchMode { kernel, pipeline, both };

inline std::string_view to_string(BenchMode m) {
  switch (m) {
    case BenchMode::kernel: return "kernel";
    case BenchMode::pipeline: return "pipeline";
    case BenchMode::both: return "both";
  }
  return "?";
}

inline BenchMode parse_bench_mode(std::string_view s) {
  if (s == "kernel") return BenchMode::kernel;
  if (s == "pipeline") return BenchMode::pipeline;
  if (s == "both") return BenchMode::both;
  throw InvalidArgument("unknown bench mode '" + std::string(s) + "'");
}

struct RunConfig {
  std::string preset = "desk";
  std::optional<ModelConfig> model;  // overrides preset when set
  PruneSpec prune{};
  TileConfig tiles{};
  SweepGrid grid{{4, 16, 32, 64}, {0.0, 0.5, 0.8}, {Backend::ragged, Backend::padded_masked}, {1}};
  std::size_t warmup = kDefaultWarmup;
  std::size_t iters = kDefaultIters;
  std::size_t reps = 1;
  std::uint64_t seed = 0;
  std::string out_dir = ".";
  std::vector<std::string> formats{"csv"};
  BenchMode mode = BenchMode::kernel;
  bool include_pack = false;
  FloorMode floor = FloorMode::min;
  // check subcommand
  std::vector<double> check_ratios{0.25, 0.5, 0.8};
  std::size_t check_seeds = 20;
  std::size_t check_batch = 8;
  std::size_t oracle_cases = 50;

  ModelConfig model_config() const {
    ModelConfig c = model ? *model : make_config(preset);
    c.validate();
    return c;
  }

  void validate() const {
    model_config();
    prune.validate();
    tiles.validate();
    if (iters < 1) throw InvalidArgument("iters must be >= 1");
    for (const auto& f : formats) {
      if (f != "csv" && f != "svg") throw InvalidArgument("unknown output format '" + f + "'");
    }
    for (double r : grid.ratios) {
      if (!(r >= 0.0 && r < 1.0)) throw InvalidArgument("grid ratio outside [0, 1)");
    }
    for (double r : check_ratios) {
      if (!(r >= 0.0 && r < 1.0)) throw InvalidArgument("check ratio outside [0, 1)");
    }
    for (auto w : grid.workers) {
      if (w == 0) throw InvalidArgument("worker count must be >= 1");
    }
    for (auto b : grid.batch_sizes) {
      if (b == 0) throw InvalidArgument("batch size must be >= 1");
    }
  }
};

namespace config_detail {

inline void reject_unknown(const nlohmann::json& j, std::string_view where,
                           std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) {
    throw InvalidArgument("config: '" + std::string(where) + "' must be an object");
  }
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) {
      throw InvalidArgument("config: unknown key '" + key + "' in " + std::string(where));
    }
  }
}

template <typename T>
void maybe(const nlohmann::json& j, const char* key, T& dst) {
  if (j.contains(key)) dst = j.at(key).get<T>();
}

}  // namespace config_detail

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  std::vector<std::string> backends;
  for (auto b : c.grid.backends) backends.emplace_back(to_string(b));
  j = {{"preset", c.preset},
       {"prune", c.prune},
       {"tiles", {{"block_m", c.tiles.block_m}, {"block_n", c.tiles.block_n}, {"block_d", c.tiles.block_d}}},
       {"grid",
        {{"batch_sizes", c.grid.batch_sizes},
         {"ratios", c.grid.ratios},
         {"backends", backends},
         {"workers", c.grid.workers}}},
       {"timing", {{"warmup", c.warmup}, {"iters", c.iters}, {"reps", c.reps}}},
       {"seed", c.seed},
       {"output", {{"dir", c.out_dir}, {"formats", c.formats}}},
       {"bench", {{"mode", std::string(to_string(c.mode))}, {"include_pack", c.include_pack}}},
       {"analysis", {{"floor", c.floor == FloorMode::min ? "min" : "regress"}}},
       {"check",
        {{"ratios", c.check_ratios},
         {"seeds", c.check_seeds},
         {"batch_size", c.check_batch},
         {"oracle_cases", c.oracle_cases}}}};
  if (c.model) {
    const auto& m = *c.model;
    j["model"] = {{"depth", m.depth},         {"heads", m.heads},
                  {"head_dim", m.head_dim},   {"mlp_hidden", m.mlp_hidden},
                  {"seq_len", m.seq_len},     {"prune_layer", m.prune_layer},
                  {"num_classes", m.num_classes}};
  }
}

inline void from_json(const nlohmann::json& j, RunConfig& out) {
  using config_detail::maybe;
  using config_detail::reject_unknown;
  reject_unknown(j, "config",
                 {"preset", "model", "prune", "tiles", "grid", "timing", "seed", "output",
                  "bench", "analysis", "check"});
  RunConfig c;
  maybe(j, "preset", c.preset);
  if (j.contains("model")) {
    const auto& m = j.at("model");
    reject_unknown(m, "model",
                   {"depth", "heads", "head_dim", "mlp_hidden", "seq_len", "prune_layer",
                    "num_classes"});
    ModelConfig mc;
    mc.name = "inline";
    mc.depth = m.at("depth").get<std::size_t>();
    mc.heads = m.at("heads").get<std::size_t>();
    mc.head_dim = m.at("head_dim").get<std::size_t>();
    mc.mlp_hidden = m.value("mlp_hidden", 4 * mc.heads * mc.head_dim);
    mc.seq_len = m.at("seq_len").get<std::size_t>();
    mc.prune_layer = m.at("prune_layer").get<std::size_t>();
    mc.num_classes = m.value("num_classes", std::size_t{10});
    c.model = mc;
  }
  if (j.contains("prune")) c.prune = j.at("prune").get<PruneSpec>();
  if (j.contains("tiles")) {
    const auto& t = j.at("tiles");
    reject_unknown(t, "tiles", {"block_m", "block_n", "block_d"});
    maybe(t, "block_m", c.tiles.block_m);
    maybe(t, "block_n", c.tiles.block_n);
    maybe(t, "block_d", c.tiles.block_d);
  }
  if (j.contains("grid")) {
    const auto& g = j.at("grid");
    reject_unknown(g, "grid", {"batch_sizes", "ratios", "backends", "workers"});
    maybe(g, "batch_sizes", c.grid.batch_sizes);
    maybe(g, "ratios", c.grid.ratios);
    maybe(g, "workers", c.grid.workers);
    if (g.contains("backends")) {
      c.grid.backends.clear();
      for (const auto& b : g.at("backends")) c.grid.backends.push_back(parse_backend(b.get<std::string>()));
    }
  }
  if (j.contains("timing")) {
    const auto& t = j.at("timing");
    reject_unknown(t, "timing", {"warmup", "iters", "reps"});
    maybe(t, "warmup", c.warmup);
    maybe(t, "iters", c.iters);
    maybe(t, "reps", c.reps);
  }
  maybe(j, "seed", c.seed);
  if (j.contains("output")) {
    const auto& o = j.at("output");
    reject_unknown(o, "output", {"dir", "formats"});
    maybe(o, "dir", c.out_dir);
    maybe(o, "formats", c.formats);
  }
  if (j.contains("bench")) {
    const auto& b = j.at("bench");
    reject_unknown(b, "bench", {"mode", "include_pack"});
    if (b.contains("mode")) c.mode = parse_bench_mode(b.at("mode").get<std::string>());
    maybe(b, "include_pack", c.include_pack);
  }
  if (j.contains("analysis")) {
    const auto& a = j.at("analysis");
    reject_unknown(a, "analysis", {"floor"});
    if (a.contains("floor")) c.floor = parse_floor_mode(a.at("floor").get<std::string>());
  }
  if (j.contains("check")) {
    const auto& k = j.at("check");
    reject_unknown(k, "check", {"ratios", "seeds", "batch_size", "oracle_cases"});
    maybe(k, "ratios", c.check_ratios);
    maybe(k, "seeds", c.check_seeds);
    maybe(k, "batch_size", c.check_batch);
    maybe(k, "oracle_cases", c.oracle_cases);
  }
  c.validate();
  out = std::move(c);
}

inline RunConfig parse_run_config(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("config is not valid JSON: ") + e.what());
  }
  try {
    return j.get<RunConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("config: ") + e.what());
  }
}

}  // namespace ragged_attn
