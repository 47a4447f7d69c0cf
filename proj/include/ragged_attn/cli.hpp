// SPDX-License-Identifier: Apache-2.0
#pragma once

// Command-line front end: check, bench, analyze, gen-fixtures.
//
// Exit codes: 0 success, 1 tolerance violation, 2 usage/config error,
// 3 I/O error.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "ragged_attn/bench.hpp"
#include "ragged_attn/equivalence.hpp"
#include "ragged_attn/packing.hpp"
#include "ragged_attn/pipeline.hpp"
#include "ragged_attn/report.hpp"
#include "ragged_attn/run_config.hpp"
#include "ragged_attn/tensor_io.hpp"

namespace ragged_attn::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitTolerance = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitIo = 3;

namespace detail {

template <typename T, typename Parse>
std::vector<T> split_list(const std::string& s, Parse&& parse) {
  std::vector<T> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(parse(item));
  }
  if (out.empty()) throw InvalidArgument("empty list '" + s + "'");
  return out;
}

inline std::size_t to_size(const std::string& s) {
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(s, &used);
  } catch (const std::exception&) {
    throw InvalidArgument("expected an integer, got '" + s + "'");
  }
  if (used != s.size()) throw InvalidArgument("expected an integer, got '" + s + "'");
  return static_cast<std::size_t>(v);
}

inline double to_double(const std::string& s) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw InvalidArgument("expected a number, got '" + s + "'");
  }
  if (used != s.size()) throw InvalidArgument("expected a number, got '" + s + "'");
  return v;
}

inline std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write '" + path.string() + "'");
  os << bytes;
  if (!os) throw IoError("failed writing '" + path.string() + "'");
}

// Flags as parsed; empty strings / unset optionals mean "not given".
struct Flags {
  std::string config_path;
  std::string preset;
  std::string ratio, bs, backend, workers;
  std::optional<std::size_t> warmup, iters, reps, tile_m, tile_n, seeds;
  std::optional<std::uint64_t> seed;
  std::string out, format, floor, external_csv, mode, method, fault;
  std::vector<std::string> grid;
  bool include_pack = false;
  std::string csv_path;  // analyze positional
};

// Config file first, then flags on top.
inline RunConfig resolve(const Flags& f, std::string_view subcommand) {
  RunConfig c;
  if (!f.config_path.empty()) c = parse_run_config(read_file(f.config_path));
  if (const char* env = std::getenv("RAGGED_ATTN_WORKERS"); env && *env && f.workers.empty()) {
    c.grid.workers = split_list<std::size_t>(env, to_size);
  }
  if (!f.preset.empty()) {
    (void)make_config(f.preset);
    c.preset = f.preset;
    c.model.reset();
  }
  for (const auto& token : f.grid) {
    const auto eq = token.find('=');
    if (eq == std::string::npos) throw InvalidArgument("--grid expects key=list, got '" + token + "'");
    const std::string key = token.substr(0, eq), val = token.substr(eq + 1);
    if (key == "bs") {
      c.grid.batch_sizes = split_list<std::size_t>(val, to_size);
    } else if (key == "ratio") {
      c.grid.ratios = split_list<double>(val, to_double);
    } else if (key == "backend") {
      c.grid.backends = split_list<Backend>(val, [](const std::string& s) { return parse_backend(s); });
    } else if (key == "workers") {
      c.grid.workers = split_list<std::size_t>(val, to_size);
    } else {
      throw InvalidArgument("--grid: unknown key '" + key + "'");
    }
  }
  if (!f.ratio.empty()) {
    auto r = split_list<double>(f.ratio, to_double);
    c.grid.ratios = r;
    c.check_ratios = r;
    c.prune.ratio = r.front();
  }
  if (!f.bs.empty()) {
    c.grid.batch_sizes = split_list<std::size_t>(f.bs, to_size);
    c.check_batch = c.grid.batch_sizes.front();
  }
  if (!f.backend.empty()) {
    c.grid.backends = split_list<Backend>(f.backend, [](const std::string& s) { return parse_backend(s); });
  }
  if (!f.workers.empty()) c.grid.workers = split_list<std::size_t>(f.workers, to_size);
  if (f.warmup) c.warmup = *f.warmup;
  if (f.iters) c.iters = *f.iters;
  if (f.reps) c.reps = *f.reps;
  if (f.tile_m) c.tiles.block_m = *f.tile_m;
  if (f.tile_n) c.tiles.block_n = *f.tile_n;
  if (f.seeds) c.check_seeds = *f.seeds;
  if (f.seed) {
    c.seed = *f.seed;
    c.prune.seed = *f.seed;
  }
  if (!f.out.empty()) c.out_dir = f.out;
  if (!f.format.empty()) {
    c.formats = split_list<std::string>(f.format, [](const std::string& s) { return s; });
  }
  if (!f.floor.empty()) c.floor = parse_floor_mode(f.floor);
  if (!f.mode.empty()) c.mode = parse_bench_mode(f.mode);
  if (!f.method.empty()) c.prune.method = parse_prune_method(f.method);
  if (f.include_pack) c.include_pack = true;
  (void)subcommand;
  c.validate();
  return c;
}

inline BenchParams bench_params(const RunConfig& c) {
  BenchParams p;
  p.warmup = c.warmup;
  p.iters = c.iters;
  p.reps = c.reps;
  p.include_pack = c.include_pack;
  p.tiles = c.tiles;
  p.seed = c.seed;
  p.method = c.prune.method;
  return p;
}

inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace detail

inline int cmd_check(const RunConfig& c, bool fault_skip_normalize, std::ostream& out) {
  const ModelConfig model = c.model_config();
  bool ok = true;

  out << "Oracle equivalence: ragged kernel vs naive attention\n";
  const auto oracle = run_oracle_suite(c.oracle_cases, c.seed, fault_skip_normalize);
  out << "  cases " << oracle.cases << ", max |diff| " << detail::fmt("%.3e", oracle.max_abs_diff)
      << " (tolerance " << detail::fmt("%.0e", kOracleTolerance) << ") "
      << (oracle.passed ? "PASS" : "FAIL") << '\n';
  if (!oracle.passed) {
    out << "  worst case index " << oracle.worst_case << " (seed " << c.seed << ")\n";
    ok = false;
  }

  out << "\nBackend equivalence: forward_ragged vs forward_padded (" << model.name << ", B="
      << c.check_batch << ", " << c.check_seeds << " seeds, ratios";
  for (double r : c.check_ratios) out << ' ' << r;
  out << ")\n";
  char buf[160];
  std::snprintf(buf, sizeof buf, "  %-14s %12s %12s %12s\n", "Method", "Max |D|", "Mean |D|",
                "Preds Match");
  out << buf;
  PipelineOptions opts;
  opts.tiles = c.tiles;
  opts.workers = c.grid.workers.empty() ? 1 : c.grid.workers.front();
  opts.skip_normalize = fault_skip_normalize;
  for (PruneMethod m : {PruneMethod::threshold_l2, PruneMethod::topk_l2, PruneMethod::random}) {
    const auto row = run_backend_suite(model, m, c.check_ratios, c.check_seeds, c.check_batch, opts);
    std::snprintf(buf, sizeof buf, "  %-14s %12.3e %12.3e %11.1f%%\n",
                  std::string(to_string(m)).c_str(), row.max_abs_diff, row.mean_abs_diff,
                  100.0 * row.match_rate());
    out << buf;
    for (const auto& f : row.failures) {
      out << "    FAIL method=" << to_string(m) << " seed=" << f.seed << " ratio=" << f.ratio
          << " config=" << model.name << ": " << f.reason << '\n';
      ok = false;
    }
  }
  out << (ok ? "\nall checks passed\n" : "\nequivalence violations found\n");
  return ok ? kExitOk : kExitTolerance;
}

inline int cmd_bench(const RunConfig& c, std::ostream& out, std::ostream& err) {
  const ModelConfig model = c.model_config();
  const BenchParams params = detail::bench_params(c);
  namespace fs = std::filesystem;
  const fs::path dir(c.out_dir);

  auto emit = [&](std::vector<TimingRecord> records, const std::string& stem) {
    std::size_t skipped = 0;
    for (const auto& r : records) skipped += r.skipped;
    if (skipped) err << "warning: " << skipped << " cell(s) skipped (out of memory)\n";
    if (skipped < records.size()) apply_overhead(records, decompose_overhead(records, c.floor));
    out << stem << " sweep (" << model.name << ")\n" << format_summary(records) << '\n';
    for (const auto& f : c.formats) {
      const fs::path path = dir / (stem + "." + f);
      detail::write_file(path, f == "csv" ? emit_csv(records)
                                          : emit_svg(records, stem + " latency vs batch size"));
      out << "wrote " << path.string() << '\n';
    }
  };

  if (c.mode == BenchMode::kernel || c.mode == BenchMode::both) {
    emit(sweep_kernel(c.grid, model, params), "kernel");
  }
  if (c.mode == BenchMode::pipeline || c.mode == BenchMode::both) {
    SweepGrid g = c.grid;
    std::erase(g.backends, Backend::naive);
    if (g.backends.empty()) throw InvalidArgument("pipeline sweep needs ragged or padded backends");
    emit(sweep_pipeline(g, model, c.prune, params), "pipeline");
  }
  return kExitOk;
}

inline int cmd_analyze(const RunConfig& c, const std::string& csv_path, std::ostream& out) {
  auto records = parse_csv(detail::read_file(csv_path));
  const auto report = decompose_overhead(records, c.floor);
  apply_overhead(records, report);
  out << "Overhead decomposition (" << (c.floor == FloorMode::min ? "floor = min" : "floor = regress")
      << ") for " << csv_path << "\n";
  for (const auto& [backend, floor] : report.floor_ms) {
    out << "  floor[" << backend << "] = " << detail::fmt("%.6g", floor) << " ms\n";
  }
  char buf[160];
  std::snprintf(buf, sizeof buf, "  %-14s %5s %7s %10s %10s\n", "backend", "BS", "prune", "total_ms",
                "overhead");
  out << buf;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.skipped) continue;
    std::snprintf(buf, sizeof buf, "  %-14s %5zu %6.0f%% %10.4g %9.0f%%\n", r.backend.c_str(),
                  r.batch_size, r.prune_ratio * 100.0, r.mean_ms, report.overhead_pct[i]);
    out << buf;
  }
  if (!c.out_dir.empty() && c.out_dir != ".") {
    const auto path = std::filesystem::path(c.out_dir) / "overhead.csv";
    detail::write_file(path, emit_csv(records));
    out << "wrote " << path.string() << '\n';
  }
  return kExitOk;
}

/// RGT1/RGI1 fixtures for cross-implementation testing: a ragged q/k/v with
/// its cu_seqlens and kernel output, plus a model, input, mask, and logits.
inline int cmd_gen_fixtures(const RunConfig& c, std::ostream& out) {
  namespace fs = std::filesystem;
  const ModelConfig model = c.model_config();
  const fs::path dir(c.out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());

  const std::size_t B = c.grid.batch_sizes.empty() ? 4 : c.grid.batch_sizes.front();
  const DenseBatch input(
      ragged_attn::detail::random_normal({B, model.seq_len, model.embed_dim()}, c.seed + 17));
  const ViTWeights weights = init_weights(model, c.seed);
  const auto result = forward_ragged(model, weights, input, c.prune);
  const PackPlan plan = compute_pack_plan(result.mask);

  const std::size_t T = plan.total_kept(), H = model.heads, d = model.head_dim;
  const Shape s3{T, H, d};
  const RaggedQKV qkv(ragged_attn::detail::random_normal(s3, c.seed + 1),
                      ragged_attn::detail::random_normal(s3, c.seed + 2),
                      ragged_attn::detail::random_normal(s3, c.seed + 3), plan.cu_seqlens);
  const FloatTensor attn = ragged_attention_forward(qkv, c.tiles);

  Tensor<std::int64_t> cu({plan.cu_seqlens.size()}, plan.cu_seqlens);
  Tensor<std::int64_t> mask({B, model.seq_len});
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = result.mask.values()[i];

  auto path = [&](const char* name) { return (dir / name).string(); };
  save_rgt1(path("q.rgt"), qkv.q());
  save_rgt1(path("k.rgt"), qkv.k());
  save_rgt1(path("v.rgt"), qkv.v());
  save_rgi1(path("cu_seqlens.rgi"), cu);
  save_rgt1(path("attn_out.rgt"), attn);
  save_rgt1(path("input.rgt"), input.tensor());
  save_rgi1(path("keep_mask.rgi"), mask);
  save_rgt1(path("logits.rgt"), result.logits);
  save_bundle(path("weights.rgt"), weights_to_bundle(weights));
  nlohmann::json meta = c;
  meta["resolved_model"] = {{"name", model.name},       {"depth", model.depth},
                            {"heads", model.heads},     {"head_dim", model.head_dim},
                            {"seq_len", model.seq_len}, {"prune_layer", model.prune_layer},
                            {"kept_tokens_per_image", kept_tokens(model.seq_len, c.prune.ratio)}};
  detail::write_file(dir / "fixtures.json", meta.dump(2) + "\n");
  out << "wrote fixtures to " << dir.string() << " (B=" << B << ", T=" << T << ")\n";
  return kExitOk;
}

/// Entry point; returns the process exit code.
inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Ragged attention for token-pruned transformer inference", "ragged_attn"};
  app.require_subcommand(1);
  detail::Flags f;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", f.config_path, "JSON run config; flags override its values");
    sub->add_option("--preset", f.preset, "Model preset: deit_tiny, deit_small, deit_base, desk");
    sub->add_option("--ratio", f.ratio, "Prune ratio(s), comma separated");
    sub->add_option("--bs", f.bs, "Batch size(s), comma separated");
    sub->add_option("--backend", f.backend, "Backend(s): ragged, padded, naive");
    sub->add_option("--warmup", f.warmup, "Untimed warmup iterations (default 10)");
    sub->add_option("--iters", f.iters, "Timed iterations (default 500)");
    sub->add_option("--reps", f.reps, "Sweep repetitions; the median repetition is kept");
    sub->add_option("--workers", f.workers,
                    "Worker count(s) for the ragged kernel (default $RAGGED_ATTN_WORKERS or 1)");
    sub->add_option("--tile-m", f.tile_m, "Query tile rows B_M (default 64)");
    sub->add_option("--tile-n", f.tile_n, "Key tile rows B_N (default 64)");
    sub->add_option("--seed", f.seed, "Random seed");
    sub->add_option("--out", f.out, "Output directory");
    sub->add_option("--format", f.format, "Output format(s): csv, svg");
    sub->add_option("--floor", f.floor, "Floor estimate: min (default) or regress");
    sub->add_option("--method", f.method, "Pruning method: threshold_l2, topk_l2, random");
  };

  auto* check = app.add_subcommand("check", "Oracle and backend equivalence suites");
  add_common(check);
  check->add_option("--seeds", f.seeds, "Seeds for the backend suite (default 20)");
  check->add_option("--fault", f.fault, "Fault injection for testing: skip-normalize")
      ->group("");

  auto* bench = app.add_subcommand("bench", "Kernel and pipeline latency sweeps");
  add_common(bench);
  bench->add_option("--grid", f.grid, "Grid tokens: bs=4,16 ratio=0,0.5 backend=ragged,padded");
  bench->add_option("--mode", f.mode, "kernel (default), pipeline, or both");
  bench->add_flag("--include-pack", f.include_pack, "Time pack-plan construction and packing too");

  auto* analyze = app.add_subcommand("analyze", "Overhead decomposition of a records CSV");
  add_common(analyze);
  analyze->add_option("records_csv", f.csv_path, "CSV in the bench schema");
  analyze->add_option("--paper-data", f.external_csv, "CSV of externally measured latencies");

  auto* gen = app.add_subcommand("gen-fixtures", "Write RGT1/RGI1 tensors for cross-testing");
  add_common(gen);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (check->parsed()) {
      if (!f.fault.empty() && f.fault != "skip-normalize") {
        throw InvalidArgument("unknown fault '" + f.fault + "'");
      }
      return cmd_check(detail::resolve(f, "check"), f.fault == "skip-normalize", out);
    }
    if (bench->parsed()) return cmd_bench(detail::resolve(f, "bench"), out, err);
    if (analyze->parsed()) {
      const std::string path = !f.external_csv.empty() ? f.external_csv : f.csv_path;
      if (path.empty()) throw InvalidArgument("analyze needs a records CSV or --paper-data");
      RunConfig c = detail::resolve(f, "analyze");
      if (f.out.empty()) c.out_dir = ".";
      return cmd_analyze(c, path, out);
    }
    if (gen->parsed()) return cmd_gen_fixtures(detail::resolve(f, "gen-fixtures"), out);
  } catch (const CsvError& e) {
    err << "error: malformed CSV: " << e.what() << '\n';
    return kExitUsage;
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const InvalidArgument& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const nlohmann::json::exception& e) {
    err << "error: config: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace ragged_attn::cli
