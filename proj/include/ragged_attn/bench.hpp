// SPDX-License-Identifier: Apache-2.0
#pragma once

// Measurement harness: warmup + timed iterations per call, sweeps over
// (batch size x prune ratio x backend x workers), and the floor/overhead
// decomposition. The decomposition is pure arithmetic and also runs on
// externally measured latencies.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <new>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "ragged_attn/core.hpp"
#include "ragged_attn/packing.hpp"
#include "ragged_attn/pipeline.hpp"
#include "ragged_attn/pruning.hpp"
#include "ragged_attn/ragged_attention.hpp"
#include "ragged_attn/reference_attention.hpp"

namespace ragged_attn {

inline constexpr std::size_t kDefaultWarmup = 10;
inline constexpr std::size_t kDefaultIters = 500;

struct LatencyStats {
  double mean_ms = 0;
  double p50_ms = 0;
  double min_ms = 0;
  double stddev_ms = 0;
  std::size_t samples = 0;
};

inline LatencyStats summarize(std::vector<double> samples_ms) {
  if (samples_ms.empty()) throw InvalidArgument("summarize: no samples");
  LatencyStats s;
  s.samples = samples_ms.size();
  const double n = static_cast<double>(samples_ms.size());
  s.mean_ms = std::accumulate(samples_ms.begin(), samples_ms.end(), 0.0) / n;
  double ss = 0;
  for (double x : samples_ms) ss += (x - s.mean_ms) * (x - s.mean_ms);
  s.stddev_ms = samples_ms.size() > 1 ? std::sqrt(ss / (n - 1)) : 0.0;
  std::sort(samples_ms.begin(), samples_ms.end());
  const std::size_t mid = samples_ms.size() / 2;
  s.p50_ms = samples_ms.size() % 2 ? samples_ms[mid]
                                   : 0.5 * (samples_ms[mid - 1] + samples_ms[mid]);
  s.min_ms = samples_ms.front();
  // Rounding in the mean of identical samples must not break min <= mean.
  if (s.mean_ms < s.min_ms) s.mean_ms = s.min_ms;
  return s;
}

/// Runs `op` warmup times untimed, then times each of `iters` calls
/// individually. `op` must return only after all of its work is complete.
template <typename Op>
LatencyStats time_op(Op&& op, std::size_t warmup = kDefaultWarmup,
                     std::size_t iters = kDefaultIters) {
  if (iters < 1) throw InvalidArgument("time_op: iters must be >= 1");
  using clock = std::chrono::steady_clock;
  for (std::size_t i = 0; i < warmup; ++i) op();
  std::vector<double> samples;
  samples.reserve(iters);
  for (std::size_t i = 0; i < iters; ++i) {
    const auto t0 = clock::now();
    op();
    const auto t1 = clock::now();
    samples.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return summarize(std::move(samples));
}

enum class Backend { ragged, padded_masked, naive };

inline std::string_view to_string(Backend b) {
  switch (b) {
    case Backend::ragged: return "ragged";
    case Backend::padded_masked: return "padded_masked";
    case Backend::naive: return "naive";
  }
  return "?";
}

inline Backend parse_backend(std::string_view s) {
  if (s == "ragged") return Backend::ragged;
  if (s == "padded_masked" || s == "padded") return Backend::padded_masked;
  if (s == "naive") return Backend::naive;
  throw InvalidArgument("unknown backend '" + std::string(s) + "'");
}

/// One measurement. `backend` is a free label so records transcribed from
/// elsewhere (other kernels) fit the same schema.
struct TimingRecord {
  std::string backend;
  std::size_t batch_size = 0;
  double prune_ratio = 0;
  double tokens_per_image = 0;
  std::size_t total_tokens = 0;
  std::size_t warmup_iters = 0;
  std::size_t timed_iters = 0;
  double mean_ms = 0;
  double p50_ms = 0;
  double min_ms = 0;
  double stddev_ms = 0;
  std::size_t worker_count = 1;
  TileConfig tiles{};
  std::optional<std::uint64_t> op_counter;
  std::optional<double> images_per_s;
  std::optional<double> overhead_pct;
  bool include_pack = false;
  bool skipped = false;

  void set_stats(const LatencyStats& s) {
    mean_ms = s.mean_ms;
    p50_ms = s.p50_ms;
    min_ms = s.min_ms;
    stddev_ms = s.stddev_ms;
  }
};

struct SweepGrid {
  std::vector<std::size_t> batch_sizes;
  std::vector<double> ratios;
  std::vector<Backend> backends;
  std::vector<std::size_t> workers{1};

  std::size_t cells() const {
    return batch_sizes.size() * ratios.size() * backends.size() * workers.size();
  }
};

struct BenchParams {
  std::size_t warmup = kDefaultWarmup;
  std::size_t iters = kDefaultIters;
  std::size_t reps = 1;
  bool include_pack = false;
  TileConfig tiles{};
  std::uint64_t seed = 0;
  PruneMethod method = PruneMethod::threshold_l2;
};

namespace detail {

struct Cell {
  std::size_t batch_size;
  double ratio;
  Backend backend;
  std::size_t workers;
};

inline std::vector<Cell> expand(const SweepGrid& grid) {
  if (grid.cells() == 0) throw InvalidArgument("sweep grid is empty");
  std::vector<Cell> cells;
  for (auto bs : grid.batch_sizes)
    for (double r : grid.ratios)
      for (auto be : grid.backends)
        for (auto w : grid.workers) cells.push_back({bs, r, be, w});
  return cells;
}

inline FloatTensor random_normal(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> dist(0.0f, 1.0f);
  FloatTensor t(std::move(shape));
  for (float& x : t.data()) x = dist(rng);
  return t;
}

// Seed for cell inputs: depends on batch size only, so every backend and
// ratio at a given batch size sees the same tensors.
inline std::uint64_t cell_seed(std::uint64_t seed, std::size_t batch_size) {
  return seed * 1000003ull + batch_size;
}

// Times every cell `reps` times, visiting cells in a fresh random order per
// repetition, and keeps the repetition whose mean is the median.
template <typename MeasureCell>
std::vector<TimingRecord> run_sweep(const std::vector<Cell>& cells, const BenchParams& params,
                                    MeasureCell&& measure) {
  const std::size_t reps = std::max<std::size_t>(1, params.reps);
  std::vector<std::vector<TimingRecord>> trials(cells.size());
  std::vector<std::size_t> order(cells.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(params.seed ^ 0x9e3779b97f4a7c15ull);
  for (std::size_t rep = 0; rep < reps; ++rep) {
    if (reps > 1) std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t idx : order) {
      TimingRecord rec;
      try {
        rec = measure(cells[idx]);
      } catch (const std::bad_alloc&) {
        rec = TimingRecord{};
        rec.backend = std::string(to_string(cells[idx].backend));
        rec.batch_size = cells[idx].batch_size;
        rec.prune_ratio = cells[idx].ratio;
        rec.worker_count = cells[idx].workers;
        rec.skipped = true;
      }
      trials[idx].push_back(std::move(rec));
    }
  }
  std::vector<TimingRecord> out;
  out.reserve(cells.size());
  for (auto& t : trials) {
    std::sort(t.begin(), t.end(), [](const TimingRecord& a, const TimingRecord& b) {
      return a.mean_ms < b.mean_ms;
    });
    out.push_back(std::move(t[t.size() / 2]));
  }
  return out;
}

inline TimingRecord base_record(const Cell& c, const BenchParams& p) {
  TimingRecord r;
  r.backend = std::string(to_string(c.backend));
  r.batch_size = c.batch_size;
  r.prune_ratio = c.ratio;
  r.warmup_iters = p.warmup;
  r.timed_iters = p.iters;
  r.worker_count = c.workers;
  r.tiles = p.tiles;
  return r;
}

inline void naive_per_image(const FloatTensor& q, const FloatTensor& k, const FloatTensor& v,
                            const std::vector<std::int64_t>& cu, FloatTensor& out) {
  const std::size_t H = q.dim(1), d = q.dim(2), stride = H * d;
  for (std::size_t i = 0; i + 1 < cu.size(); ++i) {
    const auto s = static_cast<std::size_t>(cu[i]);
    const auto n = static_cast<std::size_t>(cu[i + 1] - cu[i]);
    if (n == 0) continue;
    for (std::size_t h = 0; h < H; ++h) {
      const std::size_t off = s * stride + h * d;
      const std::size_t len = (n - 1) * stride + d;
      dense_attention({q.data().subspan(off, len), stride, d},
                      {k.data().subspan(off, len), stride, d},
                      {v.data().subspan(off, len), stride, d}, n,
                      {out.data().subspan(off, len), stride, d});
    }
  }
}

}  // namespace detail

/// Isolated attention latency per (batch size, ratio, backend, workers) cell.
/// Inputs are [B, S, H, d] normal tensors; masks come from `params.method`
/// applied to the query features.
inline std::vector<TimingRecord> sweep_kernel(const SweepGrid& grid, const ModelConfig& config,
                                              const BenchParams& params) {
  config.validate();
  params.tiles.validate();
  const std::size_t S = config.seq_len, H = config.heads, d = config.head_dim;
  const std::size_t D = H * d;

  auto measure = [&](const detail::Cell& c) {
    TimingRecord rec = detail::base_record(c, params);
    rec.include_pack = params.include_pack && c.backend == Backend::ragged;
    const std::size_t B = c.batch_size;
    const std::uint64_t seed = detail::cell_seed(params.seed, B);
    const Shape s4{B, S, H, d};
    const FloatTensor q = detail::random_normal(s4, seed);
    const FloatTensor k = detail::random_normal(s4, seed + 1);
    const FloatTensor v = detail::random_normal(s4, seed + 2);

    PruneSpec spec{params.method, c.ratio, seed, 0.0};
    const KeepMask mask = generate_mask(spec, DenseBatch(q.reshaped({B, S, D})));
    rec.total_tokens = mask.total_kept();
    rec.tokens_per_image =
        static_cast<double>(mask.total_kept()) / static_cast<double>(std::max<std::size_t>(B, 1));

    auto pack_qkv = [&](const PackPlan& plan) {
      auto pk = [&](const FloatTensor& t) {
        return pack(DenseBatch(t.reshaped({B, S, D})), plan)
            .packed()
            .reshaped({plan.total_kept(), H, d});
      };
      return RaggedQKV(pk(q), pk(k), pk(v), plan.cu_seqlens);
    };

    switch (c.backend) {
      case Backend::ragged: {
        RaggedOptions opts;
        opts.workers = c.workers;
        const PackPlan plan = compute_pack_plan(mask);
        const RaggedQKV qkv = pack_qkv(plan);
        {
          OpCounts counts;
          RaggedOptions counted = opts;
          counted.counter = &counts;
          (void)ragged_attention_forward(qkv, params.tiles, counted);
          rec.op_counter = counts.tile_pairs;
        }
        if (params.include_pack) {
          rec.set_stats(time_op(
              [&] {
                const PackPlan p = compute_pack_plan(mask);
                auto out = ragged_attention_forward(pack_qkv(p), params.tiles, opts);
                (void)out;
              },
              params.warmup, params.iters));
        } else {
          rec.set_stats(time_op(
              [&] {
                auto out = ragged_attention_forward(qkv, params.tiles, opts);
                (void)out;
              },
              params.warmup, params.iters));
        }
        break;
      }
      case Backend::padded_masked: {
        const auto attn_mask = AttentionMask::from_keep_mask(mask);
        rec.set_stats(time_op(
            [&] {
              auto out = padded_masked_attention(q, k, v, attn_mask);
              (void)out;
            },
            params.warmup, params.iters));
        break;
      }
      case Backend::naive: {
        const PackPlan plan = compute_pack_plan(mask);
        const RaggedQKV qkv = pack_qkv(plan);
        rec.set_stats(time_op(
            [&] {
              FloatTensor out(qkv.q().shape());
              detail::naive_per_image(qkv.q(), qkv.k(), qkv.v(), qkv.cu_seqlens(), out);
            },
            params.warmup, params.iters));
        break;
      }
    }
    return rec;
  };
  return detail::run_sweep(detail::expand(grid), params, measure);
}

/// End-to-end forward latency and throughput per cell. Supports the ragged
/// and padded_masked backends.
inline std::vector<TimingRecord> sweep_pipeline(const SweepGrid& grid, const ModelConfig& config,
                                                const PruneSpec& spec, const BenchParams& params) {
  config.validate();
  for (auto b : grid.backends) {
    if (b == Backend::naive) {
      throw InvalidArgument("sweep_pipeline: backend 'naive' has no pipeline");
    }
  }
  const ViTWeights weights = init_weights(config, params.seed);
  const std::size_t S = config.seq_len, D = config.embed_dim();

  auto measure = [&](const detail::Cell& c) {
    TimingRecord rec = detail::base_record(c, params);
    rec.include_pack = c.backend == Backend::ragged;
    const std::size_t B = c.batch_size;
    const DenseBatch input(detail::random_normal({B, S, D}, detail::cell_seed(params.seed, B)));
    PruneSpec cell_spec = spec;
    cell_spec.ratio = c.ratio;

    PipelineOptions opts;
    opts.tiles = params.tiles;
    opts.workers = c.workers;
    if (c.backend == Backend::ragged) {
      OpCounts counts;
      PipelineOptions counted = opts;
      counted.counter = &counts;
      const auto probe = forward_ragged(config, weights, input, cell_spec, counted);
      rec.total_tokens = probe.mask.total_kept();
      rec.op_counter = counts.tile_pairs;
      rec.set_stats(time_op(
          [&] {
            auto r = forward_ragged(config, weights, input, cell_spec, opts);
            (void)r;
          },
          params.warmup, params.iters));
    } else {
      const auto probe = forward_padded(config, weights, input, cell_spec);
      rec.total_tokens = probe.mask.total_kept();
      rec.set_stats(time_op(
          [&] {
            auto r = forward_padded(config, weights, input, cell_spec);
            (void)r;
          },
          params.warmup, params.iters));
    }
    rec.tokens_per_image =
        static_cast<double>(rec.total_tokens) / static_cast<double>(std::max<std::size_t>(B, 1));
    rec.images_per_s = static_cast<double>(B) / (rec.mean_ms / 1000.0);
    return rec;
  };
  return detail::run_sweep(detail::expand(grid), params, measure);
}

// ---------------------------------------------------------------------------

enum class FloorMode { min, regress };

inline FloorMode parse_floor_mode(std::string_view s) {
  if (s == "min") return FloorMode::min;
  if (s == "regress") return FloorMode::regress;
  throw InvalidArgument("unknown floor mode '" + std::string(s) + "'");
}

struct OverheadReport {
  std::map<std::string, double> floor_ms;  // per backend
  std::vector<double> overhead_pct;        // per input record; NaN for skipped
};

/// Floor per backend and overhead_pct = min(100, 100 * floor / mean) per
/// record. In min mode the floor is the smallest mean_ms the backend
/// recorded; in regress mode it is the intercept of a least-squares fit
/// mean_ms = floor + slope * op_counter, clamped into (0, min mean_ms].
inline OverheadReport decompose_overhead(const std::vector<TimingRecord>& records,
                                         FloorMode mode = FloorMode::min) {
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!records[i].skipped) groups[records[i].backend].push_back(i);
  }
  if (groups.empty()) throw InvalidArgument("decompose_overhead: no measured records");

  OverheadReport report;
  for (const auto& [backend, idx] : groups) {
    double min_mean = std::numeric_limits<double>::infinity();
    for (auto i : idx) min_mean = std::min(min_mean, records[i].mean_ms);
    if (!(min_mean > 0)) {
      throw InvalidArgument("decompose_overhead: backend '" + backend +
                            "' has a non-positive latency");
    }
    double floor = min_mean;
    if (mode == FloorMode::regress) {
      double sx = 0, sy = 0, sxx = 0, sxy = 0, n = 0;
      for (auto i : idx) {
        if (!records[i].op_counter) continue;
        const double x = static_cast<double>(*records[i].op_counter);
        const double y = records[i].mean_ms;
        sx += x, sy += y, sxx += x * x, sxy += x * y, n += 1;
      }
      const double det = n * sxx - sx * sx;
      if (n >= 2 && det > 0) {
        const double slope = (n * sxy - sx * sy) / det;
        const double intercept = (sy - slope * sx) / n;
        floor = std::clamp(intercept, min_mean * 1e-6, min_mean);
      }
    }
    report.floor_ms[backend] = floor;
  }
  report.overhead_pct.reserve(records.size());
  for (const auto& r : records) {
    if (r.skipped) {
      report.overhead_pct.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    const double f = report.floor_ms.at(r.backend);
    report.overhead_pct.push_back(std::min(100.0, 100.0 * f / r.mean_ms));
  }
  return report;
}

inline void apply_overhead(std::vector<TimingRecord>& records, const OverheadReport& report) {
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!records[i].skipped) records[i].overhead_pct = report.overhead_pct[i];
  }
}

}  // namespace ragged_attn
