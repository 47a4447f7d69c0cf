// SPDX-License-Identifier: Apache-2.0
#pragma once

// Equivalence suites behind `check`: the ragged kernel against the quadratic
// oracle, and the ragged pipeline against the padded one.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ragged_attn/bench.hpp"
#include "ragged_attn/pipeline.hpp"
#include "ragged_attn/ragged_attention.hpp"
#include "ragged_attn/reference_attention.hpp"

namespace ragged_attn {

inline constexpr double kOracleTolerance = 1e-5;
inline constexpr double kLogitTolerance = 1e-4;

struct OracleCase {
  std::vector<std::int64_t> cu_seqlens;
  std::size_t heads = 1;
  std::size_t head_dim = 8;
  TileConfig tiles{};
  std::uint64_t seed = 0;
};

struct OracleSuiteResult {
  std::size_t cases = 0;
  double max_abs_diff = 0;
  std::size_t worst_case = 0;
  bool passed = true;
};

/// Random ragged case: B in [1, max_batch], lengths in [1, max_len],
/// H from {1, 4}, d from {8, 16, 64}, B_M and B_N from {8, 16, 32, 64}.
inline OracleCase random_oracle_case(std::uint64_t seed, std::size_t max_batch = 8,
                                     std::size_t max_len = 64) {
  std::mt19937_64 rng(seed);
  auto pick = [&](std::initializer_list<std::size_t> xs) {
    std::uniform_int_distribution<std::size_t> u(0, xs.size() - 1);
    return *(xs.begin() + static_cast<std::ptrdiff_t>(u(rng)));
  };
  OracleCase c;
  c.seed = seed;
  const std::size_t B = std::uniform_int_distribution<std::size_t>(1, max_batch)(rng);
  c.cu_seqlens.push_back(0);
  std::uniform_int_distribution<std::int64_t> len(1, static_cast<std::int64_t>(max_len));
  for (std::size_t i = 0; i < B; ++i) c.cu_seqlens.push_back(c.cu_seqlens.back() + len(rng));
  c.heads = pick({1, 4});
  c.head_dim = pick({8, 16, 64});
  c.tiles.block_m = pick({8, 16, 32, 64});
  c.tiles.block_n = pick({8, 16, 32, 64});
  c.tiles.block_d = c.head_dim;
  return c;
}

inline RaggedQKV make_qkv(const OracleCase& c) {
  const auto T = static_cast<std::size_t>(c.cu_seqlens.back());
  const Shape s{T, c.heads, c.head_dim};
  return RaggedQKV(detail::random_normal(s, c.seed * 3 + 101),
                   detail::random_normal(s, c.seed * 3 + 102),
                   detail::random_normal(s, c.seed * 3 + 103), c.cu_seqlens);
}

/// max |ragged - naive| over every (image, head) of `qkv`.
inline double max_oracle_diff(const RaggedQKV& qkv, const FloatTensor& ragged_out) {
  const std::size_t H = qkv.heads(), d = qkv.head_dim();
  const auto& cu = qkv.cu_seqlens();
  double worst = 0;
  for (std::size_t i = 0; i + 1 < cu.size(); ++i) {
    const auto s = static_cast<std::size_t>(cu[i]);
    const auto n = static_cast<std::size_t>(cu[i + 1] - cu[i]);
    if (n == 0) continue;
    for (std::size_t h = 0; h < H; ++h) {
      FloatTensor q({n, d}), k({n, d}), v({n, d});
      for (std::size_t r = 0; r < n; ++r) {
        const std::size_t off = ((s + r) * H + h) * d;
        for (std::size_t e = 0; e < d; ++e) {
          q[r * d + e] = qkv.q()[off + e];
          k[r * d + e] = qkv.k()[off + e];
          v[r * d + e] = qkv.v()[off + e];
        }
      }
      const FloatTensor ref = naive_attention(q, k, v);
      for (std::size_t r = 0; r < n; ++r) {
        const std::size_t off = ((s + r) * H + h) * d;
        for (std::size_t e = 0; e < d; ++e) {
          const double diff = std::abs(static_cast<double>(ragged_out[off + e]) -
                                       static_cast<double>(ref[r * d + e]));
          worst = std::isnan(diff) ? std::numeric_limits<double>::infinity()
                                   : std::max(worst, diff);
        }
      }
    }
  }
  return worst;
}

inline OracleSuiteResult run_oracle_suite(std::size_t cases, std::uint64_t seed,
                                          bool skip_normalize = false) {
  OracleSuiteResult res;
  for (std::size_t c = 0; c < cases; ++c) {
    const OracleCase oc = random_oracle_case(seed * 7919 + c);
    const RaggedQKV qkv = make_qkv(oc);
    RaggedOptions opts;
    opts.skip_normalize = skip_normalize;
    const double diff = max_oracle_diff(qkv, ragged_attention_forward(qkv, oc.tiles, opts));
    if (diff > res.max_abs_diff || std::isnan(diff)) {
      res.max_abs_diff = diff;
      res.worst_case = c;
    }
    ++res.cases;
  }
  res.passed = res.max_abs_diff <= kOracleTolerance;
  return res;
}

struct BackendFailure {
  std::uint64_t seed = 0;
  double ratio = 0;
  std::string reason;
};

/// Table-style row: one per pruning method.
struct BackendSuiteRow {
  PruneMethod method = PruneMethod::threshold_l2;
  double max_abs_diff = 0;
  double mean_abs_diff = 0;
  std::size_t images = 0;
  std::size_t preds_matched = 0;
  bool masks_identical = true;
  std::vector<BackendFailure> failures;

  double match_rate() const {
    return images ? static_cast<double>(preds_matched) / static_cast<double>(images) : 1.0;
  }
  bool passed() const { return failures.empty(); }
};

inline std::size_t argmax_row(const FloatTensor& logits, std::size_t row) {
  const std::size_t C = logits.dim(1);
  auto r = logits.row(row, C);
  return static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
}

/// forward_padded vs forward_ragged over `seeds` weight/input seeds and every
/// ratio. The seed drives weights, inputs, and the random method's mask.
inline BackendSuiteRow run_backend_suite(const ModelConfig& config, PruneMethod method,
                                         const std::vector<double>& ratios, std::size_t seeds,
                                         std::size_t batch, const PipelineOptions& opts = {}) {
  BackendSuiteRow row;
  row.method = method;
  double sum = 0;
  std::size_t count = 0;
  for (std::size_t s = 0; s < seeds; ++s) {
    const ViTWeights w = init_weights(config, s);
    const DenseBatch input(detail::random_normal(
        {batch, config.seq_len, config.embed_dim()}, 0xC0FFEEull + s));
    for (double ratio : ratios) {
      const PruneSpec spec{method, ratio, s, 0.0};
      const auto padded = forward_padded(config, w, input, spec);
      const auto ragged = forward_ragged(config, w, input, spec, opts);
      double worst = 0;
      for (std::size_t i = 0; i < padded.logits.size(); ++i) {
        const double diff = std::abs(static_cast<double>(padded.logits[i]) -
                                     static_cast<double>(ragged.logits[i]));
        worst = std::isnan(diff) ? std::numeric_limits<double>::infinity() : std::max(worst, diff);
        sum += std::isnan(diff) ? 0.0 : diff;
        ++count;
      }
      std::size_t matched = 0;
      for (std::size_t i = 0; i < batch; ++i) {
        matched += argmax_row(padded.logits, i) == argmax_row(ragged.logits, i);
      }
      row.images += batch;
      row.preds_matched += matched;
      row.max_abs_diff = std::max(row.max_abs_diff, worst);
      const bool same_mask = padded.mask == ragged.mask;
      row.masks_identical = row.masks_identical && same_mask;
      if (worst > kLogitTolerance) {
        row.failures.push_back({s, ratio, "max |logit diff| " + std::to_string(worst)});
      } else if (matched != batch) {
        row.failures.push_back({s, ratio, "prediction mismatch"});
      } else if (!same_mask) {
        row.failures.push_back({s, ratio, "keep masks differ"});
      }
    }
  }
  row.mean_abs_diff = count ? sum / static_cast<double>(count) : 0.0;
  return row;
}

}  // namespace ragged_attn
