// SPDX-License-Identifier: Apache-2.0
#pragma once

// Tiled bidirectional attention over a packed ragged batch.
//
// One program per (image, head) pair. Each program walks query tiles of
// block_m rows; for every query tile it streams key/value tiles of block_n
// rows and folds them into a running (max, denominator, accumulator) triple,
// dividing once at the end. Programs own disjoint output rows, so they may
// run in any order or concurrently.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <mutex>
#include <span>
#include <thread>
#include <vector>

#include "ragged_attn/core.hpp"
#include "ragged_attn/reference_attention.hpp"

namespace ragged_attn {

/// Work done by the kernel. tile_pairs counts (query tile, key tile)
/// iterations; macs counts scalar multiply-adds in the score and P*V
/// products over valid rows and columns only.
struct OpCounts {
  std::uint64_t tile_pairs = 0;
  std::uint64_t macs = 0;

  OpCounts& operator+=(const OpCounts& o) {
    tile_pairs += o.tile_pairs;
    macs += o.macs;
    return *this;
  }
  friend bool operator==(const OpCounts&, const OpCounts&) = default;
};

struct RaggedOptions {
  std::size_t workers = 1;
  OpCounts* counter = nullptr;  // not to be read inside a timed region
  bool skip_normalize = false;  // fault injection: omit the final o / l
};

/// Program index decomposed into (image, head).
struct ProgramId {
  std::size_t pid = 0;

  std::size_t head(std::size_t heads) const { return pid % heads; }
  std::size_t image(std::size_t heads) const { return pid / heads; }
};

/// Streaming softmax accumulator for `rows` query rows of width `dim`.
struct OnlineSoftmaxState {
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::vector<float> m;  // running row max
  std::vector<float> l;  // running denominator
  std::vector<float> o;  // rows x dim, unnormalized output

  static OnlineSoftmaxState initial(std::size_t rows, std::size_t dim) {
    return {rows, dim,
            std::vector<float>(rows, -std::numeric_limits<float>::infinity()),
            std::vector<float>(rows, 0.0f), std::vector<float>(rows * dim, 0.0f)};
  }

  void reset() {
    std::fill(m.begin(), m.end(), -std::numeric_limits<float>::infinity());
    std::fill(l.begin(), l.end(), 0.0f);
    std::fill(o.begin(), o.end(), 0.0f);
  }

  /// Folds one score tile (rows x cols, row-major) and its value rows in.
  /// `scores` is overwritten with P = exp(S - m'). Columns holding -inf
  /// contribute nothing.
  void update(std::span<float> scores, std::size_t cols,
              StridedRows<const float> v_tile) {
    for (std::size_t r = 0; r < rows; ++r) {
      auto s = scores.subspan(r * cols, cols);
      float m_new = m[r];
      for (float x : s) m_new = std::max(m_new, x);
      const float alpha = std::exp(m[r] - m_new);
      float row_sum = 0.0f;
      for (float& x : s) {
        x = std::exp(x - m_new);
        row_sum += x;
      }
      auto o_r = std::span<float>(o).subspan(r * dim, dim);
      for (float& x : o_r) x *= alpha;
      for (std::size_t c = 0; c < cols; ++c) {
        const float p = s[c];
        if (p == 0.0f) continue;
        auto v_c = v_tile.row(c);
        for (std::size_t e = 0; e < dim; ++e) o_r[e] += p * v_c[e];
      }
      l[r] = alpha * l[r] + row_sum;
      m[r] = m_new;
    }
  }

  /// o / l for row r.
  void finalize_row(std::size_t r, std::span<float> dst) const {
    const float inv = 1.0f / l[r];
    for (std::size_t e = 0; e < dim; ++e) dst[e] = o[r * dim + e] * inv;
  }
};

/// Functional form of OnlineSoftmaxState::update.
inline OnlineSoftmaxState online_softmax_update(OnlineSoftmaxState state,
                                                std::vector<float> scores,
                                                std::size_t cols,
                                                StridedRows<const float> v_tile) {
  if (scores.size() != state.rows * cols) {
    throw InvalidArgument("online_softmax_update: score tile is not rows x cols");
  }
  state.update(scores, cols, v_tile);
  return state;
}

namespace detail {

inline void check_program_inputs(const RaggedQKV& qkv, const TileConfig& tiles,
                                 std::span<float> out) {
  tiles.validate();
  if (out.size() != qkv.q().size()) {
    throw InvalidArgument("ragged attention: output buffer has " +
                          std::to_string(out.size()) + " elements, expected " +
                          std::to_string(qkv.q().size()));
  }
}

// Scratch reused across tiles of one program.
struct ProgramScratch {
  OnlineSoftmaxState state;
  std::vector<float> scores;
};

inline void run_program(std::size_t pid, const RaggedQKV& qkv, const TileConfig& tiles,
                        std::span<float> out, ProgramScratch& scratch,
                        OpCounts& counts, bool skip_normalize) {
  const std::size_t H = qkv.heads();
  const std::size_t d = qkv.head_dim();
  const ProgramId id{pid};
  const std::size_t h = id.head(H);
  const std::size_t i = id.image(H);
  const auto& cu = qkv.cu_seqlens();
  const auto s = static_cast<std::size_t>(cu[i]);
  const auto n = static_cast<std::size_t>(cu[i + 1] - cu[i]);
  if (n == 0) return;

  const std::size_t stride = H * d;
  const std::size_t bm = tiles.block_m, bn = tiles.block_n, bd = tiles.block_d;
  const float scale = 1.0f / std::sqrt(static_cast<float>(d));
  constexpr float kNegInf = -std::numeric_limits<float>::infinity();

  auto rows_of = [&](std::span<const float> t, std::size_t first, std::size_t count) {
    const std::size_t off = (s + first) * stride + h * d;
    return StridedRows<const float>{t.subspan(off, (count - 1) * stride + d), stride, d};
  };

  for (std::size_t m0 = 0; m0 < n; m0 += bm) {
    const std::size_t qrows = std::min(bm, n - m0);
    auto q = rows_of(qkv.q().data(), m0, qrows);
    if (scratch.state.rows != qrows || scratch.state.dim != d) {
      scratch.state = OnlineSoftmaxState::initial(qrows, d);
    } else {
      scratch.state.reset();
    }
    scratch.scores.assign(qrows * bn, kNegInf);

    for (std::size_t j0 = 0; j0 < n; j0 += bn) {
      const std::size_t kcols = std::min(bn, n - j0);
      auto k = rows_of(qkv.k().data(), j0, kcols);
      for (std::size_t r = 0; r < qrows; ++r) {
        auto qr = q.row(r);
        auto srow = std::span<float>(scratch.scores).subspan(r * bn, bn);
        for (std::size_t c = 0; c < kcols; ++c) {
          auto kc = k.row(c);
          float dot = 0.0f;
          for (std::size_t f0 = 0; f0 < d; f0 += bd) {
            const std::size_t f1 = std::min(d, f0 + bd);
            for (std::size_t f = f0; f < f1; ++f) dot += qr[f] * kc[f];
          }
          srow[c] = dot * scale;
        }
        // Tail key columns of a partial tile.
        std::fill(srow.begin() + static_cast<std::ptrdiff_t>(kcols), srow.end(), kNegInf);
      }
      auto v = rows_of(qkv.v().data(), j0, kcols);
      scratch.state.update(scratch.scores, bn, v);
      counts.tile_pairs += 1;
      counts.macs += 2ull * qrows * kcols * d;
    }

    // Query rows past n never exist in the tile, so nothing is stored for them.
    for (std::size_t r = 0; r < qrows; ++r) {
      auto dst = out.subspan((s + m0 + r) * stride + h * d, d);
      if (skip_normalize) {
        std::copy_n(scratch.state.o.begin() + static_cast<std::ptrdiff_t>(r * d), d,
                    dst.begin());
      } else {
        scratch.state.finalize_row(r, dst);
      }
    }
  }
}

}  // namespace detail

/// Runs the program for one (image, head) pair, writing only that pair's
/// rows of `out` (a [T, H, d] buffer).
inline void attention_program(ProgramId pid, const RaggedQKV& qkv, const TileConfig& tiles,
                              std::span<float> out, OpCounts* counter = nullptr) {
  detail::check_program_inputs(qkv, tiles, out);
  if (pid.pid >= qkv.batch() * qkv.heads()) {
    throw InvalidArgument("attention_program: pid " + std::to_string(pid.pid) +
                          " outside [0, " + std::to_string(qkv.batch() * qkv.heads()) +
                          ")");
  }
  detail::ProgramScratch scratch;
  OpCounts local;
  detail::run_program(pid.pid, qkv, tiles, out, scratch, local, false);
  if (counter) *counter += local;
}

/// Launches B * H programs and returns the packed [T, H, d] output.
inline FloatTensor ragged_attention_forward(const RaggedQKV& qkv, const TileConfig& tiles,
                                            const RaggedOptions& opts = {}) {
  if (!qkv.q().all_finite() || !qkv.k().all_finite() || !qkv.v().all_finite()) {
    throw InvalidArgument("ragged_attention_forward: non-finite input");
  }
  FloatTensor out(qkv.q().shape());
  detail::check_program_inputs(qkv, tiles, out.data());

  const std::size_t programs = qkv.batch() * qkv.heads();
  const std::size_t workers = std::max<std::size_t>(1, std::min(opts.workers, programs));
  std::span<float> dst = out.data();

  if (workers <= 1) {
    detail::ProgramScratch scratch;
    OpCounts local;
    for (std::size_t pid = 0; pid < programs; ++pid) {
      detail::run_program(pid, qkv, tiles, dst, scratch, local, opts.skip_normalize);
    }
    if (opts.counter) *opts.counter += local;
    return out;
  }

  std::atomic<std::size_t> next{0};
  std::mutex merge;
  OpCounts total;
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        detail::ProgramScratch scratch;
        OpCounts local;
        for (std::size_t pid = next.fetch_add(1); pid < programs; pid = next.fetch_add(1)) {
          detail::run_program(pid, qkv, tiles, dst, scratch, local, opts.skip_normalize);
        }
        std::lock_guard lock(merge);
        total += local;
      });
    }
  }
  if (opts.counter) *opts.counter += total;
  return out;
}

/// Tile pairs the kernel visits: sum over images of H * ceil(n/B_M) * ceil(n/B_N).
inline std::uint64_t expected_tile_pairs(std::span<const std::int64_t> cu_seqlens,
                                         std::size_t heads, const TileConfig& tiles) {
  std::uint64_t total = 0;
  for (std::size_t i = 0; i + 1 < cu_seqlens.size(); ++i) {
    const auto n = static_cast<std::size_t>(cu_seqlens[i + 1] - cu_seqlens[i]);
    total += heads * ceil_div(n, tiles.block_m) * ceil_div(n, tiles.block_n);
  }
  return total;
}

}  // namespace ragged_attn
