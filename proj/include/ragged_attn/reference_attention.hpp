// SPDX-License-Identifier: Apache-2.0
#pragma once

// Ground-truth attention: a quadratic oracle that materializes the full score
// matrix, and the padded-masked baseline that runs fixed-shape [B, S] batches
// with key masking.

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "ragged_attn/core.hpp"

namespace ragged_attn {

/// Rows of width `width` spaced `stride` floats apart inside a flat buffer.
/// Used to address one head of a [T, H, d] tensor without copying.
template <typename T>
struct StridedRows {
  std::span<T> base;
  std::size_t stride = 0;
  std::size_t width = 0;

  std::span<T> row(std::size_t i) const { return base.subspan(i * stride, width); }
};

namespace detail {

// softmax(q k^T / sqrt(d)) v over n rows, score matrix materialized.
// `key_valid` (optional) masks key columns; masked scores are replaced by the
// most negative finite float before the row max.
inline void dense_attention(StridedRows<const float> q, StridedRows<const float> k,
                            StridedRows<const float> v, std::size_t n,
                            StridedRows<float> out,
                            std::span<const std::uint8_t> key_valid = {}) {
  const std::size_t d = q.width;
  const float scale = 1.0f / std::sqrt(static_cast<float>(d));
  std::vector<float> p(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto qi = q.row(i);
    float row_max = std::numeric_limits<float>::lowest();
    for (std::size_t j = 0; j < n; ++j) {
      auto kj = k.row(j);
      float dot = 0.0f;
      for (std::size_t c = 0; c < d; ++c) dot += qi[c] * kj[c];
      float s = dot * scale;
      if (!key_valid.empty() && !key_valid[j]) s = std::numeric_limits<float>::lowest();
      p[j] = s;
      row_max = std::max(row_max, s);
    }
    float denom = 0.0f;
    for (std::size_t j = 0; j < n; ++j) {
      p[j] = std::exp(p[j] - row_max);
      denom += p[j];
    }
    for (std::size_t j = 0; j < n; ++j) p[j] /= denom;

    auto oi = out.row(i);
    std::fill(oi.begin(), oi.end(), 0.0f);
    for (std::size_t j = 0; j < n; ++j) {
      auto vj = v.row(j);
      const float w = p[j];
      for (std::size_t c = 0; c < d; ++c) oi[c] += w * vj[c];
    }
  }
}

}  // namespace detail

/// Softmax attention for one sequence: q, k, v are [n, d]; returns [n, d].
inline FloatTensor naive_attention(const FloatTensor& q, const FloatTensor& k,
                                   const FloatTensor& v) {
  if (q.rank() != 2) {
    throw InvalidArgument("naive_attention expects [n, d], got " +
                          shape_to_string(q.shape()));
  }
  if (k.shape() != q.shape() || v.shape() != q.shape()) {
    throw InvalidArgument("naive_attention: q, k, v shapes differ");
  }
  const std::size_t n = q.dim(0);
  const std::size_t d = q.dim(1);
  if (n == 0) throw InvalidArgument("naive_attention: n = 0");
  if (d == 0) throw InvalidArgument("naive_attention: d = 0");
  if (!q.all_finite() || !k.all_finite() || !v.all_finite()) {
    throw InvalidArgument("naive_attention: non-finite input");
  }
  FloatTensor out({n, d});
  detail::dense_attention({q.data(), d, d}, {k.data(), d, d}, {v.data(), d, d},
                          n, {out.data(), d, d});
  return out;
}

/// Validity mask for the padded baseline: true marks a real token.
class AttentionMask {
 public:
  AttentionMask(std::size_t batch, std::size_t seq, std::vector<std::uint8_t> valid)
      : batch_(batch), seq_(seq), valid_(std::move(valid)) {
    if (valid_.size() != batch_ * seq_) {
      throw InvalidArgument("AttentionMask storage length mismatch");
    }
    for (std::size_t b = 0; b < batch_; ++b) {
      auto img = image(b);
      if (std::none_of(img.begin(), img.end(), [](std::uint8_t x) { return x != 0; })) {
        throw InvalidArgument("AttentionMask: image " + std::to_string(b) +
                              " has no valid tokens");
      }
    }
  }

  static AttentionMask from_keep_mask(const KeepMask& keep) {
    return AttentionMask(keep.batch(), keep.seq_len(),
                         {keep.values().begin(), keep.values().end()});
  }

  std::size_t batch() const noexcept { return batch_; }
  std::size_t seq_len() const noexcept { return seq_; }
  std::span<const std::uint8_t> image(std::size_t b) const {
    return std::span<const std::uint8_t>(valid_).subspan(b * seq_, seq_);
  }

 private:
  std::size_t batch_;
  std::size_t seq_;
  std::vector<std::uint8_t> valid_;
};

/// Padded baseline over [B, S, H, d] inputs. Invalid keys are masked out of
/// every softmax; invalid query rows come back as exact zeros. The full S x S
/// score tile is computed for every (image, head) regardless of the mask.
inline FloatTensor padded_masked_attention(const FloatTensor& q, const FloatTensor& k,
                                           const FloatTensor& v,
                                           const AttentionMask& mask) {
  if (q.rank() != 4) {
    throw InvalidArgument("padded_masked_attention expects [B, S, H, d], got " +
                          shape_to_string(q.shape()));
  }
  if (k.shape() != q.shape() || v.shape() != q.shape()) {
    throw InvalidArgument("padded_masked_attention: q, k, v shapes differ");
  }
  const std::size_t B = q.dim(0), S = q.dim(1), H = q.dim(2), d = q.dim(3);
  if (mask.batch() != B || mask.seq_len() != S) {
    throw InvalidArgument("padded_masked_attention: mask shape [" +
                          std::to_string(mask.batch()) + ", " +
                          std::to_string(mask.seq_len()) +
                          "] does not match inputs " + shape_to_string(q.shape()));
  }
  FloatTensor out(q.shape());
  const std::size_t row_stride = H * d;
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t image_offset = b * S * row_stride;
    auto valid = mask.image(b);
    for (std::size_t h = 0; h < H; ++h) {
      const std::size_t off = image_offset + h * d;
      const std::size_t len = (S - 1) * row_stride + d;
      detail::dense_attention({q.data().subspan(off, len), row_stride, d},
                              {k.data().subspan(off, len), row_stride, d},
                              {v.data().subspan(off, len), row_stride, d}, S,
                              {out.data().subspan(off, len), row_stride, d}, valid);
    }
    for (std::size_t s = 0; s < S; ++s) {
      if (!valid[s]) {
        auto r = out.row(b * S + s, row_stride);
        std::fill(r.begin(), r.end(), 0.0f);
      }
    }
  }
  return out;
}

}  // namespace ragged_attn
