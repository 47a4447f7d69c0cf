// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "ragged_attn/core.hpp"

namespace ragged_attn {

/// Gather plan from a keep mask: cu_seqlens plus, for every packed row, its
/// flat source index image * S + position. Built once at the prune point and
/// reused by every later layer.
struct PackPlan {
  std::size_t batch = 0;
  std::size_t seq_len = 0;
  std::vector<std::int64_t> cu_seqlens;
  std::vector<std::int64_t> src_indices;

  std::size_t total_kept() const noexcept { return src_indices.size(); }
  std::size_t length(std::size_t image) const {
    return static_cast<std::size_t>(cu_seqlens[image + 1] - cu_seqlens[image]);
  }

  friend bool operator==(const PackPlan&, const PackPlan&) = default;
};

inline PackPlan compute_pack_plan(const KeepMask& mask) {
  PackPlan plan;
  plan.batch = mask.batch();
  plan.seq_len = mask.seq_len();
  plan.cu_seqlens.reserve(mask.batch() + 1);
  plan.cu_seqlens.push_back(0);
  plan.src_indices.reserve(mask.total_kept());
  for (std::size_t i = 0; i < mask.batch(); ++i) {
    for (std::size_t p = 0; p < mask.seq_len(); ++p) {
      if (mask.kept(i, p)) {
        plan.src_indices.push_back(static_cast<std::int64_t>(i * mask.seq_len() + p));
      }
    }
    if (static_cast<std::int64_t>(plan.src_indices.size()) == plan.cu_seqlens.back()) {
      throw InvalidArgument("compute_pack_plan: image " + std::to_string(i) +
                            " keeps no tokens");
    }
    plan.cu_seqlens.push_back(static_cast<std::int64_t>(plan.src_indices.size()));
  }
  return plan;
}

/// Copies kept rows of `dense` into a contiguous buffer.
inline RaggedBatch pack(const DenseBatch& dense, const PackPlan& plan) {
  if (dense.batch() != plan.batch || dense.seq_len() != plan.seq_len) {
    throw InvalidArgument("pack: plan is for [" + std::to_string(plan.batch) + ", " +
                          std::to_string(plan.seq_len) + "] but dense batch is " +
                          shape_to_string(dense.tensor().shape()));
  }
  const std::size_t D = dense.width();
  FloatTensor packed({plan.total_kept(), D});
  for (std::size_t r = 0; r < plan.total_kept(); ++r) {
    auto src = dense.tensor().row(static_cast<std::size_t>(plan.src_indices[r]), D);
    std::copy(src.begin(), src.end(), packed.row(r, D).begin());
  }
  return RaggedBatch(std::move(packed), plan.cu_seqlens);
}

/// Scatters packed rows back to [B, S, D]; dropped positions get `fill`.
inline DenseBatch unpack(const RaggedBatch& ragged, const PackPlan& plan, std::size_t batch,
                         std::size_t seq, float fill) {
  if (ragged.total_tokens() != plan.total_kept()) {
    throw InvalidArgument("unpack: ragged batch has " +
                          std::to_string(ragged.total_tokens()) +
                          " rows but plan keeps " + std::to_string(plan.total_kept()));
  }
  if (batch != plan.batch || seq != plan.seq_len || ragged.cu_seqlens() != plan.cu_seqlens) {
    throw InvalidArgument("unpack: plan does not describe this ragged batch");
  }
  const std::size_t D = ragged.width();
  DenseBatch dense(batch, seq, D, fill);
  for (std::size_t r = 0; r < plan.total_kept(); ++r) {
    auto src = ragged.packed().row(r, D);
    auto dst = dense.tensor().row(static_cast<std::size_t>(plan.src_indices[r]), D);
    std::copy(src.begin(), src.end(), dst.begin());
  }
  return dense;
}

}  // namespace ragged_attn
