// SPDX-License-Identifier: Apache-2.0
#pragma once

// Keep-mask generators. Every mask keeps CLS plus the same number of
// non-CLS tokens per image, k(S, ratio) = 1 + ceil((1 - ratio) * (S - 1)),
// unless per-image jitter is requested for the random method.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "ragged_attn/core.hpp"

namespace ragged_attn {

enum class PruneMethod { threshold_l2, topk_l2, random };

inline std::string_view to_string(PruneMethod m) {
  switch (m) {
    case PruneMethod::threshold_l2: return "threshold_l2";
    case PruneMethod::topk_l2: return "topk_l2";
    case PruneMethod::random: return "random";
  }
  return "?";
}

inline PruneMethod parse_prune_method(std::string_view s) {
  if (s == "threshold_l2") return PruneMethod::threshold_l2;
  if (s == "topk_l2") return PruneMethod::topk_l2;
  if (s == "random") return PruneMethod::random;
  throw InvalidArgument("unknown pruning method '" + std::string(s) + "'");
}

struct PruneSpec {
  PruneMethod method = PruneMethod::threshold_l2;
  double ratio = 0.0;   // fraction of non-CLS tokens dropped, in [0, 1)
  std::uint64_t seed = 0;
  double jitter = 0.0;  // random method only: per-image ratio spread

  void validate() const {
    if (!(ratio >= 0.0 && ratio < 1.0)) {
      throw InvalidArgument("prune ratio " + std::to_string(ratio) +
                            " outside [0, 1)");
    }
    if (!(jitter >= 0.0 && jitter < 1.0)) {
      throw InvalidArgument("prune jitter " + std::to_string(jitter) +
                            " outside [0, 1)");
    }
  }

  friend bool operator==(const PruneSpec&, const PruneSpec&) = default;
};

inline void to_json(nlohmann::json& j, const PruneSpec& s) {
  j = {{"method", std::string(to_string(s.method))}, {"ratio", s.ratio}, {"seed", s.seed}};
  if (s.jitter != 0.0) j["jitter"] = s.jitter;
}

inline void from_json(const nlohmann::json& j, PruneSpec& s) {
  if (!j.is_object()) throw InvalidArgument("prune spec must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (key != "method" && key != "ratio" && key != "seed" && key != "jitter") {
      throw InvalidArgument("unknown prune spec key '" + key + "'");
    }
  }
  PruneSpec out;
  if (j.contains("method")) out.method = parse_prune_method(j.at("method").get<std::string>());
  if (j.contains("ratio")) out.ratio = j.at("ratio").get<double>();
  if (j.contains("seed")) out.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("jitter")) out.jitter = j.at("jitter").get<double>();
  out.validate();
  s = out;
}

/// Tokens kept per image: CLS plus ceil((1 - ratio) * (S - 1)) others.
inline std::size_t kept_tokens(std::size_t seq_len, double ratio) {
  if (seq_len == 0) return 0;
  const double keep = (1.0 - ratio) * static_cast<double>(seq_len - 1);
  // Absorb representation error so e.g. (1 - 0.7) * 10 keeps 3, not 4.
  const auto others = static_cast<std::size_t>(std::ceil(keep - 1e-9));
  return 1 + std::min(others, seq_len - 1);
}

/// Per-token Euclidean norm [B, S]; CLS scores +inf so it always ranks first.
inline FloatTensor l2_scores(const DenseBatch& features) {
  const std::size_t B = features.batch(), S = features.seq_len();
  FloatTensor scores({B, S});
  for (std::size_t i = 0; i < B; ++i) {
    for (std::size_t p = 0; p < S; ++p) {
      float sq = 0.0f;
      for (float x : features.token(i, p)) sq += x * x;
      scores[i * S + p] = std::sqrt(sq);
    }
    if (S > 0) scores[i * S] = std::numeric_limits<float>::infinity();
  }
  return scores;
}

/// Keeps CLS and the highest-scoring non-CLS tokens of each image; ties go to
/// the lower position.
inline KeepMask topk_ratio_mask(const FloatTensor& scores, double ratio) {
  if (scores.rank() != 2) {
    throw InvalidArgument("topk_ratio_mask expects [B, S] scores");
  }
  if (!(ratio >= 0.0 && ratio < 1.0)) {
    throw InvalidArgument("topk_ratio_mask: ratio outside [0, 1)");
  }
  const std::size_t B = scores.dim(0), S = scores.dim(1);
  const std::size_t keep_others = kept_tokens(S, ratio) - 1;
  std::vector<std::uint8_t> mask(B * S, 0);
  std::vector<std::size_t> order(S > 0 ? S - 1 : 0);
  for (std::size_t i = 0; i < B; ++i) {
    auto row = scores.row(i, S);
    std::iota(order.begin(), order.end(), std::size_t{1});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return row[a] > row[b]; });
    mask[i * S] = 1;
    for (std::size_t r = 0; r < keep_others; ++r) mask[i * S + order[r]] = 1;
  }
  return KeepMask(B, S, std::move(mask));
}

namespace detail {

inline void keep_random_subset(std::mt19937_64& rng, std::size_t S, std::size_t keep_others,
                               std::span<std::uint8_t> image_mask) {
  std::vector<std::size_t> positions(S - 1);
  std::iota(positions.begin(), positions.end(), std::size_t{1});
  // Partial Fisher-Yates: the first keep_others entries are a uniform subset.
  for (std::size_t r = 0; r < keep_others; ++r) {
    std::uniform_int_distribution<std::size_t> pick(r, positions.size() - 1);
    std::swap(positions[r], positions[pick(rng)]);
  }
  image_mask[0] = 1;
  for (std::size_t r = 0; r < keep_others; ++r) image_mask[positions[r]] = 1;
}

}  // namespace detail

/// Uniformly random non-CLS subset per image, same size as topk_ratio_mask.
inline KeepMask random_mask(std::size_t batch, std::size_t seq, double ratio,
                            std::uint64_t seed, double jitter = 0.0) {
  if (!(ratio >= 0.0 && ratio < 1.0)) {
    throw InvalidArgument("random_mask: ratio outside [0, 1)");
  }
  if (seq == 0) throw InvalidArgument("random_mask: S must be >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> spread(-jitter, jitter);
  std::vector<std::uint8_t> mask(batch * seq, 0);
  for (std::size_t i = 0; i < batch; ++i) {
    double r = ratio;
    if (jitter > 0.0) r = std::clamp(ratio + spread(rng), 0.0, 0.999);
    detail::keep_random_subset(rng, seq, kept_tokens(seq, r) - 1,
                               std::span<std::uint8_t>(mask).subspan(i * seq, seq));
  }
  return KeepMask(batch, seq, std::move(mask));
}

/// Mask for `features` (the activations entering the prune layer).
inline KeepMask generate_mask(const PruneSpec& spec, const DenseBatch& features) {
  spec.validate();
  switch (spec.method) {
    case PruneMethod::threshold_l2:
    case PruneMethod::topk_l2:
      return topk_ratio_mask(l2_scores(features), spec.ratio);
    case PruneMethod::random:
      return random_mask(features.batch(), features.seq_len(), spec.ratio, spec.seed,
                         spec.jitter);
  }
  throw InvalidArgument("unhandled pruning method");
}

}  // namespace ragged_attn
