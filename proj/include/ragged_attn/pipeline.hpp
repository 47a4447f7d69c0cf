// SPDX-License-Identifier: Apache-2.0
#pragma once

// Miniature pre-norm ViT encoder with two interchangeable post-prune
// backends:
//
//   padded : keep [B, S, D], mask dropped keys, re-zero dropped rows
//   ragged : pack kept rows once, run attention + MLP on the packed buffer,
//            read CLS from row cu_seqlens[i]
//
// Blocks before prune_layer run dense and are shared by both backends, so
// both see identical features at the prune point and produce the same mask.
// Inputs are pre-embedded tokens; there is no patch embedding.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ragged_attn/core.hpp"
#include "ragged_attn/packing.hpp"
#include "ragged_attn/pruning.hpp"
#include "ragged_attn/ragged_attention.hpp"
#include "ragged_attn/reference_attention.hpp"
#include "ragged_attn/tensor_io.hpp"

namespace ragged_attn {

struct Linear {
  FloatTensor weight;  // [in, out]
  FloatTensor bias;    // [out]

  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
};

struct Norm {
  FloatTensor scale;  // [D]
  FloatTensor shift;  // [D]
};

struct BlockWeights {
  Norm norm1;
  Linear qkv;   // [D, 3D]; columns are q | k | v, head h at h*d within each
  Linear proj;  // [D, D]
  Norm norm2;
  Linear mlp_in;   // [D, hidden]
  Linear mlp_out;  // [hidden, D]
};

struct ViTWeights {
  std::vector<BlockWeights> blocks;
  Norm final_norm;
  Linear head;  // [D, num_classes]
};

namespace detail {

inline FloatTensor normal_tensor(Shape shape, std::mt19937_64& rng, float stddev) {
  FloatTensor t(std::move(shape));
  std::normal_distribution<float> dist(0.0f, stddev);
  for (float& x : t.data()) x = dist(rng);
  return t;
}

inline Linear init_linear(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  return {normal_tensor({in, out}, rng, 0.02f), FloatTensor({out}, 0.0f)};
}

inline Norm init_norm(std::size_t width) {
  return {FloatTensor({width}, 1.0f), FloatTensor({width}, 0.0f)};
}

}  // namespace detail

/// Random weights: N(0, 0.02) matrices, zero biases, unit norm scales.
inline ViTWeights init_weights(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  const std::size_t D = config.embed_dim();
  ViTWeights w;
  w.blocks.reserve(config.depth);
  for (std::size_t l = 0; l < config.depth; ++l) {
    BlockWeights b;
    b.norm1 = detail::init_norm(D);
    b.qkv = detail::init_linear(D, 3 * D, rng);
    b.proj = detail::init_linear(D, D, rng);
    b.norm2 = detail::init_norm(D);
    b.mlp_in = detail::init_linear(D, config.mlp_hidden, rng);
    b.mlp_out = detail::init_linear(config.mlp_hidden, D, rng);
    w.blocks.push_back(std::move(b));
  }
  w.final_norm = detail::init_norm(D);
  w.head = detail::init_linear(D, config.num_classes, rng);
  return w;
}

inline void validate_weights(const ModelConfig& config, const ViTWeights& w) {
  const std::size_t D = config.embed_dim();
  auto check = [](bool ok, const std::string& what) {
    if (!ok) throw InvalidArgument("weights: " + what);
  };
  auto check_linear = [&](const Linear& l, std::size_t in, std::size_t out,
                          const std::string& name) {
    check(l.weight.shape() == Shape{in, out}, name + ".weight has shape " +
                                                  shape_to_string(l.weight.shape()));
    check(l.bias.shape() == Shape{out}, name + ".bias has shape " +
                                            shape_to_string(l.bias.shape()));
    check(l.weight.all_finite() && l.bias.all_finite(), name + " is not finite");
  };
  auto check_norm = [&](const Norm& n, const std::string& name) {
    check(n.scale.shape() == Shape{D} && n.shift.shape() == Shape{D},
          name + " has wrong width");
    check(n.scale.all_finite() && n.shift.all_finite(), name + " is not finite");
  };
  check(w.blocks.size() == config.depth,
        "expected " + std::to_string(config.depth) + " blocks, got " +
            std::to_string(w.blocks.size()));
  for (std::size_t l = 0; l < w.blocks.size(); ++l) {
    const auto& b = w.blocks[l];
    const std::string p = "blocks." + std::to_string(l);
    check_norm(b.norm1, p + ".norm1");
    check_linear(b.qkv, D, 3 * D, p + ".qkv");
    check_linear(b.proj, D, D, p + ".proj");
    check_norm(b.norm2, p + ".norm2");
    check_linear(b.mlp_in, D, config.mlp_hidden, p + ".mlp_in");
    check_linear(b.mlp_out, config.mlp_hidden, D, p + ".mlp_out");
  }
  check_norm(w.final_norm, "final_norm");
  check_linear(w.head, D, config.num_classes, "head");
}

inline NamedTensors weights_to_bundle(const ViTWeights& w) {
  NamedTensors out;
  auto add_linear = [&](const std::string& p, const Linear& l) {
    out.emplace_back(p + ".weight", l.weight);
    out.emplace_back(p + ".bias", l.bias);
  };
  auto add_norm = [&](const std::string& p, const Norm& n) {
    out.emplace_back(p + ".scale", n.scale);
    out.emplace_back(p + ".shift", n.shift);
  };
  for (std::size_t l = 0; l < w.blocks.size(); ++l) {
    const std::string p = "blocks." + std::to_string(l);
    const auto& b = w.blocks[l];
    add_norm(p + ".norm1", b.norm1);
    add_linear(p + ".qkv", b.qkv);
    add_linear(p + ".proj", b.proj);
    add_norm(p + ".norm2", b.norm2);
    add_linear(p + ".mlp_in", b.mlp_in);
    add_linear(p + ".mlp_out", b.mlp_out);
  }
  add_norm("final_norm", w.final_norm);
  add_linear("head", w.head);
  return out;
}

inline ViTWeights weights_from_bundle(const ModelConfig& config, const NamedTensors& bundle) {
  std::size_t cursor = 0;
  auto take = [&](const std::string& name) -> FloatTensor {
    if (cursor >= bundle.size() || bundle[cursor].first != name) {
      throw IoError("weight bundle: expected tensor '" + name + "' at position " +
                    std::to_string(cursor));
    }
    return bundle[cursor++].second;
  };
  auto take_linear = [&](const std::string& p) {
    Linear l;
    l.weight = take(p + ".weight");
    l.bias = take(p + ".bias");
    return l;
  };
  auto take_norm = [&](const std::string& p) {
    Norm n;
    n.scale = take(p + ".scale");
    n.shift = take(p + ".shift");
    return n;
  };
  ViTWeights w;
  for (std::size_t l = 0; l < config.depth; ++l) {
    const std::string p = "blocks." + std::to_string(l);
    BlockWeights b;
    b.norm1 = take_norm(p + ".norm1");
    b.qkv = take_linear(p + ".qkv");
    b.proj = take_linear(p + ".proj");
    b.norm2 = take_norm(p + ".norm2");
    b.mlp_in = take_linear(p + ".mlp_in");
    b.mlp_out = take_linear(p + ".mlp_out");
    w.blocks.push_back(std::move(b));
  }
  w.final_norm = take_norm("final_norm");
  w.head = take_linear("head");
  if (cursor != bundle.size()) {
    throw IoError("weight bundle has " + std::to_string(bundle.size() - cursor) +
                  " unexpected trailing tensors");
  }
  validate_weights(config, w);
  return w;
}

// ---------------------------------------------------------------------------
// Row-wise building blocks over a [rows, width] matrix.

inline constexpr float kLayerNormEps = 1e-6f;

inline FloatTensor layer_norm_rows(const FloatTensor& x, const Norm& norm) {
  const std::size_t D = x.dim(1), rows = x.dim(0);
  FloatTensor y(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    auto in = x.row(r, D);
    auto out = y.row(r, D);
    float mean = 0.0f;
    for (float v : in) mean += v;
    mean /= static_cast<float>(D);
    float var = 0.0f;
    for (float v : in) var += (v - mean) * (v - mean);
    var /= static_cast<float>(D);
    const float inv = 1.0f / std::sqrt(var + kLayerNormEps);
    for (std::size_t c = 0; c < D; ++c) {
      out[c] = (in[c] - mean) * inv * norm.scale[c] + norm.shift[c];
    }
  }
  return y;
}

inline FloatTensor linear_rows(const FloatTensor& x, const Linear& l) {
  const std::size_t rows = x.dim(0), in = l.in_features(), out = l.out_features();
  if (x.dim(1) != in) {
    throw InvalidArgument("linear: input width " + std::to_string(x.dim(1)) +
                          " != " + std::to_string(in));
  }
  FloatTensor y({rows, out});
  const float* w = l.weight.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    auto xr = x.row(r, in);
    float* yr = y.row(r, out).data();
    std::copy(l.bias.data().begin(), l.bias.data().end(), yr);
    for (std::size_t k = 0; k < in; ++k) {
      const float a = xr[k];
      const float* wk = w + k * out;
      for (std::size_t c = 0; c < out; ++c) yr[c] += a * wk[c];
    }
  }
  return y;
}

inline float gelu(float x) {
  return 0.5f * x * (1.0f + std::erf(x * 0.70710678118654752f));
}

inline FloatTensor mlp_rows(const FloatTensor& x, const BlockWeights& b) {
  FloatTensor h = linear_rows(x, b.mlp_in);
  for (float& v : h.data()) v = gelu(v);
  return linear_rows(h, b.mlp_out);
}

inline void add_inplace(FloatTensor& x, const FloatTensor& delta) {
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += delta[i];
}

// ---------------------------------------------------------------------------

struct PipelineOptions {
  TileConfig tiles{};
  std::size_t workers = 1;
  bool skip_normalize = false;  // fault injection forwarded to the ragged kernel
  OpCounts* counter = nullptr;
};

struct ForwardResult {
  FloatTensor logits;  // [B, num_classes]
  KeepMask mask;
};

namespace detail {

// Splits qkv rows [T, 3D] into three [T, H, d] tensors.
inline void split_qkv(const FloatTensor& qkv, std::size_t H, std::size_t d,
                      FloatTensor& q, FloatTensor& k, FloatTensor& v) {
  const std::size_t T = qkv.dim(0), D = H * d;
  q = FloatTensor({T, H, d});
  k = FloatTensor({T, H, d});
  v = FloatTensor({T, H, d});
  for (std::size_t t = 0; t < T; ++t) {
    auto src = qkv.row(t, 3 * D);
    std::copy_n(src.begin(), D, q.row(t, D).begin());
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(D), D, k.row(t, D).begin());
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(2 * D), D, v.row(t, D).begin());
  }
}

// One pre-norm block over x [rows, D]; `attend` maps (q, k, v) in [T, H, d]
// to the attention output in the same layout.
template <typename Attend>
void block_forward(FloatTensor& x, const BlockWeights& b, const ModelConfig& config,
                   Attend&& attend) {
  const std::size_t D = config.embed_dim();
  FloatTensor qkv = linear_rows(layer_norm_rows(x, b.norm1), b.qkv);
  FloatTensor q, k, v;
  split_qkv(qkv, config.heads, config.head_dim, q, k, v);
  FloatTensor attn = attend(std::move(q), std::move(k), std::move(v));
  add_inplace(x, linear_rows(std::move(attn).reshaped({x.dim(0), D}), b.proj));
  add_inplace(x, mlp_rows(layer_norm_rows(x, b.norm2), b));
}

inline void zero_dropped_rows(FloatTensor& x, const KeepMask& mask, std::size_t D) {
  const std::size_t S = mask.seq_len();
  for (std::size_t i = 0; i < mask.batch(); ++i) {
    for (std::size_t p = 0; p < S; ++p) {
      if (!mask.kept(i, p)) {
        auto r = x.row(i * S + p, D);
        std::fill(r.begin(), r.end(), 0.0f);
      }
    }
  }
}

inline void check_input(const ModelConfig& config, const DenseBatch& input) {
  config.validate();
  if (input.seq_len() != config.seq_len || input.width() != config.embed_dim()) {
    throw InvalidArgument("input shape " + shape_to_string(input.tensor().shape()) +
                          " does not match model [B, " + std::to_string(config.seq_len) +
                          ", " + std::to_string(config.embed_dim()) + "]");
  }
  if (!input.tensor().all_finite()) throw InvalidArgument("input has non-finite values");
}

}  // namespace detail

/// Runs blocks [first, last) (0-based) densely over every token of `x`.
inline DenseBatch run_dense_blocks(const ModelConfig& config, const ViTWeights& w,
                                   DenseBatch x, std::size_t first, std::size_t last) {
  const std::size_t B = x.batch(), S = x.seq_len(), D = config.embed_dim();
  const AttentionMask all_valid(B, S, std::vector<std::uint8_t>(B * S, 1));
  FloatTensor rows = std::move(x.tensor()).reshaped({B * S, D});
  for (std::size_t l = first; l < last; ++l) {
    detail::block_forward(rows, w.blocks[l], config,
                          [&](FloatTensor q, FloatTensor k, FloatTensor v) {
                            const Shape s4{B, S, config.heads, config.head_dim};
                            return padded_masked_attention(
                                std::move(q).reshaped(s4), std::move(k).reshaped(s4),
                                std::move(v).reshaped(s4), all_valid);
                          });
  }
  return DenseBatch(std::move(rows).reshaped({B, S, D}));
}

/// Final norm + classifier over a [B, D] matrix of CLS rows.
inline FloatTensor classify(const ViTWeights& w, const FloatTensor& cls_rows) {
  return linear_rows(layer_norm_rows(cls_rows, w.final_norm), w.head);
}

/// Post-prune blocks on the padded layout. Dropped rows are zeroed on entry
/// and after every block; attention never reads them.
inline FloatTensor post_prune_padded(const ModelConfig& config, const ViTWeights& w,
                                     DenseBatch x, const KeepMask& mask) {
  const std::size_t B = x.batch(), S = x.seq_len(), D = config.embed_dim();
  const auto attn_mask = AttentionMask::from_keep_mask(mask);
  FloatTensor rows = std::move(x.tensor()).reshaped({B * S, D});
  detail::zero_dropped_rows(rows, mask, D);
  for (std::size_t l = config.prune_layer - 1; l < config.depth; ++l) {
    detail::block_forward(rows, w.blocks[l], config,
                          [&](FloatTensor q, FloatTensor k, FloatTensor v) {
                            const Shape s4{B, S, config.heads, config.head_dim};
                            return padded_masked_attention(
                                std::move(q).reshaped(s4), std::move(k).reshaped(s4),
                                std::move(v).reshaped(s4), attn_mask);
                          });
    detail::zero_dropped_rows(rows, mask, D);
  }
  FloatTensor cls({B, D});
  for (std::size_t i = 0; i < B; ++i) {
    auto src = rows.row(i * S, D);
    std::copy(src.begin(), src.end(), cls.row(i, D).begin());
  }
  return classify(w, cls);
}

/// Post-prune blocks on the packed buffer.
inline FloatTensor post_prune_ragged(const ModelConfig& config, const ViTWeights& w,
                                     RaggedBatch packed, const PipelineOptions& opts = {}) {
  const std::size_t D = config.embed_dim();
  const auto cu = packed.cu_seqlens();
  FloatTensor& rows = packed.packed();
  RaggedOptions ropts;
  ropts.workers = opts.workers;
  ropts.skip_normalize = opts.skip_normalize;
  ropts.counter = opts.counter;
  for (std::size_t l = config.prune_layer - 1; l < config.depth; ++l) {
    detail::block_forward(rows, w.blocks[l], config,
                          [&](FloatTensor q, FloatTensor k, FloatTensor v) {
                            return ragged_attention_forward(
                                RaggedQKV(std::move(q), std::move(k), std::move(v), cu),
                                opts.tiles, ropts);
                          });
  }
  const std::size_t B = cu.size() - 1;
  FloatTensor cls({B, D});
  for (std::size_t i = 0; i < B; ++i) {
    auto src = rows.row(static_cast<std::size_t>(cu[i]), D);
    std::copy(src.begin(), src.end(), cls.row(i, D).begin());
  }
  return classify(w, cls);
}

namespace detail {

struct PrunePoint {
  DenseBatch features;
  KeepMask mask;
};

inline PrunePoint run_to_prune_point(const ModelConfig& config, const ViTWeights& w,
                                     const DenseBatch& input, const PruneSpec& spec) {
  check_input(config, input);
  spec.validate();
  DenseBatch x = run_dense_blocks(config, w, input, 0, config.prune_layer - 1);
  if (config.prune_layer > config.depth) {
    return {std::move(x), KeepMask::all_true(input.batch(), input.seq_len())};
  }
  KeepMask mask = generate_mask(spec, x);
  return {std::move(x), std::move(mask)};
}

}  // namespace detail

/// Every image through the model on the padded layout.
inline ForwardResult forward_padded(const ModelConfig& config, const ViTWeights& w,
                                    const DenseBatch& input, const PruneSpec& spec) {
  auto pp = detail::run_to_prune_point(config, w, input, spec);
  FloatTensor logits = post_prune_padded(config, w, std::move(pp.features), pp.mask);
  return {std::move(logits), std::move(pp.mask)};
}

/// Pack, attend on the ragged buffer, and classify from packed CLS rows.
inline ForwardResult forward_ragged(const ModelConfig& config, const ViTWeights& w,
                                    const DenseBatch& input, const PruneSpec& spec,
                                    const PipelineOptions& opts = {}) {
  auto pp = detail::run_to_prune_point(config, w, input, spec);
  const PackPlan plan = compute_pack_plan(pp.mask);
  FloatTensor logits = post_prune_ragged(config, w, pack(pp.features, plan), opts);
  return {std::move(logits), std::move(pp.mask)};
}

/// Unpruned dense forward: every block on every token.
inline FloatTensor forward_dense(const ModelConfig& config, const ViTWeights& w,
                                 const DenseBatch& input) {
  detail::check_input(config, input);
  DenseBatch x = run_dense_blocks(config, w, input, 0, config.depth);
  const std::size_t B = x.batch(), D = config.embed_dim();
  FloatTensor cls({B, D});
  for (std::size_t i = 0; i < B; ++i) {
    auto src = x.token(i, 0);
    std::copy(src.begin(), src.end(), cls.row(i, D).begin());
  }
  return classify(w, cls);
}

// ---------------------------------------------------------------------------
// FLOP accounting. One multiply-add counts as two flops.

struct ComponentFlops {
  double attn_matmul = 0;  // Q K^T and P V
  double projections = 0;  // qkv + output projection
  double mlp = 0;

  double total() const { return attn_matmul + projections + mlp; }
};

struct FlopBreakdown {
  ComponentFlops pre;   // blocks before the prune point
  ComponentFlops post;  // blocks from the prune point on

  double total() const { return pre.total() + post.total(); }
};

inline ComponentFlops layer_flops(const ModelConfig& config, double n) {
  const double D = static_cast<double>(config.embed_dim());
  const double hidden = static_cast<double>(config.mlp_hidden);
  ComponentFlops f;
  f.attn_matmul = 4.0 * n * n * D;
  f.projections = 8.0 * n * D * D;
  f.mlp = 4.0 * n * D * hidden;
  return f;
}

/// Per-image flops, split at the prune point.
inline FlopBreakdown count_flops(const ModelConfig& config, std::size_t tokens_per_image,
                                 std::size_t pruned_tokens, std::size_t prune_layer) {
  if (tokens_per_image < 1 || pruned_tokens < 1) {
    throw InvalidArgument("count_flops: token counts must be >= 1");
  }
  if (prune_layer < 1 || prune_layer > config.depth + 1) {
    throw InvalidArgument("count_flops: prune_layer outside [1, depth + 1]");
  }
  const double pre_layers = static_cast<double>(prune_layer - 1);
  const double post_layers = static_cast<double>(config.depth - (prune_layer - 1));
  const auto pre = layer_flops(config, static_cast<double>(tokens_per_image));
  const auto post = layer_flops(config, static_cast<double>(pruned_tokens));
  FlopBreakdown b;
  b.pre = {pre.attn_matmul * pre_layers, pre.projections * pre_layers, pre.mlp * pre_layers};
  b.post = {post.attn_matmul * post_layers, post.projections * post_layers,
            post.mlp * post_layers};
  return b;
}

/// Per-layer cost model: linear_coeff * n + quad_coeff * n^2.
struct CostModel {
  double linear_coeff = 0;  // qkv + output projection + MLP flops per token
  double quad_coeff = 0;    // Q K^T + P V flops per token pair

  static CostModel from_config(const ModelConfig& config) {
    const double D = static_cast<double>(config.embed_dim());
    const double hidden = static_cast<double>(config.mlp_hidden);
    return {8.0 * D * D + 4.0 * D * hidden, 4.0 * D};
  }

  double layer_cost(double n) const { return linear_coeff * n + quad_coeff * n * n; }
};

inline double theoretical_speedup(const ModelConfig& config, double ratio,
                                  const CostModel& cost) {
  if (!(ratio >= 0.0 && ratio < 1.0)) {
    throw InvalidArgument("theoretical_speedup: ratio outside [0, 1)");
  }
  const double S = static_cast<double>(config.seq_len);
  const double k = static_cast<double>(kept_tokens(config.seq_len, ratio));
  const double pre = static_cast<double>(config.prune_layer - 1);
  const double post = static_cast<double>(config.depth) - pre;
  const double full = static_cast<double>(config.depth) * cost.layer_cost(S);
  const double pruned = pre * cost.layer_cost(S) + post * cost.layer_cost(k);
  return full / pruned;
}

inline double theoretical_speedup(const ModelConfig& config, double ratio) {
  return theoretical_speedup(config, ratio, CostModel::from_config(config));
}

}  // namespace ragged_attn
