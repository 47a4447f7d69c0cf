// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "ragged_attn/packing.hpp"
#include "ragged_attn/pipeline.hpp"
#include "test_util.hpp"

namespace ragged_attn {
namespace {

using Rows = std::vector<std::vector<double>>;

// Double-precision per-image forward. The pruned image is simply the list of
// its kept tokens; no padding, no packing.
Rows oracle_linear(const Rows& x, const Linear& l) {
  const std::size_t in = l.weight.dim(0), out = l.weight.dim(1);
  Rows y(x.size(), std::vector<double>(out));
  for (std::size_t r = 0; r < x.size(); ++r)
    for (std::size_t j = 0; j < out; ++j) {
      double acc = l.bias[j];
      for (std::size_t i = 0; i < in; ++i) acc += x[r][i] * l.weight[i * out + j];
      y[r][j] = acc;
    }
  return y;
}

Rows oracle_norm(const Rows& x, const Norm& n) {
  Rows y = x;
  for (auto& row : y) {
    double mu = 0, var = 0;
    for (double v : row) mu += v;
    mu /= double(row.size());
    for (double v : row) var += (v - mu) * (v - mu);
    var /= double(row.size());
    for (std::size_t j = 0; j < row.size(); ++j)
      row[j] = (row[j] - mu) / std::sqrt(var + 1e-6) * n.scale[j] + n.shift[j];
  }
  return y;
}

void oracle_block(Rows& x, const BlockWeights& b, const ModelConfig& c) {
  const std::size_t n = x.size(), H = c.heads, d = c.head_dim, D = H * d;
  const Rows qkv = oracle_linear(oracle_norm(x, b.norm1), b.qkv);
  Rows attn(n, std::vector<double>(D, 0.0));
  for (std::size_t h = 0; h < H; ++h)
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> s(n);
      double hi = -1e300, z = 0;
      for (std::size_t j = 0; j < n; ++j) {
        double dot = 0;
        for (std::size_t e = 0; e < d; ++e) dot += qkv[i][h * d + e] * qkv[j][D + h * d + e];
        s[j] = dot / std::sqrt(double(d));
        hi = std::max(hi, s[j]);
      }
      for (auto& v : s) z += (v = std::exp(v - hi));
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t e = 0; e < d; ++e) attn[i][h * d + e] += s[j] / z * qkv[j][2 * D + h * d + e];
    }
  const Rows proj = oracle_linear(attn, b.proj);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < D; ++j) x[r][j] += proj[r][j];
  Rows h = oracle_linear(oracle_norm(x, b.norm2), b.mlp_in);
  for (auto& row : h)
    for (auto& v : row) v = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
  const Rows m = oracle_linear(h, b.mlp_out);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < D; ++j) x[r][j] += m[r][j];
}

// Logits [B, C] for `input` pruned by `mask` after block prune_layer - 1.
std::vector<double> oracle_forward(const ModelConfig& c, const ViTWeights& w,
                                   const DenseBatch& input, const KeepMask& mask) {
  const std::size_t D = c.embed_dim(), S = c.seq_len;
  std::vector<double> logits;
  for (std::size_t i = 0; i < input.batch(); ++i) {
    Rows x(S);
    for (std::size_t p = 0; p < S; ++p) {
      auto t = input.token(i, p);
      x[p].assign(t.begin(), t.end());
    }
    for (std::size_t l = 0; l < c.depth; ++l) {
      if (l == c.prune_layer - 1) {
        Rows kept;
        for (std::size_t p = 0; p < S; ++p)
          if (mask.kept(i, p)) kept.push_back(x[p]);
        x = kept;
      }
      oracle_block(x, w.blocks[l], c);
    }
    const Rows out = oracle_linear(oracle_norm({x[0]}, w.final_norm), w.head);
    logits.insert(logits.end(), out[0].begin(), out[0].end());
    (void)D;
  }
  return logits;
}

double max_diff(const FloatTensor& got, const std::vector<double>& want) {
  double worst = 0;
  for (std::size_t i = 0; i < want.size(); ++i) worst = std::max(worst, std::abs(got[i] - want[i]));
  return worst;
}

ModelConfig tiny() { return make_model_config("tiny", 3, 2, 8, 9, 2, 5); }

DenseBatch input_for(const ModelConfig& c, std::size_t B, std::uint64_t seed) {
  return DenseBatch(testing::random_tensor({B, c.seq_len, c.embed_dim()}, seed));
}

TEST(Weights, InitIsDeterministic) {
  const auto c = tiny();
  const auto a = weights_to_bundle(init_weights(c, 3));
  const auto b = weights_to_bundle(init_weights(c, 3));
  const auto other = weights_to_bundle(init_weights(c, 4));
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].second, b[i].second);
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].first == "blocks.0.qkv.weight") {
      EXPECT_FALSE(a[i].second == other[i].second);
    }
  }
}

TEST(Weights, BundleRoundTrip) {
  const auto c = tiny();
  const auto w = init_weights(c, 1);
  const auto back = weights_from_bundle(c, weights_to_bundle(w));
  const auto x = input_for(c, 2, 1);
  EXPECT_EQ(forward_dense(c, w, x), forward_dense(c, back, x));
}

TEST(Weights, BundleShapeMismatchRejected) {
  const auto w = init_weights(tiny(), 1);
  EXPECT_THROW(weights_from_bundle(make_model_config("t", 3, 2, 8, 9, 2, 6), weights_to_bundle(w)),
               InvalidArgument);
}

TEST(Pipeline, DenseMatchesOracle) {
  const auto c = tiny();
  const auto w = init_weights(c, 5);
  const auto x = input_for(c, 3, 6);
  EXPECT_LE(max_diff(forward_dense(c, w, x), oracle_forward(c, w, x, KeepMask::all_true(3, 9))), 1e-5);
}

TEST(Pipeline, RatioZeroEqualsDense) {
  const auto c = tiny();
  const auto w = init_weights(c, 7);
  const auto x = input_for(c, 4, 8);
  const auto dense = forward_dense(c, w, x);
  const PruneSpec none{PruneMethod::topk_l2, 0.0, 0, 0};
  EXPECT_LE(testing::max_abs_diff(forward_padded(c, w, x, none).logits.data(), dense.data()), 1e-6);
  EXPECT_LE(testing::max_abs_diff(forward_ragged(c, w, x, none).logits.data(), dense.data()), 1e-6);
}

TEST(Pipeline, BothBackendsMatchPrunedOracle) {
  const auto c = tiny();
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto w = init_weights(c, seed);
    const auto x = input_for(c, 4, 100 + seed);
    for (auto method : {PruneMethod::topk_l2, PruneMethod::random}) {
      const PruneSpec spec{method, 0.5, seed, 0};
      const auto padded = forward_padded(c, w, x, spec);
      const auto ragged = forward_ragged(c, w, x, spec, {TileConfig{4, 4, 8}});
      ASSERT_EQ(padded.mask, ragged.mask);
      const auto want = oracle_forward(c, w, x, padded.mask);
      EXPECT_LE(max_diff(padded.logits, want), 1e-5);
      EXPECT_LE(max_diff(ragged.logits, want), 1e-5);
    }
  }
}

TEST(Pipeline, DroppedRowsDoNotLeak) {
  const auto c = tiny();
  const auto w = init_weights(c, 2);
  auto x = input_for(c, 2, 3);
  const KeepMask mask(2, 9, {1, 0, 1, 1, 0, 0, 1, 0, 1, 1, 1, 0, 0, 0, 0, 0, 0, 1});
  const auto before = post_prune_padded(c, w, x, mask);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t p = 0; p < 9; ++p)
      if (!mask.kept(i, p))
        for (float& v : x.token(i, p)) v = 1e3f;
  EXPECT_EQ(post_prune_padded(c, w, x, mask), before);
}

TEST(Pipeline, SingleImageHighRatio) {
  const auto c = make_config("desk");
  const auto w = init_weights(c, 11);
  const auto x = input_for(c, 1, 12);
  const PruneSpec spec{PruneMethod::topk_l2, 0.9, 0, 0};
  const auto padded = forward_padded(c, w, x, spec);
  const auto ragged = forward_ragged(c, w, x, spec);
  EXPECT_EQ(padded.mask.kept_count(0), kept_tokens(33, 0.9));
  EXPECT_LE(testing::max_abs_diff(padded.logits.data(), ragged.logits.data()), 1e-4);
}

TEST(Pipeline, RowwiseOpsCommuteWithPacking) {
  const auto c = tiny();
  const auto w = init_weights(c, 9);
  const auto x = input_for(c, 3, 10);
  const auto mask = random_mask(3, 9, 0.4, 1);
  const auto plan = compute_pack_plan(mask);
  const std::size_t D = c.embed_dim();
  const auto& b = w.blocks[0];
  const FloatTensor dense_rows = x.tensor().reshaped({3 * 9, D});
  const FloatTensor full = mlp_rows(layer_norm_rows(dense_rows, b.norm2), b);
  const FloatTensor packed = mlp_rows(layer_norm_rows(pack(x, plan).packed(), b.norm2), b);
  for (std::size_t r = 0; r < plan.total_kept(); ++r)
    for (std::size_t e = 0; e < D; ++e)
      EXPECT_EQ(packed[r * D + e], full[static_cast<std::size_t>(plan.src_indices[r]) * D + e]);
}

TEST(Pipeline, PruneAfterLastLayerKeepsAll) {
  const auto c = make_model_config("late", 2, 2, 8, 9, 3, 4);
  const auto w = init_weights(c, 1);
  const auto x = input_for(c, 2, 2);
  const auto r = forward_ragged(c, w, x, {PruneMethod::topk_l2, 0.8, 0, 0});
  EXPECT_EQ(r.mask, KeepMask::all_true(2, 9));
  EXPECT_LE(testing::max_abs_diff(r.logits.data(), forward_dense(c, w, x).data()), 1e-5);
}

TEST(Pipeline, RejectsBadInput) {
  const auto c = tiny();
  const auto w = init_weights(c, 1);
  EXPECT_THROW(forward_dense(c, w, DenseBatch(1, 8, 16)), InvalidArgument);
  auto x = input_for(c, 1, 1);
  x.tensor()[3] = NAN;
  EXPECT_THROW(forward_padded(c, w, x, {}), InvalidArgument);
}

TEST(Flops, DenseLayerFormula) {
  const auto c = make_config("deit_base");
  const auto f = layer_flops(c, 197);
  EXPECT_DOUBLE_EQ(f.attn_matmul, 4.0 * 197 * 197 * 768);
  EXPECT_DOUBLE_EQ(f.projections, 8.0 * 197 * 768 * 768);
  EXPECT_DOUBLE_EQ(f.mlp, 4.0 * 197 * 768 * 3072);
}

TEST(Flops, SplitAtPrunePoint) {
  const auto c = make_config("deit_base");
  const auto b = count_flops(c, 197, 41, 5);
  EXPECT_DOUBLE_EQ(b.pre.attn_matmul, 4 * layer_flops(c, 197).attn_matmul);
  EXPECT_DOUBLE_EQ(b.post.attn_matmul, 8 * layer_flops(c, 41).attn_matmul);
  EXPECT_DOUBLE_EQ(b.post.attn_matmul / (8 * layer_flops(c, 197).attn_matmul),
                   (41.0 / 197) * (41.0 / 197));
  EXPECT_DOUBLE_EQ(count_flops(c, 197, 197, 13).total(), 12 * layer_flops(c, 197).total());
  EXPECT_THROW(count_flops(c, 197, 41, 14), InvalidArgument);
}

TEST(Speedup, Cases) {
  EXPECT_DOUBLE_EQ(theoretical_speedup(make_config("deit_base"), 0.0), 1.0);
  const double s = theoretical_speedup(make_config("deit_base"), 0.9);
  EXPECT_GE(s, 2.0);
  EXPECT_LE(s, 3.0);
  EXPECT_LT(theoretical_speedup(make_config("deit_base"), 0.5), s);
  // Pure-quadratic model with pruning at layer 1: speedup is (S / k)^2.
  auto c = make_model_config("q", 4, 1, 4, 11, 1, 2);
  EXPECT_NEAR(theoretical_speedup(c, 0.5, CostModel{0.0, 1.0}), (11.0 / 6) * (11.0 / 6), 1e-12);
  EXPECT_THROW(theoretical_speedup(c, 1.0), InvalidArgument);
}

}  // namespace
}  // namespace ragged_attn
