// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "ragged_attn/reference_attention.hpp"
#include "test_util.hpp"

namespace ragged_attn {
namespace {

using testing::random_tensor;

TEST(NaiveAttention, SingleTokenReturnsItsValue) {
  FloatTensor q({1, 2}, std::vector<float>{0.3f, -4.0f});
  FloatTensor k({1, 2}, std::vector<float>{9.0f, 1.0f});
  FloatTensor v({1, 2}, std::vector<float>{3.0f, -1.0f});
  const auto out = naive_attention(q, k, v);
  EXPECT_EQ(out[0], 3.0f);
  EXPECT_EQ(out[1], -1.0f);
}

TEST(NaiveAttention, IdenticalKeysAverageValues) {
  const std::size_t n = 5, d = 3;
  FloatTensor q = random_tensor({n, d}, 1);
  FloatTensor k({n, d});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) k[r * d + c] = 0.25f * static_cast<float>(c + 1);
  FloatTensor v = random_tensor({n, d}, 2);
  const auto out = naive_attention(q, k, v);
  for (std::size_t c = 0; c < d; ++c) {
    double mean = 0;
    for (std::size_t r = 0; r < n; ++r) mean += v[r * d + c];
    mean /= n;
    for (std::size_t r = 0; r < n; ++r) EXPECT_NEAR(out[r * d + c], mean, 1e-6);
  }
}

TEST(NaiveAttention, MatchesLogSumExpOracle) {
  const std::size_t n = 7, d = 4;
  const auto q = random_tensor({n, d}, 42), k = random_tensor({n, d}, 43),
             v = random_tensor({n, d}, 44);
  const auto out = naive_attention(q, k, v);
  const auto ref = testing::lse_attention(testing::to_double(q), testing::to_double(k),
                                          testing::to_double(v), n, d);
  for (std::size_t i = 0; i < n * d; ++i) EXPECT_NEAR(out[i], ref[i], 1e-6);
}

TEST(NaiveAttention, RejectsEmptyAndNonFinite) {
  EXPECT_THROW(naive_attention(FloatTensor({0, 4}), FloatTensor({0, 4}), FloatTensor({0, 4})),
               InvalidArgument);
  FloatTensor bad({2, 2}, 1.0f);
  bad[3] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(naive_attention(bad, bad, bad), InvalidArgument);
}

TEST(NaiveAttention, PermutationEquivariance) {
  const std::size_t n = 9, d = 8;
  const auto q = random_tensor({n, d}, 5), k = random_tensor({n, d}, 6), v = random_tensor({n, d}, 7);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), std::mt19937(3));
  auto permute = [&](const FloatTensor& t) {
    FloatTensor p({n, d});
    for (std::size_t r = 0; r < n; ++r)
      std::copy_n(t.row(perm[r], d).begin(), d, p.row(r, d).begin());
    return p;
  };
  const auto out = naive_attention(q, k, v);
  const auto out_p = naive_attention(permute(q), permute(k), permute(v));
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c)
      EXPECT_NEAR(out_p[r * d + c], out[perm[r] * d + c], 1e-6);
}

// Softmax rows sum to one: with V = identity columns the output row is the
// softmax row itself.
TEST(NaiveAttention, SoftmaxRowsSumToOne) {
  const std::size_t n = 6;
  const auto q = random_tensor({n, n}, 11, 3.0f), k = random_tensor({n, n}, 12, 3.0f);
  FloatTensor eye({n, n});
  for (std::size_t i = 0; i < n; ++i) eye[i * n + i] = 1.0f;
  const auto p = naive_attention(q, k, eye);
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < n; ++c) s += p[r * n + c];
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

// [B, S, H, d] helpers for the padded tests.
FloatTensor gather_rows(const FloatTensor& x4, std::size_t b, std::size_t h,
                        const std::vector<std::size_t>& rows) {
  const std::size_t S = x4.dim(1), H = x4.dim(2), d = x4.dim(3);
  FloatTensor out({rows.size(), d});
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] = x4[((b * S + rows[r]) * H + h) * d + c];
  return out;
}

TEST(PaddedMaskedAttention, AllValidMatchesNaive) {
  const std::size_t S = 6, d = 4;
  const auto q = random_tensor({1, S, 1, d}, 1), k = random_tensor({1, S, 1, d}, 2),
             v = random_tensor({1, S, 1, d}, 3);
  const auto out = padded_masked_attention(q, k, v, AttentionMask(1, S, std::vector<std::uint8_t>(S, 1)));
  const auto ref = naive_attention(q.reshaped({S, d}), k.reshaped({S, d}), v.reshaped({S, d}));
  EXPECT_LE(testing::max_abs_diff(out.data(), ref.data()), 1e-6);
}

TEST(PaddedMaskedAttention, GatheredPositionsMatchAndPaddingIsZero) {
  const std::size_t S = 4, d = 3;
  const auto q = random_tensor({1, S, 1, d}, 4), k = random_tensor({1, S, 1, d}, 5),
             v = random_tensor({1, S, 1, d}, 6);
  const auto out = padded_masked_attention(q, k, v, AttentionMask(1, S, {1, 0, 1, 0}));
  const std::vector<std::size_t> kept{0, 2};
  const auto ref = naive_attention(gather_rows(q, 0, 0, kept), gather_rows(k, 0, 0, kept),
                                   gather_rows(v, 0, 0, kept));
  for (std::size_t c = 0; c < d; ++c) {
    EXPECT_NEAR(out[0 * d + c], ref[0 * d + c], 1e-6);
    EXPECT_NEAR(out[2 * d + c], ref[1 * d + c], 1e-6);
    EXPECT_EQ(out[1 * d + c], 0.0f);
    EXPECT_EQ(out[3 * d + c], 0.0f);
  }
}

TEST(PaddedMaskedAttention, ImagesAreIndependent) {
  const std::size_t S = 5, H = 2, d = 4;
  auto q = random_tensor({2, S, H, d}, 7), k = random_tensor({2, S, H, d}, 8),
       v = random_tensor({2, S, H, d}, 9);
  const AttentionMask mask(2, S, {1, 1, 0, 1, 0, 1, 0, 1, 1, 1});
  const auto before = padded_masked_attention(q, k, v, mask);
  const std::size_t image1 = S * H * d;
  for (std::size_t i = image1; i < q.size(); ++i) {
    q[i] += 1.5f;
    k[i] -= 0.5f;
    v[i] *= 3.0f;
  }
  const auto after = padded_masked_attention(q, k, v, mask);
  for (std::size_t i = 0; i < image1; ++i) EXPECT_EQ(before[i], after[i]);
}

TEST(PaddedMaskedAttention, RejectsAllInvalidImage) {
  EXPECT_THROW(AttentionMask(2, 3, {1, 0, 0, 0, 0, 0}), InvalidArgument);
}

TEST(PaddedMaskedAttention, RandomMasksMatchGatheredNaive) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t B = 1 + rng() % 3, S = 1 + rng() % 12, H = 1 + rng() % 3, d = 1 + rng() % 9;
    std::vector<std::uint8_t> valid(B * S);
    for (auto& x : valid) x = rng() % 2;
    for (std::size_t b = 0; b < B; ++b) valid[b * S + rng() % S] = 1;
    const auto q = random_tensor({B, S, H, d}, seed * 3), k = random_tensor({B, S, H, d}, seed * 3 + 1),
               v = random_tensor({B, S, H, d}, seed * 3 + 2);
    const auto out = padded_masked_attention(q, k, v, AttentionMask(B, S, valid));
    for (std::size_t b = 0; b < B; ++b) {
      std::vector<std::size_t> rows;
      for (std::size_t s = 0; s < S; ++s)
        if (valid[b * S + s]) rows.push_back(s);
      for (std::size_t h = 0; h < H; ++h) {
        const auto ref = naive_attention(gather_rows(q, b, h, rows), gather_rows(k, b, h, rows),
                                         gather_rows(v, b, h, rows));
        for (std::size_t r = 0; r < rows.size(); ++r)
          for (std::size_t c = 0; c < d; ++c)
            ASSERT_NEAR(out[((b * S + rows[r]) * H + h) * d + c], ref[r * d + c], 1e-6)
                << "seed " << seed;
      }
    }
  }
}

}  // namespace
}  // namespace ragged_attn
