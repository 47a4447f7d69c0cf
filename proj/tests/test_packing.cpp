// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <random>

#include "ragged_attn/packing.hpp"
#include "test_util.hpp"

namespace ragged_attn {
namespace {

KeepMask mask_of(std::size_t B, std::size_t S, std::vector<std::uint8_t> bits) {
  return KeepMask(B, S, std::move(bits));
}

TEST(PackPlan, TwoImageExample) {
  const auto plan = compute_pack_plan(mask_of(2, 4, {1, 0, 1, 1, 1, 1, 0, 0}));
  EXPECT_EQ(plan.cu_seqlens, (std::vector<std::int64_t>{0, 3, 5}));
  EXPECT_EQ(plan.src_indices, (std::vector<std::int64_t>{0, 2, 3, 4, 5}));
  EXPECT_EQ(plan.total_kept(), 5u);
  EXPECT_EQ(plan.length(0), 3u);
  EXPECT_EQ(plan.length(1), 2u);
}

TEST(PackPlan, AllKeptIsIdentity) {
  const auto plan = compute_pack_plan(KeepMask::all_true(3, 5));
  EXPECT_EQ(plan.cu_seqlens, (std::vector<std::int64_t>{0, 5, 10, 15}));
  for (std::size_t r = 0; r < 15; ++r) EXPECT_EQ(plan.src_indices[r], static_cast<std::int64_t>(r));
}

TEST(PackPlan, ClsOnly) {
  const auto plan = compute_pack_plan(mask_of(2, 3, {1, 0, 0, 1, 0, 0}));
  EXPECT_EQ(plan.cu_seqlens, (std::vector<std::int64_t>{0, 1, 2}));
  EXPECT_EQ(plan.src_indices, (std::vector<std::int64_t>{0, 3}));
}

TEST(Pack, CopiesKeptRowsInOrder) {
  DenseBatch dense(2, 3, 2);
  for (std::size_t i = 0; i < dense.tensor().size(); ++i) dense.tensor()[i] = float(i);
  const auto plan = compute_pack_plan(mask_of(2, 3, {1, 0, 1, 1, 1, 0}));
  const auto ragged = pack(dense, plan);
  EXPECT_EQ(ragged.packed().shape(), (Shape{4, 2}));
  EXPECT_EQ(ragged.packed().storage(), (std::vector<float>{0, 1, 4, 5, 6, 7, 8, 9}));
  EXPECT_EQ(ragged.cu_seqlens(), plan.cu_seqlens);
}

TEST(Pack, RejectsMismatchedPlan) {
  DenseBatch dense(2, 3, 2);
  const auto plan = compute_pack_plan(KeepMask::all_true(2, 4));
  EXPECT_THROW(pack(dense, plan), InvalidArgument);
}

TEST(Unpack, FillsDroppedPositions) {
  DenseBatch dense(1, 4, 1);
  for (std::size_t p = 0; p < 4; ++p) dense.tensor()[p] = float(p + 1);
  const auto plan = compute_pack_plan(mask_of(1, 4, {1, 0, 0, 1}));
  const auto back = unpack(pack(dense, plan), plan, 1, 4, -1.0f);
  EXPECT_EQ(back.tensor().storage(), (std::vector<float>{1, -1, -1, 4}));
}

TEST(Unpack, RejectsWrongPlan) {
  DenseBatch dense(1, 4, 1);
  const auto plan = compute_pack_plan(mask_of(1, 4, {1, 0, 0, 1}));
  const auto other = compute_pack_plan(mask_of(1, 4, {1, 1, 0, 1}));
  EXPECT_THROW(unpack(pack(dense, plan), other, 1, 4, 0.0f), InvalidArgument);
  EXPECT_THROW(unpack(pack(dense, plan), plan, 2, 4, 0.0f), InvalidArgument);
}

TEST(PackProperty, RoundTripRestoresKeptRows) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t B = 1 + rng() % 6, S = 1 + rng() % 40, D = 1 + rng() % 8;
    std::vector<std::uint8_t> bits(B * S);
    for (std::size_t i = 0; i < B; ++i)
      for (std::size_t p = 0; p < S; ++p) bits[i * S + p] = p == 0 ? 1 : rng() % 2;
    const KeepMask mask(B, S, bits);
    const DenseBatch dense(testing::random_tensor({B, S, D}, seed));
    const auto plan = compute_pack_plan(mask);
    const auto ragged = pack(dense, plan);
    ASSERT_EQ(ragged.total_tokens(), mask.total_kept());
    const auto back = unpack(ragged, plan, B, S, 0.0f);
    for (std::size_t i = 0; i < B; ++i) {
      // CLS sits at the start of its segment.
      const auto cls = ragged.packed().row(static_cast<std::size_t>(plan.cu_seqlens[i]), D);
      for (std::size_t e = 0; e < D; ++e) ASSERT_EQ(cls[e], dense.token(i, 0)[e]);
      ASSERT_EQ(ragged.length(i), mask.kept_count(i));
      for (std::size_t p = 0; p < S; ++p)
        for (std::size_t e = 0; e < D; ++e)
          ASSERT_EQ(back.token(i, p)[e], mask.kept(i, p) ? dense.token(i, p)[e] : 0.0f);
    }
    // Positions ascend within each segment.
    for (std::size_t i = 0; i < B; ++i)
      for (auto r = plan.cu_seqlens[i] + 1; r < plan.cu_seqlens[i + 1]; ++r)
        ASSERT_LT(plan.src_indices[r - 1], plan.src_indices[r]);
  }
}

}  // namespace
}  // namespace ragged_attn
