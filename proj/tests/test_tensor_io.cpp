// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <sstream>

#include "ragged_attn/tensor_io.hpp"
#include "test_util.hpp"

namespace ragged_attn {
namespace {

TEST(Rgt1, HeaderLayoutIsBitExact) {
  FloatTensor t({2, 1}, std::vector<float>{1.0f, -2.0f});
  std::ostringstream os;
  write_rgt1(os, t);
  const std::string bytes = os.str();
  ASSERT_EQ(bytes.size(), 4u + 4u + 2 * 8u + 2 * 4u);
  EXPECT_EQ(bytes.substr(0, 4), "RGT1");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 2u);  // rank, little-endian
  EXPECT_EQ(bytes[5], 0);
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 2u);   // dim 0
  EXPECT_EQ(static_cast<unsigned char>(bytes[16]), 1u);  // dim 1
  float first = 0;
  std::memcpy(&first, bytes.data() + 24, 4);
  EXPECT_EQ(first, 1.0f);
}

TEST(Rgt1, RoundTripPreservesShapeAndBits) {
  const FloatTensor t = testing::random_tensor({3, 4, 5}, 9);
  std::stringstream ss;
  write_rgt1(ss, t);
  EXPECT_EQ(read_rgt1(ss), t);
}

TEST(Rgi1, RoundTripAndMagic) {
  Tensor<std::int64_t> t({4}, std::vector<std::int64_t>{0, 3, 3, -7});
  std::stringstream ss;
  write_rgi1(ss, t);
  EXPECT_EQ(ss.str().substr(0, 4), "RGI1");
  EXPECT_EQ(read_rgi1(ss), t);
}

TEST(Rgt1, RejectsWrongMagicAndTruncation) {
  Tensor<std::int64_t> t({1}, std::vector<std::int64_t>{5});
  std::stringstream ss;
  write_rgi1(ss, t);
  EXPECT_THROW(read_rgt1(ss), IoError);

  std::ostringstream os;
  write_rgt1(os, FloatTensor({4}, 1.0f));
  std::istringstream truncated(os.str().substr(0, os.str().size() - 2));
  EXPECT_THROW(read_rgt1(truncated), IoError);
}

TEST(Bundle, RoundTripKeepsNamesOrderAndData) {
  NamedTensors in{{"a", testing::random_tensor({2, 3}, 1)},
                  {"b.bias", FloatTensor({3}, 0.5f)},
                  {"c", testing::random_tensor({1}, 2)}};
  std::stringstream ss;
  write_bundle(ss, in);
  EXPECT_EQ(ss.str().substr(0, 4), "RGT1");
  const auto out = read_bundle(ss);
  ASSERT_EQ(out.size(), in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    EXPECT_EQ(out[i].first, in[i].first);
    EXPECT_EQ(out[i].second, in[i].second);
  }
}

TEST(Bundle, PlainTensorIsNotABundle) {
  std::stringstream ss;
  write_rgt1(ss, FloatTensor({2}, 1.0f));
  EXPECT_THROW(read_bundle(ss), IoError);
}

TEST(Files, MissingFileIsIoError) {
  EXPECT_THROW(load_rgt1("/nonexistent/dir/x.rgt"), IoError);
}

}  // namespace
}  // namespace ragged_attn
