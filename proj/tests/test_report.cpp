// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "ragged_attn/report.hpp"

namespace ragged_attn {
namespace {

TimingRecord sample(const std::string& backend, std::size_t bs, double ratio, double mean) {
  TimingRecord r;
  r.backend = backend;
  r.batch_size = bs;
  r.prune_ratio = ratio;
  r.tokens_per_image = 99;
  r.total_tokens = 99 * bs;
  r.mean_ms = mean;
  r.p50_ms = mean * 0.99;
  r.min_ms = mean * 0.9;
  r.stddev_ms = mean * 0.05;
  return r;
}

std::size_t count(const std::string& s, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = s.find(needle); p != std::string::npos; p = s.find(needle, p + 1)) ++n;
  return n;
}

TEST(Csv, HeaderOnceThenRows) {
  const auto csv = emit_csv({sample("ragged", 4, 0.5, 1.0), sample("ragged", 8, 0.5, 2.0)});
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "backend,batch_size,prune_ratio,tokens_per_image,total_tokens,mean_ms,p50_ms,"
            "min_ms,stddev_ms,images_per_s,op_counter,overhead_pct,include_pack");
  EXPECT_EQ(count(csv, "backend"), 1u);
  EXPECT_EQ(count(csv, "\n"), 3u);
}

TEST(Csv, MissingValuesAreEmptyCells) {
  const auto csv = emit_csv({sample("padded_masked", 4, 0.0, 1.0)});
  const auto row = csv.substr(csv.find('\n') + 1);
  EXPECT_EQ(row, "padded_masked,4,0,99,396,1,0.99,0.9,0.05,,,,0\n");
  auto skipped = sample("ragged", 64, 0.8, 0.0);
  skipped.skipped = true;
  const auto s = emit_csv({skipped});
  EXPECT_EQ(s.substr(s.find('\n') + 1), "ragged,64,0.8,,,,,,,,,,0\n");
}

TEST(Csv, RoundTripToSixSignificantDigits) {
  auto r = sample("ragged", 32, 0.8, 0.0412345678);
  r.op_counter = 384;
  r.images_per_s = 123456.789;
  r.overhead_pct = 97.5609756;
  r.include_pack = true;
  auto skipped = sample("padded_masked", 64, 0.0, 0);
  skipped.skipped = true;
  const auto back = parse_csv(emit_csv({r, skipped}));
  ASSERT_EQ(back.size(), 2u);
  const auto& b = back[0];
  EXPECT_EQ(b.backend, "ragged");
  EXPECT_EQ(b.batch_size, 32u);
  EXPECT_EQ(b.total_tokens, r.total_tokens);
  EXPECT_EQ(*b.op_counter, 384u);
  EXPECT_TRUE(b.include_pack);
  for (auto [got, want] : {std::pair{b.mean_ms, r.mean_ms}, std::pair{b.p50_ms, r.p50_ms},
                           std::pair{*b.images_per_s, *r.images_per_s},
                           std::pair{*b.overhead_pct, *r.overhead_pct}}) {
    EXPECT_LE(std::abs(got - want) / want, 5e-6);
  }
  EXPECT_TRUE(back[1].skipped);
  EXPECT_FALSE(back[1].op_counter.has_value());
}

TEST(Csv, ParsesSubsetInAnyOrderWithComments) {
  const auto rs = parse_csv("# transcribed\nmean_ms,backend\n0.041,triton\n\n0.063,fa2\n");
  ASSERT_EQ(rs.size(), 2u);
  EXPECT_EQ(rs[1].backend, "fa2");
  EXPECT_DOUBLE_EQ(rs[0].mean_ms, 0.041);
}

void expect_csv_error(const std::string& text, std::size_t line, std::size_t column) {
  try {
    parse_csv(text);
    ADD_FAILURE() << "no error for: " << text;
  } catch (const CsvError& e) {
    EXPECT_EQ(e.line(), line) << e.what();
    EXPECT_EQ(e.column(), column) << e.what();
  }
}

TEST(Csv, MalformedInputReportsLineAndColumn) {
  expect_csv_error("backend,mean_ms,bogus\n", 1, 3);
  expect_csv_error("backend,batch_size\nragged,4\n", 1, 1);
  expect_csv_error("backend,mean_ms\nragged,abc\n", 2, 2);
  expect_csv_error("backend,mean_ms\nragged,1.0\nragged\n", 3, 2);
  expect_csv_error("backend,mean_ms,batch_size\nragged,1.0,-4\n", 2, 3);
  expect_csv_error("backend,mean_ms,mean_ms\n", 1, 3);
  expect_csv_error("", 1, 1);
}

TEST(Svg, SelfContainedWithSeriesAndLegend) {
  const auto svg = emit_svg({sample("ragged", 4, 0.5, 1.0), sample("ragged", 8, 0.5, 2.0),
                             sample("padded_masked", 4, 0.5, 3.0), sample("a<b", 4, 0.0, 1.0)},
                            "t & t");
  EXPECT_EQ(svg.rfind("<svg xmlns=\"http://www.w3.org/2000/svg\"", 0), 0u);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
  EXPECT_EQ(count(svg, "<polyline"), 3u);
  EXPECT_NE(svg.find("ragged @ 50%"), std::string::npos);
  EXPECT_NE(svg.find("a&lt;b"), std::string::npos);
  EXPECT_NE(svg.find("t &amp; t"), std::string::npos);
  EXPECT_EQ(svg.find("href"), std::string::npos);
  EXPECT_EQ(svg.find("<script"), std::string::npos);
}

TEST(Summary, OneLinePerRecord) {
  auto skipped = sample("ragged", 64, 0.8, 0);
  skipped.skipped = true;
  const auto s = format_summary({sample("ragged", 4, 0.5, 1.0), skipped});
  EXPECT_EQ(count(s, "\n"), 3u);
  EXPECT_NE(s.find("(skipped)"), std::string::npos);
}

}  // namespace
}  // namespace ragged_attn
