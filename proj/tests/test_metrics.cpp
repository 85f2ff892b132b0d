// Copyright 2026 The mocolsk Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <random>

#include "mocolsk/metrics.hpp"
#include "test_util.hpp"

using namespace mocolsk;
namespace m = mocolsk::metrics;
using V = std::vector<double>;

TEST(Metrics, HandValues) {
  EXPECT_NEAR(m::rmse(V{0, 0}, V{3, 4}), std::sqrt(12.5), 1e-15);
  EXPECT_DOUBLE_EQ(m::mae(V{0, 0}, V{3, 4}), 3.5);
  EXPECT_DOUBLE_EQ(m::bias(V{3, 4}, V{0, 0}), 3.5);
  EXPECT_DOUBLE_EQ(m::bias(V{5, 6, 7}, V{3, 4, 5}), 2.0);
  EXPECT_DOUBLE_EQ(m::cc(V{1, 2, 3}, V{3, 2, 1}), -1.0);
  EXPECT_DOUBLE_EQ(m::rsd(V{0, 2, 4}, V{0, 4, 8}), 0.5);
  EXPECT_EQ(m::rmse(V{1, 2}, V{1, 2}), 0.0);
  EXPECT_DOUBLE_EQ(m::cc(V{1, 5, 2}, V{1, 5, 2}), 1.0);
}

TEST(Metrics, Invariances) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd(300, 5);
  V sr(64), hr(64);
  for (int i = 0; i < 64; ++i) {
    sr[i] = nd(rng);
    hr[i] = nd(rng);
  }
  V s2 = sr, h2 = hr, sa = sr;
  for (int i = 0; i < 64; ++i) {
    s2[i] += 7.5;
    h2[i] += 7.5;
    sa[i] = 2.5 * sr[i] - 40;
  }
  EXPECT_NEAR(m::rmse(s2, h2), m::rmse(sr, hr), 1e-9);
  EXPECT_NEAR(m::cc(sa, hr), m::cc(sr, hr), 1e-12);
  EXPECT_NEAR(m::rsd(s2, hr), m::rsd(sr, hr), 1e-9);
  EXPECT_DOUBLE_EQ(m::bias(sr, hr), -m::bias(hr, sr));
}

TEST(Metrics, OrderingOnRandomPairs) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-10, 10);
  for (int trial = 0; trial < 1000; ++trial) {
    V a(16), b(16);
    for (int i = 0; i < 16; ++i) {
      a[i] = u(rng);
      b[i] = u(rng) + (trial % 3) * 2.0;
    }
    const double r = m::rmse(a, b), e = m::mae(a, b), bi = m::bias(a, b);
    EXPECT_GE(r + 1e-12, e);
    EXPECT_GE(e + 1e-12, std::abs(bi));
    const double c = m::cc(a, b);
    EXPECT_GE(c, -1.0);
    EXPECT_LE(c, 1.0);
    EXPECT_GE(m::rsd(a, b), 0.0);
  }
}

TEST(Metrics, DegenerateAndShapeErrors) {
  EXPECT_THROW(m::cc(V{1, 1, 1}, V{1, 2, 3}), DegenerateInput);
  EXPECT_THROW(m::cc(V{1, 2, 3}, V{2, 2, 2}), DegenerateInput);
  EXPECT_THROW(m::rsd(V{1, 2, 3}, V{2, 2, 2}), DegenerateInput);
  EXPECT_NO_THROW(m::rsd(V{2, 2, 2}, V{1, 2, 3}));
  EXPECT_THROW(m::rmse(V{1, 2}, V{1}), ShapeError);
  EXPECT_THROW(m::mae(V{}, V{}), ValidationError);
  const auto s = m::sample_metrics("flat", V{1, 2, 3}, V{5, 5, 5});
  EXPECT_TRUE(s.degenerate);
  EXPECT_TRUE(std::isnan(s.cc));
  EXPECT_NEAR(s.bias, -3.0, 1e-15);
}

TEST(Aggregate, MeanOverSamplesExcludingDegenerate) {
  std::vector<m::SampleMetrics> rows;
  rows.push_back(m::sample_metrics("a", V{0, 2, 4}, V{0, 4, 8}));
  rows.push_back(m::sample_metrics("b", V{1, 2, 3}, V{1, 2, 3}));
  rows.push_back(m::sample_metrics("c", V{1, 2, 3}, V{7, 7, 7}));
  const auto r = m::aggregate(rows, 4);
  EXPECT_EQ(r.degenerate_count, 1);
  EXPECT_EQ(r.scale, 4);
  EXPECT_NEAR(r.aggregate.rmse, (rows[0].rmse + rows[1].rmse + rows[2].rmse) / 3, 1e-14);
  EXPECT_NEAR(r.aggregate.rsd, (0.5 + 0.0) / 2, 1e-14);
  EXPECT_NEAR(r.aggregate.cc, 1.0, 1e-14);

  std::vector<m::SampleMetrics> shuffled = {rows[2], rows[0], rows[1]};
  const auto r2 = m::aggregate(shuffled, 4);
  EXPECT_EQ(r2.aggregate.rmse, r.aggregate.rmse);
  EXPECT_EQ(r2.aggregate.bias, r.aggregate.bias);
}

TEST(Aggregate, CsvLayout) {
  const auto dir = mocolsk::testing::temp_dir("metrics_csv");
  std::vector<m::SampleMetrics> rows = {m::sample_metrics("s0", V{0, 0}, V{3, 4}),
                                        m::sample_metrics("s1", V{1, 1}, V{3, 4})};
  m::write_csv(dir / "m.csv", m::aggregate(rows));
  const auto text = mocolsk::testing::read_file(dir / "m.csv");
  std::istringstream is(text);
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(is, line)) lines.push_back(line);
  ASSERT_EQ(lines.size(), 4u);
  EXPECT_EQ(lines[0], "sample_id,rmse,mae,bias,cc,rsd");
  EXPECT_EQ(lines[1].rfind("s0,3.53553391,3.5,-3.5,nan,nan", 0), 0u);
  EXPECT_EQ(lines[3].rfind("mean,", 0), 0u);
}
