// Copyright 2026 The mocolsk Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "mocolsk/blocks.hpp"
#include "test_util.hpp"

using namespace mocolsk;
using mocolsk::testing::max_abs_diff;
using mocolsk::testing::random_tensor;

namespace {
template <typename T>
void zero_all(ParamStore<T>& store) {
  for (auto entry : store.entries()) {
    auto& data = entry.second.mutable_value().data;
    std::fill(data.begin(), data.end(), T(0));
  }
}
}  // namespace

TEST(Stem, ShapesAndZeroWeights) {
  ParamStore<float> store(1);
  Scope<float> root{&store, ""};
  auto lst = make_conv_stem(root.sub("lst"), 1, 32);
  EXPECT_EQ(lst(Var<float>(Tensor<float>({2, 1, 64, 64}, 1.0f))).shape(), (Shape{2, 32, 64, 64}));
  auto guid = make_conv_stem(root.sub("guid"), 10, 32);
  EXPECT_EQ(guid(Var<float>(Tensor<float>({1, 10, 512, 512}, 1.0f))).shape(), (Shape{1, 32, 512, 512}));

  ParamStore<double> ds(2);
  auto stem = make_conv_stem(Scope<double>{&ds, ""}, 3, 4);
  std::fill(stem.weight.mutable_value().data.begin(), stem.weight.mutable_value().data.end(), 0.0);
  const auto y = stem(Var<double>(random_tensor({1, 3, 5, 5}, 3))).value();
  for (int c = 0; c < 4; ++c)
    for (int i = 0; i < 25; ++i) EXPECT_EQ(y.data[c * 25 + i], stem.bias.value().data[c]);
}

TEST(ResidualGroup, ZeroWeightsGiveIdentity) {
  // conv1/conv2/tail all zero: each block adds ca(0) = 0 * 0.5 = 0 and the
  // tail adds 0, so the group is the identity.
  ParamStore<double> store(5);
  BlockConfig cfg;
  cfg.channels = 8;
  cfg.blocks_per_group = 3;
  ResidualGroup<double> g(Scope<double>{&store, "g"}, cfg);
  zero_all(store);
  const auto x = random_tensor({2, 8, 6, 7}, 4);
  EXPECT_EQ(g(Var<double>(x)).value().data, x.data);
}

TEST(ResidualGroup, ShapePreserved) {
  ParamStore<float> store(5);
  BlockConfig cfg;
  cfg.channels = 64;
  ResidualGroup<float> g(Scope<float>{&store, "g"}, cfg);
  EXPECT_EQ(g(Var<float>(random_tensor<float>({1, 64, 32, 32}, 1))).shape(), (Shape{1, 64, 32, 32}));
  EXPECT_THROW(g(Var<float>(random_tensor<float>({1, 32, 8, 8}, 1))), ShapeError);
}

TEST(ChannelAttention, GateRangeAndConstantInput) {
  ParamStore<double> store(6);
  ChannelAttention<double> ca(Scope<double>{&store, "ca"}, 8, 4);
  const auto x = random_tensor({2, 8, 5, 5}, 7, -50, 50);
  const auto gate = ca.gate(Var<double>(x)).value();
  for (double v : gate.data) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }

  // Constant per channel: avg = max = v, gate = sigmoid(2 * mlp(v)).
  Tensor<double> c({1, 8, 4, 4});
  Tensor<double> v({1, 8});
  for (int ch = 0; ch < 8; ++ch) {
    v.data[ch] = 0.3 * ch - 1.0;
    for (int i = 0; i < 16; ++i) c.data[ch * 16 + i] = v.data[ch];
  }
  const auto g = ca.gate(Var<double>(c)).value();
  const auto m = ca.mlp(Var<double>(v)).value();
  for (int ch = 0; ch < 8; ++ch) EXPECT_NEAR(g.data[ch], 1.0 / (1.0 + std::exp(-2.0 * m.data[ch])), 1e-14);
}

TEST(ChannelAttention, RatioIsSpatiallyConstantPerChannel) {
  ParamStore<double> store(8);
  ChannelAttention<double> ca(Scope<double>{&store, "ca"}, 4, 2);
  const auto x = random_tensor({1, 4, 6, 6}, 9, 0.5, 2.0);
  const auto y = ca(Var<double>(x)).value();
  for (int ch = 0; ch < 4; ++ch) {
    const double r0 = y.data[ch * 36] / x.data[ch * 36];
    for (int i = 1; i < 36; ++i) EXPECT_NEAR(y.data[ch * 36 + i] / x.data[ch * 36 + i], r0, 1e-12);
  }
}

TEST(Projection, Shapes) {
  ParamStore<float> store(10);
  Scope<float> root{&store, ""};
  UpProjection<float> up(root.sub("up"), 32, 8);
  EXPECT_EQ(up(Var<float>(random_tensor<float>({1, 32, 64, 64}, 1))).shape(), (Shape{1, 32, 512, 512}));
  DownProjection<float> down(root.sub("down"), 160, 128, 8);
  EXPECT_EQ(down(Var<float>(random_tensor<float>({1, 160, 64, 64}, 2))).shape(), (Shape{1, 128, 8, 8}));
  for (int s : {2, 4}) {
    UpProjection<float> u(root.sub("u" + std::to_string(s)), 3, s);
    DownProjection<float> d(root.sub("d" + std::to_string(s)), 3, 5, s);
    const Var<float> x(random_tensor<float>({2, 3, 5, 6}, 3));
    const auto hx = u(x);
    EXPECT_EQ(hx.shape(), (Shape{2, 3, 5 * s, 6 * s}));
    EXPECT_EQ(d(hx).shape(), (Shape{2, 5, 5, 6}));
  }
  EXPECT_THROW(down(Var<float>(random_tensor<float>({1, 160, 12, 12}, 2))), ShapeError);
  EXPECT_THROW(UpProjection<float>(root.sub("bad"), 4, 3), ValidationError);
}

TEST(PyramidPool, ConstantLinearityAndWidth) {
  Tensor<double> c({2, 3, 12, 12}, 2.5);
  const auto p = pyramid_pool(Var<double>(c)).value();
  EXPECT_EQ(p.shape, (Shape{2, 150}));
  for (double v : p.data) EXPECT_NEAR(v, 2.5, 1e-14);

  const auto x = random_tensor({1, 2, 13, 11}, 5);
  const auto px = pyramid_pool(Var<double>(x)).value();
  Tensor<double> x3 = x;
  for (auto& v : x3.data) v *= -3.0;
  const auto p3 = pyramid_pool(Var<double>(x3)).value();
  for (std::size_t i = 0; i < px.size(); ++i) EXPECT_NEAR(p3.data[i], -3.0 * px.data[i], 1e-12);

  EXPECT_EQ(pyramid_pool(Var<float>(Tensor<float>({1, 32, 512, 512}, 1.0f))).shape(), (Shape{1, 1600}));
  EXPECT_EQ(pooled_features_per_channel(Pooling::kPyramid), 50);
  EXPECT_EQ(pooled_features_per_channel(Pooling::kAvgMax), 2);
}

TEST(PyramidPool, BinMeansMatchDirectAverages) {
  const auto x = random_tensor({1, 1, 12, 12}, 6);
  const auto p = pyramid_pool(Var<double>(x)).value();
  // Bin layout 1 + 4 + 9 + 36, each row-major; 12 splits evenly for all.
  std::size_t k = 0;
  for (int bins : {1, 2, 3, 6}) {
    const int w = 12 / bins;
    for (int by = 0; by < bins; ++by)
      for (int bx = 0; bx < bins; ++bx, ++k) {
        double s = 0;
        for (int i = 0; i < w; ++i)
          for (int j = 0; j < w; ++j) s += x.data[(by * w + i) * 12 + bx * w + j];
        EXPECT_NEAR(p.data[k], s / (w * w), 1e-13) << "bins " << bins;
      }
  }
}

TEST(DynamicMlp, ShapeAndPurity) {
  for (DmlpVersion v : {DmlpVersion::kA, DmlpVersion::kB, DmlpVersion::kC}) {
    ParamStore<double> store(11);
    DmlpConfig cfg{v, 2, 8};
    DynamicMlp<double> m(Scope<double>{&store, "m"}, 6, 5, cfg, 36);
    auto fx = random_tensor({2, 6}, 12), fy = random_tensor({2, 5}, 13);
    for (int i = 0; i < 6; ++i) fx.data[6 + i] = fx.data[i];
    for (int i = 0; i < 5; ++i) fy.data[5 + i] = fy.data[i];
    const auto y = m(Var<double>(fx), Var<double>(fy)).value();
    ASSERT_EQ(y.shape, (Shape{2, 36}));
    for (int i = 0; i < 36; ++i) EXPECT_EQ(y.data[i], y.data[36 + i]);
  }
}

TEST(DynamicMlp, GuidanceChangesTheMapping) {
  ParamStore<double> store(14);
  DynamicMlp<double> m(Scope<double>{&store, "m"}, 4, 4, DmlpConfig{DmlpVersion::kA, 1, 8}, 6);
  const auto fx = random_tensor({1, 4}, 15);
  const auto a = m(Var<double>(fx), Var<double>(random_tensor({1, 4}, 16))).value();
  const auto b = m(Var<double>(fx), Var<double>(random_tensor({1, 4}, 17))).value();
  EXPECT_GT(max_abs_diff(a, b), 1e-6);
}

TEST(Params, SameSeedSameValuesIndependentOfSiblings) {
  ParamStore<float> a(3), b(3), c(4);
  auto pa = Scope<float>{&a, ""}.param("x.weight", {4, 4}, Init::kKaiming, 4);
  Scope<float>{&b, ""}.param("other", {10}, Init::kKaiming, 10);
  auto pb = Scope<float>{&b, ""}.param("x.weight", {4, 4}, Init::kKaiming, 4);
  auto pc = Scope<float>{&c, ""}.param("x.weight", {4, 4}, Init::kKaiming, 4);
  EXPECT_EQ(pa.value().data, pb.value().data);
  EXPECT_NE(pa.value().data, pc.value().data);
  for (float v : pa.value().data) EXPECT_LE(std::abs(v), 0.5f + 1e-6f);  // bound 1/sqrt(fan_in)
  EXPECT_THROW((Scope<float>{&a, ""}.param("x.weight", {1}, Init::kZeros, 1)), ValidationError);
}
