// Copyright 2026 The mocolsk Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "mocolsk/losses.hpp"
#include "test_util.hpp"

using namespace mocolsk;
using mocolsk::testing::random_tensor;

namespace {

using Img = std::vector<double>;

struct ScalarSsim {
  double ssim = 0, cs = 0;
};

// Sliding Gaussian window over valid positions, written out longhand.
ScalarSsim ssim_oracle(const Img& x, const Img& y, int H, int W, double L, int win = 11, double sigma = 1.5) {
  std::vector<double> g(win);
  double gs = 0;
  for (int i = 0; i < win; ++i) {
    const double d = i - (win - 1) / 2.0;
    g[i] = std::exp(-d * d / (2 * sigma * sigma));
    gs += g[i];
  }
  const double c1 = (0.01 * L) * (0.01 * L), c2 = (0.03 * L) * (0.03 * L);
  ScalarSsim acc;
  int n = 0;
  for (int oy = 0; oy + win <= H; ++oy)
    for (int ox = 0; ox + win <= W; ++ox) {
      double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
      for (int i = 0; i < win; ++i)
        for (int j = 0; j < win; ++j) {
          const double w = g[i] * g[j] / (gs * gs);
          const double a = x[(oy + i) * W + ox + j], b = y[(oy + i) * W + ox + j];
          mx += w * a;
          my += w * b;
          xx += w * a * a;
          yy += w * b * b;
          xy += w * a * b;
        }
      const double vx = xx - mx * mx, vy = yy - my * my, cov = xy - mx * my;
      const double cs = (2 * cov + c2) / (vx + vy + c2);
      acc.cs += cs;
      acc.ssim += (2 * mx * my + c1) / (mx * mx + my * my + c1) * cs;
      ++n;
    }
  acc.cs /= n;
  acc.ssim /= n;
  return acc;
}

Img pool2(const Img& x, int H, int W) {
  Img y((H / 2) * (W / 2));
  for (int i = 0; i < H / 2; ++i)
    for (int j = 0; j < W / 2; ++j)
      y[i * (W / 2) + j] =
          0.25 * (x[2 * i * W + 2 * j] + x[2 * i * W + 2 * j + 1] + x[(2 * i + 1) * W + 2 * j] + x[(2 * i + 1) * W + 2 * j + 1]);
  return y;
}

Var<double> as_var(const Img& v, int H, int W) { return Var<double>(Tensor<double>({1, 1, H, W}, v)); }

Img ramp(int H, int W, double a, double b, double c) {
  Img v(H * W);
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j) v[i * W + j] = 290 + a * i + b * j + c * std::sin(0.7 * i * j);
  return v;
}

double scalar(const Var<double>& v) { return v.value().data.at(0); }

}  // namespace

TEST(L1, HandValues) {
  const Var<double> p(Tensor<double>({2}, Img{0, 0})), t(Tensor<double>({2}, Img{3, 4}));
  EXPECT_DOUBLE_EQ(scalar(l1_loss(p, t)), 3.5);
  const auto x = random_tensor({2, 1, 4, 4}, 1);
  Tensor<double> xc = x;
  for (auto& v : xc.data) v -= 1.25;
  EXPECT_NEAR(scalar(l1_loss(Var<double>(xc), Var<double>(x))), 1.25, 1e-14);
  EXPECT_EQ(scalar(l1_loss(Var<double>(x), Var<double>(x))), 0.0);
  EXPECT_THROW(l1_loss(Var<double>(x), Var<double>(Tensor<double>({2, 1, 4, 5}))), ShapeError);
}

TEST(Ssim, IdentityAndReflection) {
  LossSpec spec;
  const KelvinMap k{1, 0, 40};
  const auto x = random_tensor({2, 1, 16, 16}, 2, 280, 320);
  EXPECT_NEAR(scalar(ssim(Var<double>(x), Var<double>(x), spec, k)), 1.0, 1e-12);
  double m = 0;
  for (double v : x.data) m += v;
  m /= x.size();
  Tensor<double> r = x;
  for (auto& v : r.data) v = -v + 2 * m;
  EXPECT_LT(scalar(ssim(Var<double>(r), Var<double>(x), spec, k)), 1.0);
  EXPECT_THROW(ssim(Var<double>(Tensor<double>({1, 1, 8, 8})), Var<double>(Tensor<double>({1, 1, 8, 8})), spec, k),
               ValidationError);
}

TEST(Ssim, MatchesScalarOracleOnRampPair) {
  const int n = 16;
  const Img a = ramp(n, n, 1.5, 0.75, 2.0), b = ramp(n, n, 1.2, 0.9, -1.0);
  LossSpec spec;
  for (double L : {1.0, 40.0}) {
    const double got = scalar(ssim(as_var(a, n, n), as_var(b, n, n), spec, KelvinMap{1, 0, L}));
    EXPECT_NEAR(got, ssim_oracle(a, b, n, n, L).ssim, 1e-6) << "L=" << L;
  }
  // Kelvin map applied before the window statistics.
  Img an(a.size()), bn(b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    an[i] = (a[i] - 300) / 10;
    bn[i] = (b[i] - 300) / 10;
  }
  EXPECT_NEAR(scalar(ssim(as_var(an, n, n), as_var(bn, n, n), spec, KelvinMap{10, 300, 40})),
              ssim_oracle(a, b, n, n, 40).ssim, 1e-6);
}

TEST(MsSsim, IdentityAndSingleScale) {
  LossSpec spec;
  spec.ms_scales = 3;
  const KelvinMap k{1, 0, 40};
  const auto x = random_tensor({1, 1, 48, 48}, 3, 280, 320);
  EXPECT_NEAR(scalar(ms_ssim(Var<double>(x), Var<double>(x), spec, k)), 1.0, 1e-12);
  Tensor<double> y = x;
  const auto noise = random_tensor({1, 1, 48, 48}, 4, -5, 5);
  for (std::size_t i = 0; i < y.size(); ++i) y.data[i] += noise.data[i];
  spec.ms_scales = 1;
  EXPECT_NEAR(scalar(ms_ssim(Var<double>(x), Var<double>(y), spec, k)), scalar(ssim(Var<double>(x), Var<double>(y), spec, k)),
              1e-12);
  spec.ms_scales = 5;
  EXPECT_THROW(ms_ssim(Var<double>(x), Var<double>(y), spec, k), ValidationError);
}

TEST(MsSsim, ThreeScalesMatchPerScaleOracleProduct) {
  const int n = 96;
  Img a = ramp(n, n, 0.2, 0.1, 3.0), b = ramp(n, n, 0.25, 0.05, 2.0);
  LossSpec spec;
  spec.ms_scales = 3;
  const double L = 40;
  const double got = scalar(ms_ssim(as_var(a, n, n), as_var(b, n, n), spec, KelvinMap{1, 0, L}));
  const double wsum = kMsSsimWeights[0] + kMsSsimWeights[1] + kMsSsimWeights[2];
  double expect = 1;
  int side = n;
  for (int j = 0; j < 3; ++j) {
    const auto t = ssim_oracle(a, b, side, side, L);
    const double v = j == 2 ? t.ssim : t.cs;
    expect *= std::pow(std::max(v, 1e-8), kMsSsimWeights[j] / wsum);
    a = pool2(a, side, side);
    b = pool2(b, side, side);
    side /= 2;
  }
  EXPECT_NEAR(got, expect, 1e-6);
  EXPECT_LT(got, 1.0);
}

TEST(CombinedLoss, L1OnlyEqualsL1) {
  LossSpec spec;
  spec.terms = {{LossKind::kL1, 1.0}, {LossKind::kSSIM, 0.0}};
  const auto p = random_tensor({2, 1, 12, 12}, 5), t = random_tensor({2, 1, 12, 12}, 6);
  EXPECT_DOUBLE_EQ(scalar(combined_loss(Var<double>(p), Var<double>(t), spec)), scalar(l1_loss(Var<double>(p), Var<double>(t))));
}

TEST(CombinedLoss, ZeroAtTargetForEveryMix) {
  const std::vector<std::vector<LossTerm>> mixes = {
      {{LossKind::kL1, 1.0}},
      {{LossKind::kSSIM, 1.0}},
      {{LossKind::kMSSSIM, 1.0}},
      {{LossKind::kSSIM, 0.3}, {LossKind::kL1, 0.7}},
      {{LossKind::kSSIM, 0.5}, {LossKind::kL1, 0.5}},
      {{LossKind::kSSIM, 0.84}, {LossKind::kL1, 0.16}},
      {{LossKind::kMSSSIM, 0.3}, {LossKind::kL1, 0.7}},
      {{LossKind::kMSSSIM, 0.5}, {LossKind::kL1, 0.5}},
      {{LossKind::kMSSSIM, 0.84}, {LossKind::kL1, 0.16}},
  };
  const auto x = random_tensor({1, 1, 48, 48}, 7);
  for (const auto& terms : mixes) {
    LossSpec spec;
    spec.terms = terms;
    spec.ms_scales = 3;
    EXPECT_NEAR(scalar(combined_loss(Var<double>(x), Var<double>(x), spec, KelvinMap{10, 300, 40})), 0.0, 1e-12);
  }
}

TEST(CombinedLoss, HalfSsimHalfL1MatchesOracles) {
  const int n = 16;
  const Img a = ramp(n, n, 1.5, 0.75, 2.0), b = ramp(n, n, 1.2, 0.9, -1.0);
  double l1 = 0;
  for (std::size_t i = 0; i < a.size(); ++i) l1 += std::abs(a[i] - b[i]);
  l1 /= a.size();
  LossSpec spec;
  spec.terms = {{LossKind::kSSIM, 0.5}, {LossKind::kL1, 0.5}};
  const double got = scalar(combined_loss(as_var(a, n, n), as_var(b, n, n), spec, KelvinMap{1, 0, 40}));
  EXPECT_NEAR(got, 0.5 * (1 - ssim_oracle(a, b, n, n, 40).ssim) + 0.5 * l1, 1e-6);
}

TEST(LossSpec, Validation) {
  LossSpec s;
  s.terms = {};
  EXPECT_THROW(s.validate(), ValidationError);
  s.terms = {{LossKind::kL1, -1}};
  EXPECT_THROW(s.validate(), ValidationError);
  s.terms = {{LossKind::kL1, 1}};
  s.window = 10;
  EXPECT_THROW(s.validate(), ValidationError);
  EXPECT_THROW(parse_loss_kind("L2"), ValidationError);
  EXPECT_EQ(parse_loss_kind("MS-SSIM"), LossKind::kMSSSIM);
}
