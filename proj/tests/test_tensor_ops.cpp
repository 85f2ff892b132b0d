// Copyright 2026 The mocolsk Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "mocolsk/blocks.hpp"
#include "mocolsk/ops.hpp"
#include "test_util.hpp"

using namespace mocolsk;
using mocolsk::testing::max_abs_diff;
using mocolsk::testing::random_tensor;

namespace {

// Direct cross-correlation loops.
Tensor<double> conv_oracle(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>* b,
                           ops::Conv2dOptions o) {
  const int B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Cout = w.dim(0), cg = w.dim(1), k = w.dim(2);
  const int Ho = (H + 2 * o.padding - o.dilation * (k - 1) - 1) / o.stride + 1;
  const int Wo = (W + 2 * o.padding - o.dilation * (k - 1) - 1) / o.stride + 1;
  const int opg = Cout / o.groups;
  Tensor<double> y({B, Cout, Ho, Wo});
  for (int n = 0; n < B; ++n)
    for (int co = 0; co < Cout; ++co)
      for (int i = 0; i < Ho; ++i)
        for (int j = 0; j < Wo; ++j) {
          double acc = b ? b->data[co] : 0.0;
          const int g = co / opg;
          for (int ci = 0; ci < cg; ++ci)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int yy = i * o.stride - o.padding + ky * o.dilation;
                const int xx = j * o.stride - o.padding + kx * o.dilation;
                if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
                acc += w.at(co, ci, ky, kx) * x.at(n, g * cg + ci, yy, xx);
              }
          y.at(n, co, i, j) = acc;
        }
  (void)Cin;
  return y;
}

double keys(double t) {
  const double a = -0.5;
  t = std::abs(t);
  if (t <= 1) return (a + 2) * t * t * t - (a + 3) * t * t + 1;
  if (t < 2) return a * t * t * t - 5 * a * t * t + 8 * a * t - 4 * a;
  return 0;
}

// Two-dimensional scalar bicubic: 16 taps per output pixel.
double bicubic_at(const std::vector<double>& img, int H, int W, int s, int oy, int ox) {
  const double sy = (oy + 0.5) / s - 0.5, sx = (ox + 0.5) / s - 0.5;
  const int y0 = static_cast<int>(std::floor(sy)), x0 = static_cast<int>(std::floor(sx));
  double acc = 0;
  for (int m = -1; m <= 2; ++m)
    for (int n = -1; n <= 2; ++n) {
      const int yy = std::clamp(y0 + m, 0, H - 1), xx = std::clamp(x0 + n, 0, W - 1);
      acc += keys(sy - (y0 + m)) * keys(sx - (x0 + n)) * img[yy * W + xx];
    }
  return acc;
}

}  // namespace

TEST(Conv2d, MatchesDirectLoops) {
  struct Case {
    int cin, cout, k;
    ops::Conv2dOptions o;
  };
  const std::vector<Case> cases = {{3, 4, 3, {1, 1, 1, 1}}, {4, 4, 5, {1, 4, 2, 4}}, {2, 6, 4, {2, 1, 1, 2}},
                                   {3, 2, 1, {1, 0, 1, 1}}, {6, 3, 3, {1, 2, 2, 3}}};
  std::uint64_t seed = 1;
  for (const auto& c : cases) {
    const auto x = random_tensor({2, c.cin, 9, 8}, seed++);
    const auto w = random_tensor({c.cout, c.cin / c.o.groups, c.k, c.k}, seed++);
    const auto b = random_tensor({c.cout}, seed++);
    const auto y = ops::conv2d(Var<double>(x), Var<double>(w), Var<double>(b), c.o).value();
    EXPECT_LT(max_abs_diff(y, conv_oracle(x, w, &b, c.o)), 1e-12) << "k=" << c.k << " groups=" << c.o.groups;
  }
}

TEST(Conv2d, UndefinedBiasMeansNoBias) {
  const auto x = random_tensor({1, 2, 5, 5}, 3);
  const auto w = random_tensor({3, 2, 3, 3}, 4);
  const auto y = ops::conv2d(Var<double>(x), Var<double>(w), Var<double>(), {1, 1, 1, 1}).value();
  EXPECT_LT(max_abs_diff(y, conv_oracle(x, w, nullptr, {1, 1, 1, 1})), 1e-12);
}

TEST(ConvTranspose2d, MatchesScatterDefinition) {
  const int Cin = 3, Cout = 2, k = 6, s = 2, p = 2, H = 4, W = 5;
  const auto x = random_tensor({1, Cin, H, W}, 7);
  const auto w = random_tensor({Cin, Cout, k, k}, 8);
  const auto b = random_tensor({Cout}, 9);
  const auto y = ops::conv_transpose2d(Var<double>(x), Var<double>(w), Var<double>(b), s, p).value();
  const int Ho = (H - 1) * s - 2 * p + k, Wo = (W - 1) * s - 2 * p + k;
  ASSERT_EQ(y.shape, (Shape{1, Cout, Ho, Wo}));
  Tensor<double> ref({1, Cout, Ho, Wo});
  for (int co = 0; co < Cout; ++co)
    for (int i = 0; i < Ho; ++i)
      for (int j = 0; j < Wo; ++j) ref.at(0, co, i, j) = b.data[co];
  for (int ci = 0; ci < Cin; ++ci)
    for (int i = 0; i < H; ++i)
      for (int j = 0; j < W; ++j)
        for (int co = 0; co < Cout; ++co)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const int oy = i * s - p + ky, ox = j * s - p + kx;
              if (oy < 0 || oy >= Ho || ox < 0 || ox >= Wo) continue;
              ref.at(0, co, oy, ox) += x.at(0, ci, i, j) * w.at(ci, co, ky, kx);
            }
  EXPECT_LT(max_abs_diff(y, ref), 1e-12);
}

TEST(Bicubic, MatchesScalarOracleOnRamp) {
  const int n = 7;
  Tensor<double> ramp({1, 1, n, n});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) ramp.at(0, 0, i, j) = 280.0 + 1.5 * i + 0.75 * j + 0.1 * i * j;
  for (int s : {2, 4, 8}) {
    const auto up = bicubic_resize(ramp, s);
    ASSERT_EQ(up.shape, (Shape{1, 1, n * s, n * s}));
    double worst = 0;
    for (int i = 0; i < n * s; ++i)
      for (int j = 0; j < n * s; ++j) worst = std::max(worst, std::abs(up.at(0, 0, i, j) - bicubic_at(ramp.data, n, n, s, i, j)));
    EXPECT_LT(worst, 1e-5) << "scale " << s;
  }
}

TEST(Bicubic, ConstantFieldStaysConstant) {
  Tensor<float> c({2, 3, 6, 5}, 300.0f);
  const auto up = bicubic_resize(c, 4);
  for (float v : up.data) EXPECT_FLOAT_EQ(v, 300.0f);
}

TEST(Bicubic, Scale8Shape) {
  Tensor<float> x({1, 1, 64, 64}, 1.0f);
  EXPECT_EQ(bicubic_resize(x, 8).shape, (Shape{1, 1, 512, 512}));
}

TEST(Bicubic, BackwardIsTranspose) {
  // <up(x), r> == <x, up^T(r)> for the adjoint computed by backward.
  const auto x = random_tensor({1, 2, 4, 5}, 11);
  const auto r = random_tensor({1, 2, 12, 15}, 12);
  Var<double> xv(x, true);
  Var<double> y = ops::bicubic_upsample(xv, 3);
  backward(y, &r.data);
  double lhs = 0, rhs = 0;
  for (std::size_t i = 0; i < r.size(); ++i) lhs += y.value().data[i] * r.data[i];
  const auto g = xv.grad();
  for (std::size_t i = 0; i < x.size(); ++i) rhs += x.data[i] * g[i];
  EXPECT_NEAR(lhs, rhs, 1e-10);
}

TEST(DynamicConv, SharedKernelsMatchStandardConv) {
  const int B = 3, C = 2, k = 3;
  const auto x = random_tensor({B, C, 7, 6}, 21);
  const auto w = random_tensor({C, C, k, k}, 22);
  Tensor<double> bank({B, C * C * k * k});
  for (int b = 0; b < B; ++b) std::copy(w.data.begin(), w.data.end(), bank.data.begin() + b * w.size());
  const auto dyn = ops::dynamic_conv2d(Var<double>(x), Var<double>(bank), C, k).value();
  EXPECT_LT(max_abs_diff(dyn, conv_oracle(x, w, nullptr, {1, 1, 1, 1})), 1e-12);
}

TEST(DynamicConv, EachSampleUsesItsOwnKernel) {
  const int B = 2, C = 2, k = 3;
  const auto x = random_tensor({B, C, 5, 5}, 31);
  const auto bank = random_tensor({B, C * C * k * k}, 32);
  const auto y = ops::dynamic_conv2d(Var<double>(x), Var<double>(bank), C, k).value();
  for (int b = 0; b < B; ++b) {
    Tensor<double> xb({1, C, 5, 5}), wb({C, C, k, k});
    std::copy(x.data.begin() + b * xb.size(), x.data.begin() + (b + 1) * xb.size(), xb.data.begin());
    std::copy(bank.data.begin() + b * wb.size(), bank.data.begin() + (b + 1) * wb.size(), wb.data.begin());
    const auto ref = conv_oracle(xb, wb, nullptr, {1, 1, 1, 1});
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y.data[b * ref.size() + i], ref.data[i], 1e-12);
  }
}

TEST(Autograd, SumOfSquaresGradient) {
  const auto x = random_tensor({2, 3}, 41);
  Var<double> v(x, true);
  backward(ops::sum(ops::square(v)));
  const auto g = v.grad();
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(g[i], 2 * x.data[i]);
}

TEST(Autograd, NoGradGuardRecordsNothing) {
  Var<double> v(random_tensor({4}, 42), true);
  NoGradGuard g;
  Var<double> y = ops::scale(v, 2.0);
  EXPECT_FALSE(static_cast<bool>(y.node()->backward));
}

TEST(BranchTrace, HashFollowsReluSigns) {
  Tensor<double> a({4}, std::vector<double>{1, -1, 2, -2});
  Tensor<double> b({4}, std::vector<double>{1, -1, 2, 0.5});
  auto trace = [](const Tensor<double>& t) {
    BranchTrace tr;
    ops::relu(Var<double>(t));
    return tr.hash();
  };
  EXPECT_EQ(trace(a), trace(a));
  EXPECT_NE(trace(a), trace(b));
  Tensor<double> a2({4}, std::vector<double>{3, -5, 0.1, -0.1});
  EXPECT_EQ(trace(a), trace(a2));
}

TEST(Pooling, AdaptiveAvgPoolOfConstantIsConstant) {
  Tensor<double> c({1, 2, 7, 9}, 4.25);
  for (int bins : {1, 2, 3, 6}) {
    const auto y = ops::adaptive_avg_pool(Var<double>(c), bins).value();
    for (double v : y.data) EXPECT_NEAR(v, 4.25, 1e-14);
  }
}
