// Copyright 2026 The mocolsk Authors
// SPDX-License-Identifier: Apache-2.0

// Building blocks shared by both branches and the fusion module: conv stem,
// residual groups with channel attention, back-projection up/down units,
// pyramid pooling, the dynamic MLP and bicubic resizing.

#pragma once

#include <string>
#include <vector>

#include "mocolsk/ops.hpp"
#include "mocolsk/params.hpp"

namespace mocolsk {

struct BlockConfig {
  int channels = 32;
  int blocks_per_group = 4;
  int attention_reduction = 4;
  int scale = 2;
  double negative_slope = 0.2;

  void validate() const {
    if (channels < 1) throw ValidationError("block channels must be positive");
    if (attention_reduction < 1 || channels % attention_reduction != 0)
      throw ValidationError("channels (" + std::to_string(channels) + ") must be divisible by attention_reduction (" +
                            std::to_string(attention_reduction) + ")");
    if (scale != 2 && scale != 4 && scale != 8) throw ValidationError("scale must be 2, 4 or 8");
  }
};

inline void require_scale(int scale) {
  if (scale != 2 && scale != 4 && scale != 8)
    throw ValidationError("scale must be one of {2,4,8}, got " + std::to_string(scale));
}

template <typename T>
struct Conv2d {
  Var<T> weight, bias;
  ops::Conv2dOptions opts;

  Conv2d() = default;
  Conv2d(const Scope<T>& s, int in, int out, int k, ops::Conv2dOptions o = {}, bool with_bias = true) : opts(o) {
    const int fan_in = in / o.groups * k * k;
    weight = s.param("weight", {out, in / o.groups, k, k}, Init::kKaiming, fan_in);
    if (with_bias) bias = s.param("bias", {out}, Init::kBias, fan_in);
  }
  /// Same-padding convolution with stride 1.
  static Conv2d same(const Scope<T>& s, int in, int out, int k, int dilation = 1, int groups = 1,
                     bool with_bias = true) {
    return Conv2d(s, in, out, k, {1, dilation * (k - 1) / 2, dilation, groups}, with_bias);
  }
  Var<T> operator()(const Var<T>& x) const { return ops::conv2d(x, weight, bias, opts); }
  int in_channels() const { return weight.dim(1) * opts.groups; }
  int out_channels() const { return weight.dim(0); }
};

template <typename T>
struct Linear {
  Var<T> weight, bias;
  Linear() = default;
  Linear(const Scope<T>& s, int in, int out, bool with_bias = true) {
    weight = s.param("weight", {out, in}, Init::kKaiming, in);
    if (with_bias) bias = s.param("bias", {out}, Init::kBias, in);
  }
  Var<T> operator()(const Var<T>& x) const { return ops::linear(x, weight, bias); }
};

template <typename T>
struct ConvTranspose2d {
  Var<T> weight, bias;
  int stride = 1, padding = 0;
  ConvTranspose2d() = default;
  ConvTranspose2d(const Scope<T>& s, int in, int out, int k, int stride_, int padding_)
      : stride(stride_), padding(padding_) {
    const int fan_in = out * k * k;  // torch convention for transposed weights
    weight = s.param("weight", {in, out, k, k}, Init::kKaiming, fan_in);
    bias = s.param("bias", {out}, Init::kBias, fan_in);
  }
  Var<T> operator()(const Var<T>& x) const { return ops::conv_transpose2d(x, weight, bias, stride, padding); }
};

/// 3x3 same-padding convolution from the raw input channels to the base width.
template <typename T>
Conv2d<T> make_conv_stem(const Scope<T>& s, int in_channels, int base_dim) {
  return Conv2d<T>::same(s, in_channels, base_dim, 3);
}

/// gate = sigmoid(mlp(avgpool(x)) + mlp(maxpool(x))); out = x * gate.
template <typename T>
struct ChannelAttention {
  Linear<T> fc1, fc2;
  int channels = 0;

  ChannelAttention() = default;
  ChannelAttention(const Scope<T>& s, int c, int reduction) : channels(c) {
    if (reduction < 1 || c < reduction)
      throw ValidationError("channel attention: channels (" + std::to_string(c) + ") < reduction (" +
                            std::to_string(reduction) + ")");
    const int hidden = c / reduction;
    fc1 = Linear<T>(s.sub("fc1"), c, hidden);
    fc2 = Linear<T>(s.sub("fc2"), hidden, c);
  }

  Var<T> mlp(const Var<T>& v) const { return fc2(ops::relu(fc1(v))); }
  Var<T> gate(const Var<T>& x) const {
    return ops::sigmoid(ops::add(mlp(ops::global_avg_pool(x)), mlp(ops::global_max_pool(x))));
  }
  Var<T> operator()(const Var<T>& x) const { return ops::mul_channel(x, gate(x)); }
};

template <typename T>
struct ResidualBlock {
  Conv2d<T> conv1, conv2;
  ChannelAttention<T> attention;

  ResidualBlock() = default;
  ResidualBlock(const Scope<T>& s, const BlockConfig& cfg)
      : conv1(Conv2d<T>::same(s.sub("conv1"), cfg.channels, cfg.channels, 3)),
        conv2(Conv2d<T>::same(s.sub("conv2"), cfg.channels, cfg.channels, 3)),
        attention(s.sub("ca"), cfg.channels, cfg.attention_reduction) {}

  Var<T> operator()(const Var<T>& x) const { return ops::add(x, attention(conv2(ops::relu(conv1(x))))); }
};

/// `blocks_per_group` residual blocks, a tail convolution and a group skip.
template <typename T>
struct ResidualGroup {
  std::vector<ResidualBlock<T>> blocks;
  Conv2d<T> tail;
  int channels = 0;

  ResidualGroup() = default;
  ResidualGroup(const Scope<T>& s, const BlockConfig& cfg) : channels(cfg.channels) {
    if (cfg.blocks_per_group < 1) throw ValidationError("blocks_per_group must be >= 1");
    if (cfg.attention_reduction < 1 || cfg.channels % cfg.attention_reduction != 0)
      throw ValidationError("residual group: channels must be divisible by attention_reduction");
    for (int i = 0; i < cfg.blocks_per_group; ++i) blocks.emplace_back(s.sub("block" + std::to_string(i)), cfg);
    tail = Conv2d<T>::same(s.sub("tail"), cfg.channels, cfg.channels, 3);
  }

  Var<T> operator()(const Var<T>& x) const {
    if (x.dim(1) != channels)
      throw ShapeError("residual group expects " + std::to_string(channels) + " channels, got " +
                       to_string(x.shape()));
    Var<T> h = x;
    for (const auto& b : blocks) h = b(h);
    return ops::add(x, tail(h));
  }
};

/// (kernel, stride, padding) of the projection units for each scale.
struct ProjectionGeometry {
  int kernel, stride, padding;
};

inline ProjectionGeometry projection_geometry(int scale) {
  switch (scale) {
    case 2:
      return {6, 2, 2};
    case 4:
      return {8, 4, 2};
    case 8:
      return {12, 8, 2};
    default:
      throw ValidationError("projection units support scales 2, 4, 8; got " + std::to_string(scale));
  }
}

/// Back-projection up unit: H0 = deconv(x), L0 = conv(H0), H1 = deconv(L0 - x),
/// out = H0 + H1. Every stage is followed by a PReLU.
template <typename T>
struct UpProjection {
  ConvTranspose2d<T> up1, up2;
  Conv2d<T> down;
  Var<T> a1, a2, a3;
  int scale = 2;

  UpProjection() = default;
  UpProjection(const Scope<T>& s, int channels, int scale_) : scale(scale_) {
    const auto g = projection_geometry(scale);
    up1 = ConvTranspose2d<T>(s.sub("up1"), channels, channels, g.kernel, g.stride, g.padding);
    down = Conv2d<T>(s.sub("down"), channels, channels, g.kernel, {g.stride, g.padding, 1, 1});
    up2 = ConvTranspose2d<T>(s.sub("up2"), channels, channels, g.kernel, g.stride, g.padding);
    a1 = s.param("act1", {1}, Init::kConstant, 1, 0.25);
    a2 = s.param("act2", {1}, Init::kConstant, 1, 0.25);
    a3 = s.param("act3", {1}, Init::kConstant, 1, 0.25);
  }

  Var<T> operator()(const Var<T>& x) const {
    Var<T> h0 = ops::prelu(up1(x), a1);
    Var<T> l0 = ops::prelu(down(h0), a2);
    Var<T> h1 = ops::prelu(up2(ops::sub(l0, x)), a3);
    return ops::add(h0, h1);
  }
};

/// Back-projection down unit preceded by a 1x1 channel mapping:
/// x' = map(x), L0 = conv(x'), H0 = deconv(L0), L1 = conv(H0 - x'), out = L0 + L1.
template <typename T>
struct DownProjection {
  Conv2d<T> map, down1, down2;
  ConvTranspose2d<T> up;
  Var<T> a0, a1, a2, a3;
  int scale = 2;

  DownProjection() = default;
  DownProjection(const Scope<T>& s, int in_channels, int out_channels, int scale_) : scale(scale_) {
    const auto g = projection_geometry(scale);
    map = Conv2d<T>(s.sub("map"), in_channels, out_channels, 1);
    down1 = Conv2d<T>(s.sub("down1"), out_channels, out_channels, g.kernel, {g.stride, g.padding, 1, 1});
    up = ConvTranspose2d<T>(s.sub("up"), out_channels, out_channels, g.kernel, g.stride, g.padding);
    down2 = Conv2d<T>(s.sub("down2"), out_channels, out_channels, g.kernel, {g.stride, g.padding, 1, 1});
    a0 = s.param("act0", {1}, Init::kConstant, 1, 0.25);
    a1 = s.param("act1", {1}, Init::kConstant, 1, 0.25);
    a2 = s.param("act2", {1}, Init::kConstant, 1, 0.25);
    a3 = s.param("act3", {1}, Init::kConstant, 1, 0.25);
  }

  Var<T> operator()(const Var<T>& x) const {
    require_rank(x.shape(), 4, "down projection");
    if (x.dim(2) % scale || x.dim(3) % scale)
      throw ShapeError("down projection: spatial size " + to_string(x.shape()) + " not divisible by scale " +
                       std::to_string(scale));
    Var<T> xm = ops::prelu(map(x), a0);
    Var<T> l0 = ops::prelu(down1(xm), a1);
    Var<T> h0 = ops::prelu(up(l0), a2);
    Var<T> l1 = ops::prelu(down2(ops::sub(h0, xm)), a3);
    return ops::add(l0, l1);
  }
};

enum class Pooling { kAvg, kMax, kAvgMax, kPyramid };

inline int pooled_features_per_channel(Pooling p) {
  switch (p) {
    case Pooling::kAvg:
    case Pooling::kMax:
      return 1;
    case Pooling::kAvgMax:
      return 2;
    case Pooling::kPyramid:
      return 1 + 4 + 9 + 36;
  }
  return 0;
}

/// Adaptive average pooling at bins {1,2,3,6}, each flattened and
/// concatenated: (B,C,H,W) -> (B, 50*C).
template <typename T>
Var<T> pyramid_pool(const Var<T>& x) {
  require_rank(x.shape(), 4, "pyramid_pool");
  if (x.dim(2) < 6 || x.dim(3) < 6)
    throw ShapeError("pyramid pooling needs H, W >= 6, got " + to_string(x.shape()));
  const int B = x.dim(0), C = x.dim(1);
  std::vector<Var<T>> parts;
  for (int bins : {1, 2, 3, 6}) parts.push_back(ops::reshape(ops::adaptive_avg_pool(x, bins), Shape{B, C * bins * bins}));
  return ops::concat(parts);
}

/// Global descriptor used by the weight-generation pathway.
template <typename T>
Var<T> pool_descriptor(const Var<T>& x, Pooling p) {
  switch (p) {
    case Pooling::kAvg:
      return ops::global_avg_pool(x);
    case Pooling::kMax:
      return ops::global_max_pool(x);
    case Pooling::kAvgMax:
      return ops::concat(std::vector<Var<T>>{ops::global_avg_pool(x), ops::global_max_pool(x)});
    case Pooling::kPyramid:
      return pyramid_pool(x);
  }
  throw ValidationError("unknown pooling");
}

enum class DmlpVersion { kA, kB, kC };

struct DmlpConfig {
  DmlpVersion version = DmlpVersion::kA;
  int layers = 1;
  int hidden = 64;
};

/// Dynamic MLP: the guidance embedding generates the weight matrices that are
/// applied to the LST embedding.
///   A: fx <- relu(M(fy) fx),                 M: d x d
///   B: fx <- W_up relu(M'(fy) W_down fx),    M': d/2 x d/2
///   C: as B, with fy <- relu(L fy) before each M'.
template <typename T>
struct DynamicMlp {
  DmlpConfig cfg;
  Linear<T> proj_x, proj_y, head;
  std::vector<Linear<T>> generators, downs, ups, guide_updates;

  DynamicMlp() = default;
  DynamicMlp(const Scope<T>& s, int in_x, int in_y, DmlpConfig c, int out_dim) : cfg(c) {
    if (cfg.layers < 1) throw ValidationError("dynamic MLP needs at least one layer");
    if (cfg.hidden < 2 || cfg.hidden % 2) throw ValidationError("dynamic MLP hidden width must be even and >= 2");
    const int d = cfg.hidden, h = d / 2;
    proj_x = Linear<T>(s.sub("proj_x"), in_x, d);
    proj_y = Linear<T>(s.sub("proj_y"), in_y, d);
    for (int l = 0; l < cfg.layers; ++l) {
      const auto ls = s.sub("layer" + std::to_string(l));
      if (cfg.version == DmlpVersion::kA) {
        generators.emplace_back(ls.sub("gen"), d, d * d);
      } else {
        downs.emplace_back(ls.sub("down"), d, h);
        generators.emplace_back(ls.sub("gen"), d, h * h);
        ups.emplace_back(ls.sub("up"), h, d);
        if (cfg.version == DmlpVersion::kC) guide_updates.emplace_back(ls.sub("guide"), d, d);
      }
    }
    head = Linear<T>(s.sub("head"), d, out_dim);
  }

  Var<T> operator()(const Var<T>& fx_in, const Var<T>& fy_in) const {
    if (fx_in.dim(0) != fy_in.dim(0)) throw ShapeError("dynamic MLP: batch mismatch");
    const int d = cfg.hidden, h = d / 2;
    Var<T> fx = ops::relu(proj_x(fx_in));
    Var<T> fy = ops::relu(proj_y(fy_in));
    for (int l = 0; l < cfg.layers; ++l) {
      if (cfg.version == DmlpVersion::kA) {
        fx = ops::relu(ops::batched_matvec(generators[l](fy), fx, d));
      } else {
        if (cfg.version == DmlpVersion::kC) fy = ops::relu(guide_updates[l](fy));
        Var<T> z = ops::batched_matvec(generators[l](fy), downs[l](fx), h);
        fx = ups[l](ops::relu(z));
      }
    }
    return head(fx);
  }
};

/// Bicubic upsampling of a plain grid (B,C,H,W) by an integer factor.
template <typename T>
Tensor<T> bicubic_resize(const Tensor<T>& x, int scale) {
  NoGradGuard guard;
  return ops::bicubic_upsample(Var<T>(x), scale).value();
}

}  // namespace mocolsk
