// Copyright 2026 The mocolsk Authors
// SPDX-License-Identifier: Apache-2.0

// The modality-conditioned large selective kernel fusion module and the
// multimodal variants it is compared against.
//
// Default (MoCoLSK-SS) data flow for one stage, LST features T at LR and
// guidance features G at HR:
//
//   X  = Up(T)
//   U1 = pw1(dw_k1(X)),  U2 = pw2(dw_k2(dw_k1(X)))
//   SA = [mean_c([U1,U2]), max_c([U1,U2])]
//   w  = DMLP(pool(X), pool(G))            per-sample 2->2 kernel bank
//   M  = sigmoid(dconv(SA, w))
//   S  = pw3(M1*U1 + M2*U2)
//   Z  = G * S
//   out = Down([X, Z])

#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mocolsk/blocks.hpp"

namespace mocolsk {

struct KernelStep {
  int kernel = 5;
  int dilation = 1;
  bool operator==(const KernelStep&) const = default;
};

using KernelSpec = std::vector<KernelStep>;

inline KernelSpec default_kernel_spec() { return {{5, 1}, {7, 3}}; }

inline void validate_kernel_spec(const KernelSpec& spec) {
  if (spec.empty()) throw ValidationError("kernel spec is empty");
  for (const auto& s : spec) {
    if (s.kernel < 1 || s.kernel % 2 == 0)
      throw ValidationError("kernel sizes must be odd, got " + std::to_string(s.kernel));
    if (s.dilation < 1) throw ValidationError("dilations must be >= 1, got " + std::to_string(s.dilation));
  }
}

/// Receptive field of a chain of dilated convolutions: 1 + sum (k-1)*d.
inline int receptive_field(const KernelSpec& spec) {
  validate_kernel_spec(spec);
  int rf = 1;
  for (const auto& s : spec) rf += (s.kernel - 1) * s.dilation;
  return rf;
}

enum class FusionVariant { kMoCoLSK_SS, kMoCoLSK_CS, kSK_M, kLSK_M, kLSK_CS_M, kMoCoLSK_Ex, kBaseline };

inline const char* variant_name(FusionVariant v) {
  switch (v) {
    case FusionVariant::kMoCoLSK_SS:
      return "MoCoLSK-SS";
    case FusionVariant::kMoCoLSK_CS:
      return "MoCoLSK-CS";
    case FusionVariant::kSK_M:
      return "SK-M";
    case FusionVariant::kLSK_M:
      return "LSK-M";
    case FusionVariant::kLSK_CS_M:
      return "LSK-CS-M";
    case FusionVariant::kMoCoLSK_Ex:
      return "MoCoLSK-Ex";
    case FusionVariant::kBaseline:
      return "Baseline";
  }
  return "?";
}

/// Accepts the full names plus the short tags S (spatial) and C (channel).
inline FusionVariant parse_variant(const std::string& s) {
  if (s == "S" || s == "MoCoLSK-SS" || s == "MoCoLSK") return FusionVariant::kMoCoLSK_SS;
  if (s == "C" || s == "MoCoLSK-CS") return FusionVariant::kMoCoLSK_CS;
  if (s == "SK-M") return FusionVariant::kSK_M;
  if (s == "LSK-M") return FusionVariant::kLSK_M;
  if (s == "LSK-CS-M") return FusionVariant::kLSK_CS_M;
  if (s == "MoCoLSK-Ex") return FusionVariant::kMoCoLSK_Ex;
  if (s == "Baseline") return FusionVariant::kBaseline;
  throw ValidationError("unknown fusion variant '" + s + "'");
}

struct MoCoLSKConfig {
  int lst_channels = 32;
  int guid_channels = 32;
  int out_channels = 64;
  int scale = 2;
  KernelSpec kernel_spec = default_kernel_spec();
  int dconv_kernel = 3;
  DmlpConfig dmlp;
  FusionVariant variant = FusionVariant::kMoCoLSK_SS;
  Pooling pooling = Pooling::kPyramid;
  bool dynamic = true;          // false: static 2->2 convolution instead of dconv
  bool modality_fusion = true;  // false: Z = X * S
  int attention_reduction = 4;

  void validate() const {
    require_scale(scale);
    validate_kernel_spec(kernel_spec);
    if (kernel_spec.size() > 2) throw ValidationError("kernel spec supports one or two steps");
    if (dconv_kernel < 1 || dconv_kernel % 2 == 0)
      throw ValidationError("dconv kernel must be odd, got " + std::to_string(dconv_kernel));
    if (out_channels < 1) throw ValidationError("out_channels must be >= 1");
    if (lst_channels < 1 || guid_channels < 1) throw ValidationError("channel counts must be >= 1");
  }
};

// ---------------------------------------------------------------------------
// Pathway pieces, usable on their own.

/// Depth-wise chain followed by two point-wise projections.
template <typename T>
struct LargeKernelDecomposition {
  Conv2d<T> dw1, dw2, pw1, pw2;
  bool two_step = true;

  LargeKernelDecomposition() = default;
  LargeKernelDecomposition(const Scope<T>& s, int in_channels, int out_channels, const KernelSpec& spec) {
    validate_kernel_spec(spec);
    if (spec.size() > 2) throw ValidationError("large kernel decomposition supports one or two steps");
    two_step = spec.size() == 2;
    dw1 = Conv2d<T>::same(s.sub("dw1"), in_channels, in_channels, spec[0].kernel, spec[0].dilation, in_channels);
    if (two_step)
      dw2 = Conv2d<T>::same(s.sub("dw2"), in_channels, in_channels, spec[1].kernel, spec[1].dilation, in_channels);
    pw1 = Conv2d<T>(s.sub("pw1"), in_channels, out_channels, 1);
    pw2 = Conv2d<T>(s.sub("pw2"), in_channels, out_channels, 1);
  }

  /// Two steps: U1 = pw1(dw1 X), U2 = pw2(dw2 dw1 X). One step (a single
  /// large kernel): both branches read dw1 X through their own projection.
  std::pair<Var<T>, Var<T>> operator()(const Var<T>& x) const {
    Var<T> a = dw1(x);
    Var<T> u1 = pw1(a);
    Var<T> u2 = two_step ? pw2(dw2(a)) : pw2(a);
    return {u1, u2};
  }
};

/// SA = [mean over channels of [U1,U2], max over channels of [U1,U2]].
template <typename T>
Var<T> spatial_attention_pool(const Var<T>& u1, const Var<T>& u2) {
  require_rank(u1.shape(), 4, "spatial_attention_pool");
  require_rank(u2.shape(), 4, "spatial_attention_pool");
  if (u1.dim(0) != u2.dim(0) || u1.dim(2) != u2.dim(2) || u1.dim(3) != u2.dim(3))
    throw ShapeError("spatial_attention_pool: spatial mismatch " + to_string(u1.shape()) + " vs " +
                     to_string(u2.shape()));
  Var<T> cat = ops::concat(std::vector<Var<T>>{u1, u2});
  return ops::concat(std::vector<Var<T>>{ops::channel_mean(cat), ops::channel_max(cat)});
}

/// Per-sample 2->2 convolution of SA with the bank w (B,2,2,k,k). No bias.
/// The sigmoid is applied by the caller.
template <typename T>
Var<T> modality_conditioned_conv(const Var<T>& sa, const Var<T>& w) {
  require_rank(sa.shape(), 4, "modality_conditioned_conv input");
  if (w.shape().size() != 5 || w.dim(1) != 2 || w.dim(2) != 2 || w.dim(3) != w.dim(4))
    throw ShapeError("modality weights must be (B,2,2,k,k), got " + to_string(w.shape()));
  if (w.dim(3) % 2 == 0) throw ValidationError("modality weight kernel must be odd, got " + std::to_string(w.dim(3)));
  if (w.dim(0) != sa.dim(0)) throw ShapeError("modality_conditioned_conv: batch mismatch");
  if (sa.dim(1) != 2) throw ShapeError("modality_conditioned_conv expects 2 input channels");
  const int k = w.dim(3);
  return ops::dynamic_conv2d(sa, ops::reshape(w, Shape{w.dim(0), 4 * k * k}), 2, k);
}

/// S = pw3(mask1*U1 + mask2*U2) with masks (B,2,H,W) already in (0,1).
template <typename T>
Var<T> spatial_kernel_select(const Var<T>& u1, const Var<T>& u2, const Var<T>& masks, const Conv2d<T>& pw3) {
  if (u1.shape() != u2.shape())
    throw ShapeError("spatial_kernel_select: U1 " + to_string(u1.shape()) + " vs U2 " + to_string(u2.shape()));
  if (masks.shape().size() != 4 || masks.dim(1) != 2 || masks.dim(0) != u1.dim(0) || masks.dim(2) != u1.dim(2) ||
      masks.dim(3) != u1.dim(3))
    throw ShapeError("spatial_kernel_select: masks " + to_string(masks.shape()) + " vs features " +
                     to_string(u1.shape()));
  Var<T> sel = ops::add(ops::mul_spatial(u1, ops::slice(masks, 0, 1)), ops::mul_spatial(u2, ops::slice(masks, 1, 1)));
  return pw3(sel);
}

/// Z = Y * S elementwise.
template <typename T>
Var<T> modality_fuse(const Var<T>& s, const Var<T>& y) {
  if (s.shape() != y.shape())
    throw ShapeError("modality_fuse: S " + to_string(s.shape()) + " vs Y " + to_string(y.shape()));
  return ops::mul(y, s);
}

/// Modality-conditioned weight generation: pooled descriptors of X and Y fed
/// through the dynamic MLP.
template <typename T>
struct WeightGenerator {
  DynamicMlp<T> dmlp;
  Pooling pooling = Pooling::kPyramid;
  int out_dim = 0;

  WeightGenerator() = default;
  WeightGenerator(const Scope<T>& s, int x_channels, int y_channels, DmlpConfig cfg, Pooling p, int out_dim_)
      : pooling(p), out_dim(out_dim_) {
    const int f = pooled_features_per_channel(p);
    dmlp = DynamicMlp<T>(s.sub("dmlp"), x_channels * f, y_channels * f, cfg, out_dim);
  }

  /// (B, out_dim).
  Var<T> operator()(const Var<T>& x, const Var<T>& y) const {
    require_rank(x.shape(), 4, "weight generator X");
    require_rank(y.shape(), 4, "weight generator Y");
    if (x.dim(0) != y.dim(0) || x.dim(2) != y.dim(2) || x.dim(3) != y.dim(3))
      throw ShapeError("weight generator: X " + to_string(x.shape()) + " and Y " + to_string(y.shape()) +
                       " must share batch and spatial dims");
    return dmlp(pool_descriptor(x, pooling), pool_descriptor(y, pooling));
  }
};

/// Weight bank (B,2,2,k,k) for the modality-conditioned convolution.
template <typename T>
Var<T> mcwg_weights(const WeightGenerator<T>& gen, const Var<T>& x, const Var<T>& y, int k) {
  if (gen.out_dim != 4 * k * k) throw ShapeError("weight generator emits " + std::to_string(gen.out_dim) + " values");
  Var<T> w = gen(x, y);
  return ops::reshape(w, Shape{x.dim(0), 2, 2, k, k});
}

// ---------------------------------------------------------------------------

/// Channel gates from pooled descriptors of U1, U2: (B, 2*C) in (0,1).
template <typename T>
struct ChannelSelector {
  Linear<T> fc1, fc2;
  ChannelSelector() = default;
  ChannelSelector(const Scope<T>& s, int channels_per_branch, int reduction) {
    const int in = 2 * channels_per_branch;
    const int hidden = std::max(1, in / std::max(1, reduction));
    fc1 = Linear<T>(s.sub("fc1"), in, hidden);
    fc2 = Linear<T>(s.sub("fc2"), hidden, in);
  }
  Var<T> operator()(const Var<T>& desc) const { return ops::sigmoid(fc2(ops::relu(fc1(desc)))); }
};

/// Intermediate tensors of one forward pass, for inspection in tests.
template <typename T>
struct FusionTrace {
  Var<T> x, u1, u2, sa, weights, masks, s, z;
};

/// One fusion stage: (B,C,h,w) LST features + (B,Cg,s*h,s*w) guidance
/// features -> (B,out,h,w).
template <typename T>
class FusionModule {
 public:
  FusionModule() = default;
  FusionModule(const Scope<T>& s, MoCoLSKConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const int C = cfg_.lst_channels, Cg = cfg_.guid_channels, k = cfg_.dconv_kernel;
    up_ = UpProjection<T>(s.sub("up"), C, cfg_.scale);
    switch (cfg_.variant) {
      case FusionVariant::kBaseline:
        down_ = DownProjection<T>(s.sub("down"), C, cfg_.out_channels, cfg_.scale);
        break;
      case FusionVariant::kMoCoLSK_SS:
      case FusionVariant::kMoCoLSK_CS: {
        const int cs = cfg_.modality_fusion ? Cg : C;
        lkd_ = LargeKernelDecomposition<T>(s.sub("lkd"), C, cs, cfg_.kernel_spec);
        pw3_ = Conv2d<T>(s.sub("pw3"), cs, cs, 1);
        const bool spatial = cfg_.variant == FusionVariant::kMoCoLSK_SS;
        if (spatial && !cfg_.dynamic) {
          static_w_ = s.param("static_conv.weight", {2, 2, k, k}, Init::kKaiming, 2 * k * k);
        }
        if (cfg_.dynamic)
          gen_ = WeightGenerator<T>(s.sub("mcwg"), C, Cg, cfg_.dmlp, cfg_.pooling, spatial ? 4 * k * k : 2 * cs);
        if (!spatial) selector_ = ChannelSelector<T>(s.sub("select"), cs, cfg_.attention_reduction);
        down_ = DownProjection<T>(s.sub("down"), C + cs, cfg_.out_channels, cfg_.scale);
        break;
      }
      case FusionVariant::kMoCoLSK_Ex: {
        // The guidance features run the selective-kernel pathway; S must
        // match X for Z = X * S.
        lkd_ = LargeKernelDecomposition<T>(s.sub("lkd"), Cg, C, cfg_.kernel_spec);
        pw3_ = Conv2d<T>(s.sub("pw3"), C, C, 1);
        gen_ = WeightGenerator<T>(s.sub("mcwg"), C, Cg, cfg_.dmlp, cfg_.pooling, 4 * k * k);
        down_ = DownProjection<T>(s.sub("down"), 2 * C, cfg_.out_channels, cfg_.scale);
        break;
      }
      case FusionVariant::kSK_M: {
        const int ct = C + Cg;
        sk_b1_ = Conv2d<T>::same(s.sub("sk.branch1"), ct, ct, 3, 1, ct);
        sk_b2_ = Conv2d<T>::same(s.sub("sk.branch2"), ct, ct, 3, 2, ct);
        const int hidden = std::max(4, ct / std::max(1, cfg_.attention_reduction));
        sk_fc_ = Linear<T>(s.sub("sk.fc"), ct, hidden);
        sk_fa_ = Linear<T>(s.sub("sk.fa"), hidden, ct);
        sk_fb_ = Linear<T>(s.sub("sk.fb"), hidden, ct);
        down_ = DownProjection<T>(s.sub("down"), ct, cfg_.out_channels, cfg_.scale);
        break;
      }
      case FusionVariant::kLSK_M:
      case FusionVariant::kLSK_CS_M: {
        const int ct = C + Cg, half = std::max(1, ct / 2);
        lkd_ = LargeKernelDecomposition<T>(s.sub("lkd"), ct, half, cfg_.kernel_spec);
        pw3_ = Conv2d<T>(s.sub("pw3"), half, ct, 1);
        if (cfg_.variant == FusionVariant::kLSK_M)
          squeeze_ = Conv2d<T>::same(s.sub("squeeze"), 2, 2, k);
        else
          selector_ = ChannelSelector<T>(s.sub("select"), half, cfg_.attention_reduction);
        down_ = DownProjection<T>(s.sub("down"), ct, cfg_.out_channels, cfg_.scale);
        break;
      }
    }
  }

  const MoCoLSKConfig& config() const { return cfg_; }

  /// Forces the generated modality weights to zero (masks collapse to 0.5).
  void set_zero_modality_weights(bool on) { zero_weights_ = on; }
  bool zero_modality_weights() const { return zero_weights_; }

  const UpProjection<T>& up() const { return up_; }
  const LargeKernelDecomposition<T>& decomposition() const { return lkd_; }
  const WeightGenerator<T>& generator() const { return gen_; }
  const Conv2d<T>& pointwise3() const { return pw3_; }

  Var<T> operator()(const Var<T>& t, const Var<T>& g, FusionTrace<T>* trace = nullptr) const {
    require_rank(t.shape(), 4, "fusion LST input");
    require_rank(g.shape(), 4, "fusion guidance input");
    if (t.dim(1) != cfg_.lst_channels)
      throw ShapeError("fusion module expects " + std::to_string(cfg_.lst_channels) + " LST channels, got " +
                       to_string(t.shape()));
    if (g.dim(1) != cfg_.guid_channels)
      throw ShapeError("fusion module expects " + std::to_string(cfg_.guid_channels) + " guidance channels, got " +
                       to_string(g.shape()));
    if (g.dim(0) != t.dim(0) || g.dim(2) != t.dim(2) * cfg_.scale || g.dim(3) != t.dim(3) * cfg_.scale)
      throw ShapeError("fusion module: guidance " + to_string(g.shape()) + " is not x" + std::to_string(cfg_.scale) +
                       " of LST " + to_string(t.shape()));
    Var<T> x = up_(t);
    return from_upsampled(x, g, trace);
  }

  /// Runs everything after the up-projection, given X directly.
  Var<T> from_upsampled(const Var<T>& x, const Var<T>& g, FusionTrace<T>* trace = nullptr) const {
    FusionTrace<T> local;
    FusionTrace<T>& tr = trace ? *trace : local;
    tr.x = x;
    switch (cfg_.variant) {
      case FusionVariant::kBaseline:
        return down_(x);
      case FusionVariant::kMoCoLSK_SS:
        return down_(ops::concat(std::vector<Var<T>>{x, spatial_pathway(x, x, g, cfg_.modality_fusion ? g : x, tr)}));
      case FusionVariant::kMoCoLSK_Ex:
        return down_(ops::concat(std::vector<Var<T>>{x, spatial_pathway(g, x, g, x, tr)}));
      case FusionVariant::kMoCoLSK_CS:
        return down_(ops::concat(std::vector<Var<T>>{x, channel_pathway(x, g, tr)}));
      case FusionVariant::kSK_M:
        return down_(sk_pathway(ops::concat(std::vector<Var<T>>{x, g})));
      case FusionVariant::kLSK_M:
      case FusionVariant::kLSK_CS_M: {
        Var<T> xc = ops::concat(std::vector<Var<T>>{x, g});
        auto [u1, u2] = lkd_(xc);
        Var<T> s;
        if (cfg_.variant == FusionVariant::kLSK_M) {
          Var<T> masks = ops::sigmoid(squeeze_(spatial_attention_pool(u1, u2)));
          s = spatial_kernel_select(u1, u2, masks, pw3_);
        } else {
          s = channel_select(u1, u2, Var<T>());
        }
        return down_(ops::mul(xc, s));
      }
    }
    throw ValidationError("unknown fusion variant");
  }

 private:
  // lsk_in runs the selective-kernel pathway; (x, y) feed weight generation;
  // the selected features gate `gated`.
  Var<T> spatial_pathway(const Var<T>& lsk_in, const Var<T>& x, const Var<T>& y, const Var<T>& gated,
                         FusionTrace<T>& tr) const {
    auto [u1, u2] = lkd_(lsk_in);
    tr.u1 = u1;
    tr.u2 = u2;
    tr.sa = spatial_attention_pool(u1, u2);
    Var<T> logits;
    if (cfg_.dynamic) {
      Var<T> w = mcwg_weights(gen_, x, y, cfg_.dconv_kernel);
      if (zero_weights_) w = ops::scale(w, T(0));
      tr.weights = w;
      logits = modality_conditioned_conv(tr.sa, w);
    } else {
      logits = ops::conv2d(tr.sa, static_w_, Var<T>(), {1, cfg_.dconv_kernel / 2, 1, 1});
    }
    tr.masks = ops::sigmoid(logits);
    tr.s = spatial_kernel_select(u1, u2, tr.masks, pw3_);
    tr.z = modality_fuse(tr.s, gated);
    return tr.z;
  }

  Var<T> channel_select(const Var<T>& u1, const Var<T>& u2, const Var<T>& modality) const {
    Var<T> desc = ops::concat(std::vector<Var<T>>{ops::global_avg_pool(u1), ops::global_avg_pool(u2)});
    if (modality.defined()) desc = ops::add(desc, modality);
    Var<T> gates = selector_(desc);
    const int c = u1.dim(1);
    Var<T> sel = ops::add(ops::mul_channel(u1, ops::slice(gates, 0, c)), ops::mul_channel(u2, ops::slice(gates, c, c)));
    return pw3_(sel);
  }

  Var<T> channel_pathway(const Var<T>& x, const Var<T>& g, FusionTrace<T>& tr) const {
    auto [u1, u2] = lkd_(x);
    tr.u1 = u1;
    tr.u2 = u2;
    Var<T> w;
    if (cfg_.dynamic) {
      w = gen_(x, g);
      if (zero_weights_) w = ops::scale(w, T(0));
      tr.weights = w;
    }
    tr.s = channel_select(u1, u2, w);
    tr.z = modality_fuse(tr.s, cfg_.modality_fusion ? g : x);
    return tr.z;
  }

  Var<T> sk_pathway(const Var<T>& xc) const {
    Var<T> u1 = ops::relu(sk_b1_(xc));
    Var<T> u2 = ops::relu(sk_b2_(xc));
    Var<T> z = ops::relu(sk_fc_(ops::global_avg_pool(ops::add(u1, u2))));
    Var<T> la = sk_fa_(z), lb = sk_fb_(z);
    // Two-way softmax over branches.
    Var<T> a = ops::sigmoid(ops::sub(la, lb));
    Var<T> b = ops::sigmoid(ops::sub(lb, la));
    return ops::add(ops::mul_channel(u1, a), ops::mul_channel(u2, b));
  }

  MoCoLSKConfig cfg_;
  bool zero_weights_ = false;
  UpProjection<T> up_;
  DownProjection<T> down_;
  LargeKernelDecomposition<T> lkd_;
  Conv2d<T> pw3_, squeeze_;
  Var<T> static_w_;
  WeightGenerator<T> gen_;
  ChannelSelector<T> selector_;
  Conv2d<T> sk_b1_, sk_b2_;
  Linear<T> sk_fc_, sk_fa_, sk_fb_;
};

/// Builds a fusion module; the variant is taken from cfg.variant.
template <typename T>
FusionModule<T> build_fusion_variant(const Scope<T>& s, const MoCoLSKConfig& cfg) {
  return FusionModule<T>(s, cfg);
}

}  // namespace mocolsk
