// Copyright 2026 The mocolsk Authors
// SPDX-License-Identifier: Apache-2.0

// Differentiable primitives over Var<T>. Every op computes its forward value
// eagerly and, when gradients are wanted, records a closure that adds the
// vector-Jacobian product into its parents' gradient buffers.

#pragma once

#include <Eigen/Core>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "mocolsk/tensor.hpp"

namespace mocolsk::ops {

namespace detail {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;

template <typename T>
T* grad_of(Node<T>& n, std::size_t i) {
  auto& p = n.parents[i];
  return p->requires_grad ? p->grad_buffer().data() : nullptr;
}

inline void same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a != b) throw ShapeError(std::string(what) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

inline int conv_out(int in, int k, int stride, int pad, int dil) {
  return (in + 2 * pad - dil * (k - 1) - 1) / stride + 1;
}

// col[(c*k*k + i*k + j), oh*Wo + ow] = img[c, oh*s - p + i*d, ow*s - p + j*d]
template <typename T>
void im2col(const T* img, int C, int H, int W, int k, int s, int p, int d, int Ho, int Wo, T* col) {
  const std::size_t hw = static_cast<std::size_t>(Ho) * Wo;
  for (int c = 0; c < C; ++c) {
    const T* src = img + static_cast<std::size_t>(c) * H * W;
    for (int i = 0; i < k; ++i) {
      for (int j = 0; j < k; ++j) {
        T* dst = col + (static_cast<std::size_t>(c) * k * k + i * k + j) * hw;
        for (int oh = 0; oh < Ho; ++oh) {
          const int ih = oh * s - p + i * d;
          T* row = dst + static_cast<std::size_t>(oh) * Wo;
          if (ih < 0 || ih >= H) {
            std::fill(row, row + Wo, T(0));
            continue;
          }
          const T* srow = src + static_cast<std::size_t>(ih) * W;
          for (int ow = 0; ow < Wo; ++ow) {
            const int iw = ow * s - p + j * d;
            row[ow] = (iw >= 0 && iw < W) ? srow[iw] : T(0);
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters-adds columns back into the image.
template <typename T>
void col2im(const T* col, int C, int H, int W, int k, int s, int p, int d, int Ho, int Wo, T* img) {
  const std::size_t hw = static_cast<std::size_t>(Ho) * Wo;
  for (int c = 0; c < C; ++c) {
    T* dst = img + static_cast<std::size_t>(c) * H * W;
    for (int i = 0; i < k; ++i) {
      for (int j = 0; j < k; ++j) {
        const T* src = col + (static_cast<std::size_t>(c) * k * k + i * k + j) * hw;
        for (int oh = 0; oh < Ho; ++oh) {
          const int ih = oh * s - p + i * d;
          if (ih < 0 || ih >= H) continue;
          const T* row = src + static_cast<std::size_t>(oh) * Wo;
          T* drow = dst + static_cast<std::size_t>(ih) * W;
          for (int ow = 0; ow < Wo; ++ow) {
            const int iw = ow * s - p + j * d;
            if (iw >= 0 && iw < W) drow[iw] += row[ow];
          }
        }
      }
    }
  }
}

struct ConvGeom {
  int B, Cin, H, W, Cout, k, stride, pad, dil, groups, Ho, Wo;
  bool pointwise() const { return k == 1 && stride == 1 && pad == 0; }
};

// Grouped convolution core. weight_for(b) yields the (Cout, Cin/groups*k*k)
// row-major weight block used for sample b.
template <typename T, typename WeightFn>
void conv_forward(const ConvGeom& g, const T* x, WeightFn weight_for, T* out) {
  const int cg = g.Cin / g.groups, og = g.Cout / g.groups;
  const int kk = g.k * g.k;
  const std::size_t hw_in = static_cast<std::size_t>(g.H) * g.W, hw = static_cast<std::size_t>(g.Ho) * g.Wo;
  std::vector<T> col(g.pointwise() ? 0 : static_cast<std::size_t>(cg) * kk * hw);
  for (int b = 0; b < g.B; ++b) {
    const T* wb = weight_for(b);
    for (int gr = 0; gr < g.groups; ++gr) {
      const T* xin = x + (static_cast<std::size_t>(b) * g.Cin + gr * cg) * hw_in;
      const T* cptr = xin;
      if (!g.pointwise()) {
        im2col(xin, cg, g.H, g.W, g.k, g.stride, g.pad, g.dil, g.Ho, g.Wo, col.data());
        cptr = col.data();
      }
      CMapR<T> wm(wb + static_cast<std::size_t>(gr) * og * cg * kk, og, cg * kk);
      CMapR<T> cm(cptr, cg * kk, hw);
      MapR<T> om(out + (static_cast<std::size_t>(b) * g.Cout + gr * og) * hw, og, hw);
      om.noalias() = wm * cm;
    }
  }
}

template <typename T, typename WeightFn, typename WeightGradFn>
void conv_backward(const ConvGeom& g, const T* x, WeightFn weight_for, const T* gout, T* gx,
                   WeightGradFn wgrad_for) {
  const int cg = g.Cin / g.groups, og = g.Cout / g.groups;
  const int kk = g.k * g.k;
  const std::size_t hw_in = static_cast<std::size_t>(g.H) * g.W, hw = static_cast<std::size_t>(g.Ho) * g.Wo;
  std::vector<T> col(g.pointwise() ? 0 : static_cast<std::size_t>(cg) * kk * hw);
  std::vector<T> dcol(gx && !g.pointwise() ? static_cast<std::size_t>(cg) * kk * hw : 0);
  for (int b = 0; b < g.B; ++b) {
    T* gwb = wgrad_for(b);
    const T* wb = weight_for(b);
    for (int gr = 0; gr < g.groups; ++gr) {
      const std::size_t xoff = (static_cast<std::size_t>(b) * g.Cin + gr * cg) * hw_in;
      CMapR<T> go(gout + (static_cast<std::size_t>(b) * g.Cout + gr * og) * hw, og, hw);
      if (gwb) {
        const T* cptr = x + xoff;
        if (!g.pointwise()) {
          im2col(x + xoff, cg, g.H, g.W, g.k, g.stride, g.pad, g.dil, g.Ho, g.Wo, col.data());
          cptr = col.data();
        }
        CMapR<T> cm(cptr, cg * kk, hw);
        MapR<T> gw(gwb + static_cast<std::size_t>(gr) * og * cg * kk, og, cg * kk);
        gw.noalias() += go * cm.transpose();
      }
      if (gx) {
        CMapR<T> wm(wb + static_cast<std::size_t>(gr) * og * cg * kk, og, cg * kk);
        if (g.pointwise()) {
          MapR<T> gxm(gx + xoff, cg, hw);
          gxm.noalias() += wm.transpose() * go;
        } else {
          MapR<T> dc(dcol.data(), cg * kk, hw);
          dc.noalias() = wm.transpose() * go;
          col2im(dcol.data(), cg, g.H, g.W, g.k, g.stride, g.pad, g.dil, g.Ho, g.Wo, gx + xoff);
        }
      }
    }
  }
}

// Depthwise fast path (groups == Cin == Cout).
template <typename T>
void depthwise_forward(const ConvGeom& g, const T* x, const T* w, T* out) {
  for (int b = 0; b < g.B; ++b)
    for (int c = 0; c < g.Cin; ++c) {
      const T* xin = x + (static_cast<std::size_t>(b) * g.Cin + c) * g.H * g.W;
      const T* wc = w + static_cast<std::size_t>(c) * g.k * g.k;
      T* o = out + (static_cast<std::size_t>(b) * g.Cout + c) * g.Ho * g.Wo;
      std::fill(o, o + static_cast<std::size_t>(g.Ho) * g.Wo, T(0));
      for (int i = 0; i < g.k; ++i)
        for (int j = 0; j < g.k; ++j) {
          const T wv = wc[i * g.k + j];
          for (int oh = 0; oh < g.Ho; ++oh) {
            const int ih = oh * g.stride - g.pad + i * g.dil;
            if (ih < 0 || ih >= g.H) continue;
            const T* xr = xin + static_cast<std::size_t>(ih) * g.W;
            T* orow = o + static_cast<std::size_t>(oh) * g.Wo;
            for (int ow = 0; ow < g.Wo; ++ow) {
              const int iw = ow * g.stride - g.pad + j * g.dil;
              if (iw >= 0 && iw < g.W) orow[ow] += wv * xr[iw];
            }
          }
        }
    }
}

template <typename T>
void depthwise_backward(const ConvGeom& g, const T* x, const T* w, const T* gout, T* gx, T* gw) {
  for (int b = 0; b < g.B; ++b)
    for (int c = 0; c < g.Cin; ++c) {
      const std::size_t xo = (static_cast<std::size_t>(b) * g.Cin + c) * g.H * g.W;
      const T* go = gout + (static_cast<std::size_t>(b) * g.Cout + c) * g.Ho * g.Wo;
      const T* wc = w + static_cast<std::size_t>(c) * g.k * g.k;
      for (int i = 0; i < g.k; ++i)
        for (int j = 0; j < g.k; ++j) {
          const T wv = wc[i * g.k + j];
          T acc = T(0);
          for (int oh = 0; oh < g.Ho; ++oh) {
            const int ih = oh * g.stride - g.pad + i * g.dil;
            if (ih < 0 || ih >= g.H) continue;
            const T* gr = go + static_cast<std::size_t>(oh) * g.Wo;
            const std::size_t rowoff = xo + static_cast<std::size_t>(ih) * g.W;
            for (int ow = 0; ow < g.Wo; ++ow) {
              const int iw = ow * g.stride - g.pad + j * g.dil;
              if (iw < 0 || iw >= g.W) continue;
              if (gw) acc += gr[ow] * x[rowoff + iw];
              if (gx) gx[rowoff + iw] += wv * gr[ow];
            }
          }
          if (gw) gw[static_cast<std::size_t>(c) * g.k * g.k + i * g.k + j] += acc;
        }
    }
}

template <typename T>
void add_bias(T* out, const T* bias, int B, int C, std::size_t hw) {
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      T* o = out + (static_cast<std::size_t>(b) * C + c) * hw;
      const T v = bias[c];
      for (std::size_t i = 0; i < hw; ++i) o[i] += v;
    }
}

template <typename T>
void bias_grad(const T* gout, T* gb, int B, int C, std::size_t hw) {
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const T* g = gout + (static_cast<std::size_t>(b) * C + c) * hw;
      T acc = T(0);
      for (std::size_t i = 0; i < hw; ++i) acc += g[i];
      gb[c] += acc;
    }
}

}  // namespace detail

struct Conv2dOptions {
  int stride = 1;
  int padding = 0;
  int dilation = 1;
  int groups = 1;
};

/// 2-D cross-correlation. x: (B,Cin,H,W); weight: (Cout, Cin/groups, k, k);
/// bias: (Cout) or undefined.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, Conv2dOptions o = {}) {
  require_rank(x.shape(), 4, "conv2d input");
  require_rank(weight.shape(), 4, "conv2d weight");
  detail::ConvGeom g{};
  g.B = x.dim(0);
  g.Cin = x.dim(1);
  g.H = x.dim(2);
  g.W = x.dim(3);
  g.Cout = weight.dim(0);
  g.k = weight.dim(2);
  g.stride = o.stride;
  g.pad = o.padding;
  g.dil = o.dilation;
  g.groups = o.groups;
  if (weight.dim(3) != g.k) throw ShapeError("conv2d: only square kernels are supported");
  if (g.Cin % g.groups || g.Cout % g.groups || weight.dim(1) != g.Cin / g.groups)
    throw ShapeError("conv2d: channel mismatch, input " + to_string(x.shape()) + " weight " +
                     to_string(weight.shape()));
  if (bias.defined() && bias.size() != static_cast<std::size_t>(g.Cout))
    throw ShapeError("conv2d: bias size mismatch");
  g.Ho = detail::conv_out(g.H, g.k, g.stride, g.pad, g.dil);
  g.Wo = detail::conv_out(g.W, g.k, g.stride, g.pad, g.dil);
  if (g.Ho < 1 || g.Wo < 1) throw ShapeError("conv2d: input smaller than kernel extent");
  const bool depthwise = g.groups == g.Cin && g.Cout == g.Cin && g.groups > 1;

  Tensor<T> out({g.B, g.Cout, g.Ho, g.Wo});
  const T* xd = x.value().data.data();
  const T* wd = weight.value().data.data();
  if (depthwise)
    detail::depthwise_forward(g, xd, wd, out.data.data());
  else
    detail::conv_forward(g, xd, [wd](int) { return wd; }, out.data.data());
  const std::size_t hw = static_cast<std::size_t>(g.Ho) * g.Wo;
  if (bias.defined()) detail::add_bias(out.data.data(), bias.value().data.data(), g.B, g.Cout, hw);

  std::vector<Var<T>> parents{x, weight};
  if (bias.defined()) parents.push_back(bias);
  return make_result<T>(std::move(out), std::move(parents), [g, depthwise, hw](Node<T>& n) {
    const T* xd = n.parents[0]->value.data.data();
    const T* wd = n.parents[1]->value.data.data();
    T* gx = detail::grad_of(n, 0);
    T* gw = detail::grad_of(n, 1);
    if (depthwise)
      detail::depthwise_backward(g, xd, wd, n.grad.data(), gx, gw);
    else
      detail::conv_backward(g, xd, [wd](int) { return wd; }, n.grad.data(), gx, [gw](int) { return gw; });
    if (n.parents.size() > 2)
      if (T* gb = detail::grad_of(n, 2)) detail::bias_grad(n.grad.data(), gb, g.B, g.Cout, hw);
  });
}

/// Transposed convolution (groups = 1). weight: (Cin, Cout, k, k).
/// Output size (H-1)*stride - 2*padding + k.
template <typename T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride, int padding) {
  require_rank(x.shape(), 4, "conv_transpose2d input");
  require_rank(weight.shape(), 4, "conv_transpose2d weight");
  const int B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (weight.dim(0) != Cin) throw ShapeError("conv_transpose2d: channel mismatch");
  const int Cout = weight.dim(1), k = weight.dim(2);
  const int Ho = (H - 1) * stride - 2 * padding + k, Wo = (W - 1) * stride - 2 * padding + k;
  if (Ho < 1 || Wo < 1) throw ShapeError("conv_transpose2d: empty output");
  // Column grid of the output image must coincide with the input grid.
  if (detail::conv_out(Ho, k, stride, padding, 1) != H || detail::conv_out(Wo, k, stride, padding, 1) != W)
    throw ShapeError("conv_transpose2d: inconsistent geometry");
  const std::size_t hw = static_cast<std::size_t>(H) * W, ohw = static_cast<std::size_t>(Ho) * Wo;
  const int ck = Cout * k * k;

  Tensor<T> out({B, Cout, Ho, Wo});
  {
    std::vector<T> col(static_cast<std::size_t>(ck) * hw);
    detail::CMapR<T> wm(weight.value().data.data(), Cin, ck);
    for (int b = 0; b < B; ++b) {
      detail::CMapR<T> xm(x.value().data.data() + static_cast<std::size_t>(b) * Cin * hw, Cin, hw);
      detail::MapR<T> cm(col.data(), ck, hw);
      cm.noalias() = wm.transpose() * xm;
      detail::col2im(col.data(), Cout, Ho, Wo, k, stride, padding, 1, H, W,
                     out.data.data() + static_cast<std::size_t>(b) * Cout * ohw);
    }
  }
  if (bias.defined()) detail::add_bias(out.data.data(), bias.value().data.data(), B, Cout, ohw);

  std::vector<Var<T>> parents{x, weight};
  if (bias.defined()) parents.push_back(bias);
  return make_result<T>(std::move(out), std::move(parents), [=](Node<T>& n) {
    T* gx = detail::grad_of(n, 0);
    T* gw = detail::grad_of(n, 1);
    const T* xd = n.parents[0]->value.data.data();
    detail::CMapR<T> wm(n.parents[1]->value.data.data(), Cin, ck);
    std::vector<T> dcol(static_cast<std::size_t>(ck) * hw);
    for (int b = 0; b < B; ++b) {
      detail::im2col(n.grad.data() + static_cast<std::size_t>(b) * Cout * ohw, Cout, Ho, Wo, k, stride, padding, 1,
                     H, W, dcol.data());
      detail::CMapR<T> dc(dcol.data(), ck, hw);
      if (gx) {
        detail::MapR<T> gxm(gx + static_cast<std::size_t>(b) * Cin * hw, Cin, hw);
        gxm.noalias() += wm * dc;
      }
      if (gw) {
        detail::CMapR<T> xm(xd + static_cast<std::size_t>(b) * Cin * hw, Cin, hw);
        detail::MapR<T> gwm(gw, Cin, ck);
        gwm.noalias() += xm * dc.transpose();
      }
    }
    if (n.parents.size() > 2)
      if (T* gb = detail::grad_of(n, 2)) detail::bias_grad(n.grad.data(), gb, B, Cout, ohw);
  });
}

/// Per-sample convolution: sample b is convolved with its own kernel bank
/// weights[b] laid out as (Cout, Cin, k, k). Stride 1, same padding, no bias.
template <typename T>
Var<T> dynamic_conv2d(const Var<T>& x, const Var<T>& weights, int out_channels, int k) {
  require_rank(x.shape(), 4, "dynamic_conv2d input");
  if (k % 2 == 0) throw ValidationError("dynamic_conv2d: kernel size must be odd, got " + std::to_string(k));
  detail::ConvGeom g{};
  g.B = x.dim(0);
  g.Cin = x.dim(1);
  g.H = x.dim(2);
  g.W = x.dim(3);
  g.Cout = out_channels;
  g.k = k;
  g.stride = 1;
  g.pad = k / 2;
  g.dil = 1;
  g.groups = 1;
  g.Ho = g.H;
  g.Wo = g.W;
  const std::size_t per = static_cast<std::size_t>(g.Cout) * g.Cin * k * k;
  if (weights.shape().empty() || weights.dim(0) != g.B)
    throw ShapeError("dynamic_conv2d: batch mismatch between input " + to_string(x.shape()) + " and weights " +
                     to_string(weights.shape()));
  if (weights.size() != per * g.B) throw ShapeError("dynamic_conv2d: weight bank size mismatch");

  Tensor<T> out({g.B, g.Cout, g.H, g.W});
  const T* wd = weights.value().data.data();
  detail::conv_forward(g, x.value().data.data(), [wd, per](int b) { return wd + b * per; }, out.data.data());
  return make_result<T>(std::move(out), {x, weights}, [g, per](Node<T>& n) {
    const T* wd = n.parents[1]->value.data.data();
    T* gx = detail::grad_of(n, 0);
    T* gw = detail::grad_of(n, 1);
    detail::conv_backward(
        g, n.parents[0]->value.data.data(), [wd, per](int b) { return wd + b * per; }, n.grad.data(), gx,
        [gw, per](int b) { return gw ? gw + b * per : nullptr; });
  });
}

/// y = x W^T + b. x: (B, In); weight: (Out, In); bias: (Out) or undefined.
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  require_rank(x.shape(), 2, "linear input");
  require_rank(weight.shape(), 2, "linear weight");
  const int B = x.dim(0), In = x.dim(1), Out = weight.dim(0);
  if (weight.dim(1) != In)
    throw ShapeError("linear: input " + to_string(x.shape()) + " vs weight " + to_string(weight.shape()));
  Tensor<T> out({B, Out});
  detail::CMapR<T> xm(x.value().data.data(), B, In);
  detail::CMapR<T> wm(weight.value().data.data(), Out, In);
  detail::MapR<T> om(out.data.data(), B, Out);
  om.noalias() = xm * wm.transpose();
  if (bias.defined()) {
    if (bias.size() != static_cast<std::size_t>(Out)) throw ShapeError("linear: bias size mismatch");
    for (int b = 0; b < B; ++b)
      for (int o = 0; o < Out; ++o) out.data[static_cast<std::size_t>(b) * Out + o] += bias.value().data[o];
  }
  std::vector<Var<T>> parents{x, weight};
  if (bias.defined()) parents.push_back(bias);
  return make_result<T>(std::move(out), std::move(parents), [B, In, Out](Node<T>& n) {
    detail::CMapR<T> go(n.grad.data(), B, Out);
    if (T* gx = detail::grad_of(n, 0)) {
      detail::CMapR<T> wm(n.parents[1]->value.data.data(), Out, In);
      detail::MapR<T>(gx, B, In).noalias() += go * wm;
    }
    if (T* gw = detail::grad_of(n, 1)) {
      detail::CMapR<T> xm(n.parents[0]->value.data.data(), B, In);
      detail::MapR<T>(gw, Out, In).noalias() += go.transpose() * xm;
    }
    if (n.parents.size() > 2)
      if (T* gb = detail::grad_of(n, 2))
        for (int b = 0; b < B; ++b)
          for (int o = 0; o < Out; ++o) gb[o] += n.grad[static_cast<std::size_t>(b) * Out + o];
  });
}

/// Per-sample matrix-vector product. m: (B, rows*cols) read as (B, rows, cols);
/// v: (B, cols). Returns (B, rows).
template <typename T>
Var<T> batched_matvec(const Var<T>& m, const Var<T>& v, int rows) {
  require_rank(v.shape(), 2, "batched_matvec vector");
  const int B = v.dim(0), cols = v.dim(1);
  if (m.dim(0) != B || m.size() != static_cast<std::size_t>(B) * rows * cols)
    throw ShapeError("batched_matvec: matrix " + to_string(m.shape()) + " incompatible with vector " +
                     to_string(v.shape()));
  Tensor<T> out({B, rows});
  const T* md = m.value().data.data();
  const T* vd = v.value().data.data();
  for (int b = 0; b < B; ++b)
    for (int r = 0; r < rows; ++r) {
      const T* mr = md + (static_cast<std::size_t>(b) * rows + r) * cols;
      T acc = T(0);
      for (int c = 0; c < cols; ++c) acc += mr[c] * vd[static_cast<std::size_t>(b) * cols + c];
      out.data[static_cast<std::size_t>(b) * rows + r] = acc;
    }
  return make_result<T>(std::move(out), {m, v}, [B, rows, cols](Node<T>& n) {
    const T* md = n.parents[0]->value.data.data();
    const T* vd = n.parents[1]->value.data.data();
    T* gm = detail::grad_of(n, 0);
    T* gv = detail::grad_of(n, 1);
    for (int b = 0; b < B; ++b)
      for (int r = 0; r < rows; ++r) {
        const T g = n.grad[static_cast<std::size_t>(b) * rows + r];
        const std::size_t mo = (static_cast<std::size_t>(b) * rows + r) * cols;
        for (int c = 0; c < cols; ++c) {
          if (gm) gm[mo + c] += g * vd[static_cast<std::size_t>(b) * cols + c];
          if (gv) gv[static_cast<std::size_t>(b) * cols + c] += g * md[mo + c];
        }
      }
  });
}

// ---------------------------------------------------------------------------
// Elementwise.

namespace detail {
template <typename T, typename F, typename DF>
Var<T> unary(const Var<T>& x, F f, DF df) {
  Tensor<T> out(x.shape());
  const auto& xv = x.value().data;
  for (std::size_t i = 0; i < xv.size(); ++i) out.data[i] = f(xv[i]);
  return make_result<T>(std::move(out), {x}, [df](Node<T>& n) {
    T* gx = grad_of(n, 0);
    if (!gx) return;
    const auto& xv = n.parents[0]->value.data;
    for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += n.grad[i] * df(xv[i], n.value.data[i]);
  });
}

template <typename T>
void record_sides(const Tensor<T>& x, T at) {
  if (!mocolsk::detail::branches_traced()) return;
  std::uint64_t word = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    word = (word << 1) | (x.data[i] > at ? 1u : 0u);
    if (i % 64 == 63) mocolsk::detail::record_branch(word), word = 0;
  }
  mocolsk::detail::record_branch(word);
}
}  // namespace detail

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = a.value().data[i] + b.value().data[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& n) {
    for (std::size_t p = 0; p < 2; ++p)
      if (T* g = detail::grad_of(n, p))
        for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::same_shape(a.shape(), b.shape(), "sub");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = a.value().data[i] - b.value().data[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& n) {
    if (T* g = detail::grad_of(n, 0))
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
    if (T* g = detail::grad_of(n, 1))
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] -= n.grad[i];
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::same_shape(a.shape(), b.shape(), "mul");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = a.value().data[i] * b.value().data[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& n) {
    const auto& av = n.parents[0]->value.data;
    const auto& bv = n.parents[1]->value.data;
    if (T* g = detail::grad_of(n, 0))
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i] * bv[i];
    if (T* g = detail::grad_of(n, 1))
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i] * av[i];
  });
}

template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  detail::same_shape(a.shape(), b.shape(), "div");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = a.value().data[i] / b.value().data[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& n) {
    const auto& bv = n.parents[1]->value.data;
    if (T* g = detail::grad_of(n, 0))
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i] / bv[i];
    if (T* g = detail::grad_of(n, 1))
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] -= n.grad[i] * n.value.data[i] / bv[i];
  });
}

/// a*x + b with constant scalars.
template <typename T>
Var<T> affine(const Var<T>& x, T a, T b) {
  return detail::unary<T>(x, [a, b](T v) { return a * v + b; }, [a](T, T) { return a; });
}

template <typename T>
Var<T> scale(const Var<T>& x, T a) {
  return affine<T>(x, a, T(0));
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  detail::record_sides(x.value(), T(0));
  return detail::unary<T>(x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope) {
  detail::record_sides(x.value(), T(0));
  return detail::unary<T>(
      x, [slope](T v) { return v > T(0) ? v : slope * v; }, [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  return detail::unary<T>(
      x, [](T v) { return T(1) / (T(1) + std::exp(-v)); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> abs(const Var<T>& x) {
  detail::record_sides(x.value(), T(0));
  return detail::unary<T>(
      x, [](T v) { return std::abs(v); }, [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Var<T> square(const Var<T>& x) {
  return detail::unary<T>(x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

/// x^p for x > 0 (callers clamp first).
template <typename T>
Var<T> pow_scalar(const Var<T>& x, T p) {
  return detail::unary<T>(
      x, [p](T v) { return std::pow(v, p); },
      [p](T v, T y) { return v > T(0) ? p * y / v : T(0); });
}

/// Clamps from below at lo; gradient passes only where x > lo.
template <typename T>
Var<T> clamp_min(const Var<T>& x, T lo) {
  detail::record_sides(x.value(), lo);
  return detail::unary<T>(
      x, [lo](T v) { return v > lo ? v : lo; }, [lo](T v, T) { return v > lo ? T(1) : T(0); });
}

/// Parametric ReLU with a single learnable slope.
template <typename T>
Var<T> prelu(const Var<T>& x, const Var<T>& alpha) {
  if (alpha.size() != 1) throw ShapeError("prelu: expects a single slope");
  detail::record_sides(x.value(), T(0));
  const T a = alpha.value().data[0];
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = x.value().data[i];
    out.data[i] = v > T(0) ? v : a * v;
  }
  return make_result<T>(std::move(out), {x, alpha}, [](Node<T>& n) {
    const auto& xv = n.parents[0]->value.data;
    const T a = n.parents[1]->value.data[0];
    T* gx = detail::grad_of(n, 0);
    T* ga = detail::grad_of(n, 1);
    T acc = T(0);
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const bool pos = xv[i] > T(0);
      if (gx) gx[i] += n.grad[i] * (pos ? T(1) : a);
      if (!pos) acc += n.grad[i] * xv[i];
    }
    if (ga) ga[0] += acc;
  });
}

// ---------------------------------------------------------------------------
// Broadcasting products for gating.

/// x: (B,C,H,W), gate: (B,C) -> x * gate[b,c].
template <typename T>
Var<T> mul_channel(const Var<T>& x, const Var<T>& gate) {
  require_rank(x.shape(), 4, "mul_channel input");
  const int B = x.dim(0), C = x.dim(1);
  const std::size_t hw = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  if (gate.size() != static_cast<std::size_t>(B) * C || gate.dim(0) != B)
    throw ShapeError("mul_channel: gate " + to_string(gate.shape()) + " vs input " + to_string(x.shape()));
  Tensor<T> out(x.shape());
  for (std::size_t bc = 0; bc < static_cast<std::size_t>(B) * C; ++bc) {
    const T gv = gate.value().data[bc];
    for (std::size_t i = 0; i < hw; ++i) out.data[bc * hw + i] = x.value().data[bc * hw + i] * gv;
  }
  return make_result<T>(std::move(out), {x, gate}, [B, C, hw](Node<T>& n) {
    const auto& xv = n.parents[0]->value.data;
    const auto& gv = n.parents[1]->value.data;
    T* gx = detail::grad_of(n, 0);
    T* gg = detail::grad_of(n, 1);
    for (std::size_t bc = 0; bc < static_cast<std::size_t>(B) * C; ++bc) {
      T acc = T(0);
      for (std::size_t i = 0; i < hw; ++i) {
        if (gx) gx[bc * hw + i] += n.grad[bc * hw + i] * gv[bc];
        acc += n.grad[bc * hw + i] * xv[bc * hw + i];
      }
      if (gg) gg[bc] += acc;
    }
  });
}

/// x: (B,C,H,W), map: (B,1,H,W) -> x * map[b,0] for every channel.
template <typename T>
Var<T> mul_spatial(const Var<T>& x, const Var<T>& map) {
  require_rank(x.shape(), 4, "mul_spatial input");
  require_rank(map.shape(), 4, "mul_spatial map");
  const int B = x.dim(0), C = x.dim(1);
  const std::size_t hw = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  if (map.dim(0) != B || map.dim(1) != 1 || map.dim(2) != x.dim(2) || map.dim(3) != x.dim(3))
    throw ShapeError("mul_spatial: map " + to_string(map.shape()) + " vs input " + to_string(x.shape()));
  Tensor<T> out(x.shape());
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (std::size_t i = 0; i < hw; ++i)
        out.data[(static_cast<std::size_t>(b) * C + c) * hw + i] =
            x.value().data[(static_cast<std::size_t>(b) * C + c) * hw + i] * map.value().data[b * hw + i];
  return make_result<T>(std::move(out), {x, map}, [B, C, hw](Node<T>& n) {
    const auto& xv = n.parents[0]->value.data;
    const auto& mv = n.parents[1]->value.data;
    T* gx = detail::grad_of(n, 0);
    T* gm = detail::grad_of(n, 1);
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c)
        for (std::size_t i = 0; i < hw; ++i) {
          const std::size_t idx = (static_cast<std::size_t>(b) * C + c) * hw + i;
          if (gx) gx[idx] += n.grad[idx] * mv[b * hw + i];
          if (gm) gm[b * hw + i] += n.grad[idx] * xv[idx];
        }
  });
}

// ---------------------------------------------------------------------------
// Structural.

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  if (numel(shape) != x.size())
    throw ShapeError("reshape: " + to_string(x.shape()) + " -> " + to_string(shape));
  Tensor<T> out(std::move(shape), x.value().data);
  return make_result<T>(std::move(out), {x}, [](Node<T>& n) {
    if (T* g = detail::grad_of(n, 0))
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
  });
}

/// Concatenates along dimension 1. All inputs share dim 0 and the trailing
/// dims past 1.
template <typename T>
Var<T> concat(const std::vector<Var<T>>& xs) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  const Shape& s0 = xs[0].shape();
  if (s0.size() < 2) throw ShapeError("concat: rank must be >= 2");
  std::size_t inner = 1;
  for (std::size_t d = 2; d < s0.size(); ++d) inner *= s0[d];
  int total = 0;
  std::vector<int> widths;
  for (const auto& x : xs) {
    const Shape& s = x.shape();
    bool ok = s.size() == s0.size() && s[0] == s0[0];
    for (std::size_t d = 2; ok && d < s.size(); ++d) ok = s[d] == s0[d];
    if (!ok) throw ShapeError("concat: incompatible shapes " + to_string(s0) + " and " + to_string(s));
    widths.push_back(s[1]);
    total += s[1];
  }
  Shape os = s0;
  os[1] = total;
  const int B = s0[0];
  Tensor<T> out(os);
  int off = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    for (int b = 0; b < B; ++b) {
      const T* src = xs[k].value().data.data() + static_cast<std::size_t>(b) * widths[k] * inner;
      std::copy(src, src + widths[k] * inner, out.data.data() + (static_cast<std::size_t>(b) * total + off) * inner);
    }
    off += widths[k];
  }
  return make_result<T>(std::move(out), xs, [widths, total, inner, B](Node<T>& n) {
    int off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      if (T* g = detail::grad_of(n, k))
        for (int b = 0; b < B; ++b) {
          const T* src = n.grad.data() + (static_cast<std::size_t>(b) * total + off) * inner;
          T* dst = g + static_cast<std::size_t>(b) * widths[k] * inner;
          for (std::size_t i = 0; i < widths[k] * inner; ++i) dst[i] += src[i];
        }
      off += widths[k];
    }
  });
}

/// Slices [start, start+count) along dimension 1.
template <typename T>
Var<T> slice(const Var<T>& x, int start, int count) {
  const Shape& s = x.shape();
  if (s.size() < 2 || start < 0 || count < 1 || start + count > s[1])
    throw ShapeError("slice: range [" + std::to_string(start) + "," + std::to_string(start + count) +
                     ") out of bounds for " + to_string(s));
  std::size_t inner = 1;
  for (std::size_t d = 2; d < s.size(); ++d) inner *= s[d];
  Shape os = s;
  os[1] = count;
  const int B = s[0], C = s[1];
  Tensor<T> out(os);
  for (int b = 0; b < B; ++b) {
    const T* src = x.value().data.data() + (static_cast<std::size_t>(b) * C + start) * inner;
    std::copy(src, src + count * inner, out.data.data() + static_cast<std::size_t>(b) * count * inner);
  }
  return make_result<T>(std::move(out), {x}, [B, C, start, count, inner](Node<T>& n) {
    if (T* g = detail::grad_of(n, 0))
      for (int b = 0; b < B; ++b) {
        const T* src = n.grad.data() + static_cast<std::size_t>(b) * count * inner;
        T* dst = g + (static_cast<std::size_t>(b) * C + start) * inner;
        for (std::size_t i = 0; i < count * inner; ++i) dst[i] += src[i];
      }
  });
}

// ---------------------------------------------------------------------------
// Reductions and pooling.

template <typename T>
Var<T> sum(const Var<T>& x) {
  T acc = T(0);
  for (T v : x.value().data) acc += v;
  return make_result<T>(Tensor<T>({1}, std::vector<T>{acc}), {x}, [](Node<T>& n) {
    if (T* g = detail::grad_of(n, 0)) {
      const T gv = n.grad[0];
      for (std::size_t i = 0; i < n.parents[0]->value.size(); ++i) g[i] += gv;
    }
  });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  return scale<T>(sum(x), T(1) / static_cast<T>(x.size()));
}

/// Per-pixel mean over channels: (B,C,H,W) -> (B,1,H,W).
template <typename T>
Var<T> channel_mean(const Var<T>& x) {
  require_rank(x.shape(), 4, "channel_mean");
  const int B = x.dim(0), C = x.dim(1);
  const std::size_t hw = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  Tensor<T> out({B, 1, x.dim(2), x.dim(3)});
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (std::size_t i = 0; i < hw; ++i)
        out.data[b * hw + i] += x.value().data[(static_cast<std::size_t>(b) * C + c) * hw + i];
  for (auto& v : out.data) v /= static_cast<T>(C);
  return make_result<T>(std::move(out), {x}, [B, C, hw](Node<T>& n) {
    if (T* g = detail::grad_of(n, 0))
      for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
          for (std::size_t i = 0; i < hw; ++i)
            g[(static_cast<std::size_t>(b) * C + c) * hw + i] += n.grad[b * hw + i] / static_cast<T>(C);
  });
}

/// Per-pixel max over channels: (B,C,H,W) -> (B,1,H,W). Ties route to the
/// lowest channel index.
template <typename T>
Var<T> channel_max(const Var<T>& x) {
  require_rank(x.shape(), 4, "channel_max");
  const int B = x.dim(0), C = x.dim(1);
  const std::size_t hw = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  Tensor<T> out({B, 1, x.dim(2), x.dim(3)});
  std::vector<int> arg(static_cast<std::size_t>(B) * hw, 0);
  for (int b = 0; b < B; ++b)
    for (std::size_t i = 0; i < hw; ++i) {
      T best = x.value().data[static_cast<std::size_t>(b) * C * hw + i];
      int bi = 0;
      for (int c = 1; c < C; ++c) {
        const T v = x.value().data[(static_cast<std::size_t>(b) * C + c) * hw + i];
        if (v > best) best = v, bi = c;
      }
      out.data[b * hw + i] = best;
      arg[b * hw + i] = bi;
    }
  if (mocolsk::detail::branches_traced())
    for (int a : arg) mocolsk::detail::record_branch(static_cast<std::uint64_t>(a));
  return make_result<T>(std::move(out), {x}, [B, C, hw, arg = std::move(arg)](Node<T>& n) {
    if (T* g = detail::grad_of(n, 0))
      for (int b = 0; b < B; ++b)
        for (std::size_t i = 0; i < hw; ++i)
          g[(static_cast<std::size_t>(b) * C + arg[b * hw + i]) * hw + i] += n.grad[b * hw + i];
  });
}

/// Adaptive average pooling to bins x bins cells with the usual
/// floor/ceil cell edges: (B,C,H,W) -> (B,C,bins,bins).
template <typename T>
Var<T> adaptive_avg_pool(const Var<T>& x, int bins) {
  require_rank(x.shape(), 4, "adaptive_avg_pool");
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H < bins || W < bins)
    throw ShapeError("adaptive_avg_pool: spatial size " + std::to_string(H) + "x" + std::to_string(W) +
                     " smaller than " + std::to_string(bins) + " bins");
  auto lo = [](int i, int n, int b) { return (i * n) / b; };
  auto hi = [](int i, int n, int b) { return ((i + 1) * n + b - 1) / b; };
  Tensor<T> out({B, C, bins, bins});
  const std::size_t hw = static_cast<std::size_t>(H) * W;
  for (int bc = 0; bc < B * C; ++bc)
    for (int i = 0; i < bins; ++i)
      for (int j = 0; j < bins; ++j) {
        const int h0 = lo(i, H, bins), h1 = hi(i, H, bins), w0 = lo(j, W, bins), w1 = hi(j, W, bins);
        T acc = T(0);
        for (int h = h0; h < h1; ++h)
          for (int w = w0; w < w1; ++w) acc += x.value().data[bc * hw + static_cast<std::size_t>(h) * W + w];
        out.data[(static_cast<std::size_t>(bc) * bins + i) * bins + j] = acc / static_cast<T>((h1 - h0) * (w1 - w0));
      }
  return make_result<T>(std::move(out), {x}, [=](Node<T>& n) {
    T* g = detail::grad_of(n, 0);
    if (!g) return;
    for (int bc = 0; bc < B * C; ++bc)
      for (int i = 0; i < bins; ++i)
        for (int j = 0; j < bins; ++j) {
          const int h0 = lo(i, H, bins), h1 = hi(i, H, bins), w0 = lo(j, W, bins), w1 = hi(j, W, bins);
          const T gv =
              n.grad[(static_cast<std::size_t>(bc) * bins + i) * bins + j] / static_cast<T>((h1 - h0) * (w1 - w0));
          for (int h = h0; h < h1; ++h)
            for (int w = w0; w < w1; ++w) g[bc * hw + static_cast<std::size_t>(h) * W + w] += gv;
        }
  });
}

/// Global average pooling: (B,C,H,W) -> (B,C).
template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  require_rank(x.shape(), 4, "global_avg_pool");
  return reshape(adaptive_avg_pool(x, 1), Shape{x.dim(0), x.dim(1)});
}

/// Global max pooling: (B,C,H,W) -> (B,C).
template <typename T>
Var<T> global_max_pool(const Var<T>& x) {
  require_rank(x.shape(), 4, "global_max_pool");
  const int B = x.dim(0), C = x.dim(1);
  const std::size_t hw = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  Tensor<T> out({B, C});
  std::vector<std::size_t> arg(static_cast<std::size_t>(B) * C);
  for (std::size_t bc = 0; bc < arg.size(); ++bc) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < hw; ++i)
      if (x.value().data[bc * hw + i] > x.value().data[bc * hw + best]) best = i;
    arg[bc] = best;
    out.data[bc] = x.value().data[bc * hw + best];
  }
  if (mocolsk::detail::branches_traced())
    for (std::size_t a : arg) mocolsk::detail::record_branch(a);
  return make_result<T>(std::move(out), {x}, [hw, arg = std::move(arg)](Node<T>& n) {
    if (T* g = detail::grad_of(n, 0))
      for (std::size_t bc = 0; bc < arg.size(); ++bc) g[bc * hw + arg[bc]] += n.grad[bc];
  });
}

/// 2x2 average pooling with stride 2; odd trailing rows/cols are dropped.
template <typename T>
Var<T> avg_pool2(const Var<T>& x) {
  require_rank(x.shape(), 4, "avg_pool2");
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Ho = H / 2, Wo = W / 2;
  if (Ho < 1 || Wo < 1) throw ShapeError("avg_pool2: input too small");
  Tensor<T> out({B, C, Ho, Wo});
  for (int bc = 0; bc < B * C; ++bc)
    for (int i = 0; i < Ho; ++i)
      for (int j = 0; j < Wo; ++j) {
        const T* p = x.value().data.data() + static_cast<std::size_t>(bc) * H * W;
        out.data[(static_cast<std::size_t>(bc) * Ho + i) * Wo + j] =
            (p[(2 * i) * W + 2 * j] + p[(2 * i) * W + 2 * j + 1] + p[(2 * i + 1) * W + 2 * j] +
             p[(2 * i + 1) * W + 2 * j + 1]) /
            T(4);
      }
  return make_result<T>(std::move(out), {x}, [=](Node<T>& n) {
    T* g = detail::grad_of(n, 0);
    if (!g) return;
    for (int bc = 0; bc < B * C; ++bc)
      for (int i = 0; i < Ho; ++i)
        for (int j = 0; j < Wo; ++j) {
          const T gv = n.grad[(static_cast<std::size_t>(bc) * Ho + i) * Wo + j] / T(4);
          T* p = g + static_cast<std::size_t>(bc) * H * W;
          p[(2 * i) * W + 2 * j] += gv;
          p[(2 * i) * W + 2 * j + 1] += gv;
          p[(2 * i + 1) * W + 2 * j] += gv;
          p[(2 * i + 1) * W + 2 * j + 1] += gv;
        }
  });
}

// ---------------------------------------------------------------------------
// Bicubic upsampling (Keys kernel, a = -0.5, half-pixel centres, clamped
// borders). Linear in the input, so the backward pass is the transpose.

namespace detail {
template <typename T>
T keys_cubic(T x, T a) {
  x = std::abs(x);
  if (x <= T(1)) return ((a + T(2)) * x - (a + T(3))) * x * x + T(1);
  if (x < T(2)) return ((a * x - T(5) * a) * x + T(8) * a) * x - T(4) * a;
  return T(0);
}

struct Taps {
  std::vector<int> idx;  // 4 per output position
  std::vector<double> w;
};

inline Taps bicubic_taps(int in, int scale) {
  const int out = in * scale;
  Taps t;
  t.idx.resize(static_cast<std::size_t>(out) * 4);
  t.w.resize(static_cast<std::size_t>(out) * 4);
  for (int o = 0; o < out; ++o) {
    const double src = (o + 0.5) / scale - 0.5;
    const double fl = std::floor(src);
    const double f = src - fl;
    const int x0 = static_cast<int>(fl);
    for (int k = 0; k < 4; ++k) {
      t.idx[o * 4 + k] = std::clamp(x0 - 1 + k, 0, in - 1);
      t.w[o * 4 + k] = keys_cubic(f - (k - 1), -0.5);
    }
  }
  return t;
}
}  // namespace detail

template <typename T>
Var<T> bicubic_upsample(const Var<T>& x, int scale) {
  require_rank(x.shape(), 4, "bicubic_upsample");
  if (scale < 1) throw ValidationError("bicubic_upsample: scale must be >= 1");
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Ho = H * scale, Wo = W * scale;
  auto th = detail::bicubic_taps(H, scale), tw = detail::bicubic_taps(W, scale);
  Tensor<T> out({B, C, Ho, Wo});
  std::vector<T> tmp(static_cast<std::size_t>(H) * Wo);
  for (int bc = 0; bc < B * C; ++bc) {
    const T* src = x.value().data.data() + static_cast<std::size_t>(bc) * H * W;
    for (int h = 0; h < H; ++h)
      for (int o = 0; o < Wo; ++o) {
        T acc = T(0);
        for (int k = 0; k < 4; ++k) acc += static_cast<T>(tw.w[o * 4 + k]) * src[h * W + tw.idx[o * 4 + k]];
        tmp[static_cast<std::size_t>(h) * Wo + o] = acc;
      }
    T* dst = out.data.data() + static_cast<std::size_t>(bc) * Ho * Wo;
    for (int o = 0; o < Ho; ++o)
      for (int w = 0; w < Wo; ++w) {
        T acc = T(0);
        for (int k = 0; k < 4; ++k)
          acc += static_cast<T>(th.w[o * 4 + k]) * tmp[static_cast<std::size_t>(th.idx[o * 4 + k]) * Wo + w];
        dst[static_cast<std::size_t>(o) * Wo + w] = acc;
      }
  }
  return make_result<T>(std::move(out), {x}, [=](Node<T>& n) {
    T* g = detail::grad_of(n, 0);
    if (!g) return;
    std::vector<T> tmp(static_cast<std::size_t>(H) * Wo);
    for (int bc = 0; bc < B * C; ++bc) {
      std::fill(tmp.begin(), tmp.end(), T(0));
      const T* go = n.grad.data() + static_cast<std::size_t>(bc) * Ho * Wo;
      for (int o = 0; o < Ho; ++o)
        for (int k = 0; k < 4; ++k) {
          const T wv = static_cast<T>(th.w[o * 4 + k]);
          T* trow = tmp.data() + static_cast<std::size_t>(th.idx[o * 4 + k]) * Wo;
          for (int w = 0; w < Wo; ++w) trow[w] += wv * go[static_cast<std::size_t>(o) * Wo + w];
        }
      T* gx = g + static_cast<std::size_t>(bc) * H * W;
      for (int h = 0; h < H; ++h)
        for (int o = 0; o < Wo; ++o)
          for (int k = 0; k < 4; ++k)
            gx[h * W + tw.idx[o * 4 + k]] += static_cast<T>(tw.w[o * 4 + k]) * tmp[static_cast<std::size_t>(h) * Wo + o];
    }
  });
}

}  // namespace mocolsk::ops
