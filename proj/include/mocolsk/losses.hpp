// Copyright 2026 The mocolsk Authors
// SPDX-License-Identifier: Apache-2.0

// Differentiable reconstruction losses: L1, SSIM and MS-SSIM, plus weighted
// combinations. SSIM-family terms are computed in kelvin through an affine
// map supplied by the caller.

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mocolsk/ops.hpp"

namespace mocolsk {

enum class LossKind { kL1, kSSIM, kMSSSIM };

inline const char* loss_kind_name(LossKind k) {
  switch (k) {
    case LossKind::kL1:
      return "L1";
    case LossKind::kSSIM:
      return "SSIM";
    case LossKind::kMSSSIM:
      return "MS-SSIM";
  }
  return "L1";
}

inline LossKind parse_loss_kind(const std::string& s) {
  if (s == "L1" || s == "l1") return LossKind::kL1;
  if (s == "SSIM" || s == "ssim") return LossKind::kSSIM;
  if (s == "MS-SSIM" || s == "ms-ssim" || s == "msssim") return LossKind::kMSSSIM;
  throw ValidationError("unknown loss term '" + s + "' (expected L1, SSIM, MS-SSIM)");
}

struct LossTerm {
  LossKind kind = LossKind::kL1;
  double weight = 1.0;
};

inline constexpr double kMsSsimWeights[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

struct LossSpec {
  std::vector<LossTerm> terms{{LossKind::kL1, 1.0}};
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01, k2 = 0.03;
  int ms_scales = 5;

  void validate() const {
    if (terms.empty()) throw ValidationError("loss spec has no terms");
    double total = 0;
    for (const auto& t : terms) {
      if (!(t.weight >= 0)) throw ValidationError("loss weights must be >= 0");
      total += t.weight;
    }
    if (!(total > 0)) throw ValidationError("loss weights must sum to a positive value");
    if (window < 1 || window % 2 == 0) throw ValidationError("SSIM window must be odd");
    if (!(sigma > 0)) throw ValidationError("SSIM sigma must be positive");
    if (ms_scales < 1 || ms_scales > 5) throw ValidationError("ms_scales must be in [1, 5]");
  }

  bool uses_ssim() const {
    for (const auto& t : terms)
      if (t.kind != LossKind::kL1 && t.weight > 0) return true;
    return false;
  }
};

/// kelvin = scale * value + offset; `range` is the SSIM dynamic range L.
struct KelvinMap {
  double scale = 1.0, offset = 0.0, range = 1.0;
};

template <typename T>
Var<T> l1_loss(const Var<T>& pred, const Var<T>& target) {
  if (pred.shape() != target.shape())
    throw ShapeError("l1_loss: " + to_string(pred.shape()) + " vs " + to_string(target.shape()));
  return ops::mean(ops::abs(ops::sub(pred, target)));
}

/// Normalized 1-D Gaussian taps.
inline std::vector<double> gaussian_taps(int window, double sigma) {
  std::vector<double> g(window);
  double s = 0;
  for (int i = 0; i < window; ++i) {
    const double x = i - (window - 1) / 2.0;
    g[i] = std::exp(-x * x / (2 * sigma * sigma));
    s += g[i];
  }
  for (auto& v : g) v /= s;
  return g;
}

namespace detail {
template <typename T>
Var<T> gaussian_window(const LossSpec& spec) {
  const auto g = gaussian_taps(spec.window, spec.sigma);
  Tensor<T> w({1, 1, spec.window, spec.window});
  for (int i = 0; i < spec.window; ++i)
    for (int j = 0; j < spec.window; ++j) w.data[i * spec.window + j] = static_cast<T>(g[i] * g[j]);
  return Var<T>(std::move(w));
}

// Channels folded into the batch so the window filters each plane.
template <typename T>
Var<T> as_planes(const Var<T>& x) {
  require_rank(x.shape(), 4, "ssim input");
  return ops::reshape(x, Shape{x.dim(0) * x.dim(1), 1, x.dim(2), x.dim(3)});
}

template <typename T>
struct SsimTerms {
  Var<T> ssim;  // mean SSIM over windows, planes and batch
  Var<T> cs;    // mean contrast-structure term
};

/// Inputs already in kelvin.
template <typename T>
SsimTerms<T> ssim_terms(const Var<T>& x, const Var<T>& y, const LossSpec& spec, double range) {
  if (x.shape() != y.shape()) throw ShapeError("ssim: " + to_string(x.shape()) + " vs " + to_string(y.shape()));
  require_rank(x.shape(), 4, "ssim");
  if (x.dim(2) < spec.window || x.dim(3) < spec.window)
    throw ValidationError("ssim: image " + std::to_string(x.dim(2)) + "x" + std::to_string(x.dim(3)) +
                          " is smaller than the " + std::to_string(spec.window) + "px window");
  const T c1 = static_cast<T>(std::pow(spec.k1 * range, 2)), c2 = static_cast<T>(std::pow(spec.k2 * range, 2));
  const Var<T> w = gaussian_window<T>(spec);
  const Var<T> px = as_planes(x), py = as_planes(y);
  auto filt = [&](const Var<T>& v) { return ops::conv2d(v, w, Var<T>()); };
  const Var<T> mx = filt(px), my = filt(py);
  const Var<T> mx2 = ops::square(mx), my2 = ops::square(my), mxy = ops::mul(mx, my);
  const Var<T> sx = ops::sub(filt(ops::square(px)), mx2);
  const Var<T> sy = ops::sub(filt(ops::square(py)), my2);
  const Var<T> sxy = ops::sub(filt(ops::mul(px, py)), mxy);
  const Var<T> cs_map = ops::div(ops::affine(sxy, T(2), c2), ops::affine(ops::add(sx, sy), T(1), c2));
  const Var<T> lum = ops::div(ops::affine(mxy, T(2), c1), ops::affine(ops::add(mx2, my2), T(1), c1));
  return {ops::mean(ops::mul(lum, cs_map)), ops::mean(cs_map)};
}

template <typename T>
Var<T> to_kelvin(const Var<T>& x, const KelvinMap& k) {
  if (k.scale == 1.0 && k.offset == 0.0) return x;
  return ops::affine(x, static_cast<T>(k.scale), static_cast<T>(k.offset));
}
}  // namespace detail

/// Mean SSIM; inputs are mapped to kelvin first.
template <typename T>
Var<T> ssim(const Var<T>& pred, const Var<T>& target, const LossSpec& spec, const KelvinMap& k = {}) {
  return detail::ssim_terms(detail::to_kelvin(pred, k), detail::to_kelvin(target, k), spec, k.range).ssim;
}

/// Multi-scale SSIM: prod_j cs_j^w_j * ssim_M^w_M with the standard weights
/// truncated to ms_scales and renormalized. Terms are clamped at a small
/// positive floor before the power.
template <typename T>
Var<T> ms_ssim(const Var<T>& pred, const Var<T>& target, const LossSpec& spec, const KelvinMap& k = {}) {
  const int M = spec.ms_scales;
  const int need = spec.window * (1 << (M - 1));
  if (std::min(pred.dim(2), pred.dim(3)) < need)
    throw ValidationError("ms_ssim: " + std::to_string(M) + " scales need min side >= " + std::to_string(need) +
                          ", got " + std::to_string(std::min(pred.dim(2), pred.dim(3))));
  double wsum = 0;
  for (int j = 0; j < M; ++j) wsum += kMsSsimWeights[j];
  Var<T> x = detail::to_kelvin(pred, k), y = detail::to_kelvin(target, k);
  Var<T> result;
  for (int j = 0; j < M; ++j) {
    auto terms = detail::ssim_terms(x, y, spec, k.range);
    const Var<T>& v = j == M - 1 ? terms.ssim : terms.cs;
    Var<T> f = ops::pow_scalar(ops::clamp_min(v, static_cast<T>(1e-8)), static_cast<T>(kMsSsimWeights[j] / wsum));
    result = result.defined() ? ops::mul(result, f) : f;
    if (j + 1 < M) {
      x = ops::avg_pool2(x);
      y = ops::avg_pool2(y);
    }
  }
  return result;
}

/// sum_i w_i * term_i, SSIM-family terms entering as (1 - value). L1 is taken
/// in the model's own units; SSIM terms in kelvin.
template <typename T>
Var<T> combined_loss(const Var<T>& pred, const Var<T>& target, const LossSpec& spec, const KelvinMap& k = {}) {
  if (pred.shape() != target.shape())
    throw ShapeError("loss: " + to_string(pred.shape()) + " vs " + to_string(target.shape()));
  Var<T> total;
  for (const auto& t : spec.terms) {
    if (t.weight == 0) continue;
    Var<T> term;
    switch (t.kind) {
      case LossKind::kL1:
        term = l1_loss(pred, target);
        break;
      case LossKind::kSSIM:
        term = ops::affine(ssim(pred, target, spec, k), T(-1), T(1));
        break;
      case LossKind::kMSSSIM:
        term = ops::affine(ms_ssim(pred, target, spec, k), T(-1), T(1));
        break;
    }
    term = ops::scale(term, static_cast<T>(t.weight));
    total = total.defined() ? ops::add(total, term) : term;
  }
  return total;
}

}  // namespace mocolsk
