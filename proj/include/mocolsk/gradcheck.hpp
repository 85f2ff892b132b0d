// Copyright 2026 The mocolsk Authors
// SPDX-License-Identifier: Apache-2.0

// Finite-difference verification of analytic gradients at float64. Each
// registered module is built on a micro shape; the scalar probed is
// sum(output * R) for a fixed random R.

#pragma once

#include <cmath>
#include <cstdio>
#include <algorithm>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mocolsk/blocks.hpp"
#include "mocolsk/mocolsk.hpp"
#include "mocolsk/network.hpp"

namespace mocolsk {

struct GradGroupResult {
  std::string name;
  double rel_err = 0;
  double max_analytic = 0, max_numeric = 0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  std::size_t refined = 0;  // stencil straddled a kink at the base eps and was shrunk
  std::size_t skipped = 0;  // no kink-free stencil down to min_eps
};

struct GradReport {
  std::string module;
  double max_rel_err = 0;
  double tol = 0;
  std::vector<GradGroupResult> groups;

  bool passed() const { return max_rel_err < tol; }

  /// Worst groups first.
  std::string format(std::size_t top = 5) const {
    std::vector<const GradGroupResult*> order;
    for (const auto& g : groups) order.push_back(&g);
    std::stable_sort(order.begin(), order.end(),
                     [](const auto* a, const auto* b) { return a->rel_err > b->rel_err; });
    std::ostringstream os;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s: max rel err %.3e (tol %.1e) %s, %zu groups\n", module.c_str(), max_rel_err, tol,
                  passed() ? "PASS" : "FAIL", groups.size());
    os << buf;
    for (std::size_t i = 0; i < std::min(top, order.size()); ++i) {
      const auto* g = order[i];
      std::snprintf(buf, sizeof buf, "  %-48s rel %.3e  |g| %.3e  |fd| %.3e  at %zu (%zu checked, %zu refined, %zu skipped)\n",
                    g->name.c_str(), g->rel_err, g->max_analytic, g->max_numeric, g->worst_index, g->checked, g->refined,
                    g->skipped);
      os << buf;
    }
    return os.str();
  }
};

struct GradCheckOptions {
  double eps = 1e-4;
  double tol = 1e-4;
  std::size_t max_coords = 16;  // per group; groups smaller than this are checked fully
  // A stencil whose ends fall on different branches of a ReLU/max is shrunk
  // by 10x until both ends match the base point, down to min_eps.
  double min_eps = 1e-8;
  std::uint64_t seed = 1;
};

using GradInputs = std::vector<std::pair<std::string, Var<double>>>;

inline Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data) v = lo + (hi - lo) * unit_uniform(rng);
  return t;
}

/// Compares d/dp sum(f() * R) against central differences for every group.
inline GradReport check_gradients(const std::string& module, const std::function<Var<double>()>& f,
                                  const GradInputs& groups, const GradCheckOptions& opt) {
  std::mt19937_64 rng(splitmix64(opt.seed ^ fnv1a(module)));
  for (const auto& [_, v] : groups) {
    Var<double> p = v;
    p.set_requires_grad(true);
    p.zero_grad();
  }
  Var<double> out = f();
  const Var<double> r(random_tensor(out.shape(), rng));
  backward(ops::sum(ops::mul(out, r)));
  out = Var<double>();

  // Returns the probed scalar and the branch hash of the evaluation.
  auto probe = [&]() {
    NoGradGuard ng;
    BranchTrace trace;
    const Var<double> y = f();
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y.value().data[i] * r.value().data[i];
    return std::pair<double, std::uint64_t>{s, trace.hash()};
  };
  const std::uint64_t base = probe().second;

  GradReport rep;
  rep.module = module;
  rep.tol = opt.tol;
  for (const auto& [name, v] : groups) {
    Var<double> p = v;
    const std::vector<double> g = p.grad();
    std::vector<std::size_t> coords(p.size());
    std::iota(coords.begin(), coords.end(), 0);
    if (coords.size() > opt.max_coords) {
      for (std::size_t i = 0; i < opt.max_coords; ++i) {
        const auto j = i + static_cast<std::size_t>(unit_uniform(rng) * static_cast<double>(coords.size() - i));
        std::swap(coords[i], coords[std::min(j, coords.size() - 1)]);
      }
      coords.resize(opt.max_coords);
    }
    GradGroupResult res;
    res.name = name;
    res.checked = coords.size();
    double max_diff = 0;
    auto& data = p.mutable_value().data;
    for (std::size_t c : coords) {
      const double orig = data[c];
      double eps = opt.eps, num = 0;
      bool smooth = false;
      for (; eps >= opt.min_eps; eps /= 10) {
        data[c] = orig + eps;
        const auto up = probe();
        data[c] = orig - eps;
        const auto dn = probe();
        data[c] = orig;
        if (up.second == base && dn.second == base) {
          num = (up.first - dn.first) / (2 * eps);
          smooth = true;
          break;
        }
      }
      if (!smooth) {
        ++res.skipped;
        continue;
      }
      if (eps < opt.eps) ++res.refined;
      res.max_analytic = std::max(res.max_analytic, std::abs(g[c]));
      res.max_numeric = std::max(res.max_numeric, std::abs(num));
      const double d = std::abs(num - g[c]);
      if (d > max_diff) {
        max_diff = d;
        res.worst_index = c;
      }
    }
    const double scale = std::max({res.max_analytic, res.max_numeric, 1e-8});
    res.rel_err = max_diff / scale;
    rep.max_rel_err = std::max(rep.max_rel_err, res.rel_err);
    rep.groups.push_back(res);
  }
  return rep;
}

namespace detail {
inline GradInputs with_params(GradInputs inputs, const ParamStore<double>& store) {
  for (const auto& [name, p] : store.entries()) inputs.emplace_back(name, p);
  return inputs;
}

inline DmlpVersion version_from_id(const std::string& id) {
  return id.back() == 'A' ? DmlpVersion::kA : id.back() == 'B' ? DmlpVersion::kB : DmlpVersion::kC;
}
}  // namespace detail

inline const std::vector<std::string>& gradcheck_modules() {
  static const std::vector<std::string> ids = {
      "linear",          "channel_attention",       "residual_group",        "up_projection",
      "down_projection", "dynamic_mlp_A",           "dynamic_mlp_B",         "dynamic_mlp_C",
      "large_kernel_decompose", "spatial_kernel_select", "mcwg_weights",   "mocolsk_forward",
      "mocolsk_cs",      "mocolsk_ex",              "network"};
  return ids;
}

/// Default tolerance per module: 1e-3 for the end-to-end network, 1e-4 otherwise.
inline double default_gradcheck_tol(const std::string& id) { return id == "network" ? 1e-3 : 1e-4; }

inline GradReport gradcheck(const std::string& id, GradCheckOptions opt = {}) {
  std::mt19937_64 rng(splitmix64(opt.seed));
  ParamStore<double> store(opt.seed);
  const Scope<double> s{&store, ""};
  auto input = [&](Shape shape) { return Var<double>(random_tensor(std::move(shape), rng), true); };

  if (id == "linear") {
    Linear<double> lin(s.sub("linear"), 5, 3);
    const auto x = input({2, 5});
    return check_gradients(id, [&] { return lin(x); }, detail::with_params({{"input.x", x}}, store), opt);
  }
  if (id == "channel_attention") {
    ChannelAttention<double> ca(s.sub("ca"), 4, 2);
    const auto x = input({2, 4, 5, 5});
    return check_gradients(id, [&] { return ca(x); }, detail::with_params({{"input.x", x}}, store), opt);
  }
  if (id == "residual_group") {
    BlockConfig cfg;
    cfg.channels = 4;
    cfg.blocks_per_group = 2;
    cfg.attention_reduction = 4;
    ResidualGroup<double> g(s.sub("group"), cfg);
    const auto x = input({1, 4, 5, 5});
    return check_gradients(id, [&] { return g(x); }, detail::with_params({{"input.x", x}}, store), opt);
  }
  if (id == "up_projection") {
    UpProjection<double> up(s.sub("up"), 2, 2);
    const auto x = input({1, 2, 8, 8});
    return check_gradients(id, [&] { return up(x); }, detail::with_params({{"input.x", x}}, store), opt);
  }
  if (id == "down_projection") {
    DownProjection<double> down(s.sub("down"), 2, 3, 2);
    const auto x = input({1, 2, 8, 8});
    return check_gradients(id, [&] { return down(x); }, detail::with_params({{"input.x", x}}, store), opt);
  }
  if (id.rfind("dynamic_mlp_", 0) == 0 && id.size() == 13) {
    DmlpConfig cfg;
    cfg.version = detail::version_from_id(id);
    cfg.layers = 2;
    cfg.hidden = 8;
    DynamicMlp<double> mlp(s.sub("dmlp"), 6, 5, cfg, 36);
    const auto fx = input({2, 6}), fy = input({2, 5});
    return check_gradients(id, [&] { return mlp(fx, fy); }, detail::with_params({{"input.fx", fx}, {"input.fy", fy}}, store),
                           opt);
  }
  if (id == "large_kernel_decompose") {
    LargeKernelDecomposition<double> lkd(s.sub("lkd"), 4, 3, default_kernel_spec());
    const auto x = input({1, 4, 9, 9});
    return check_gradients(
        id,
        [&] {
          auto [u1, u2] = lkd(x);
          return ops::concat(std::vector<Var<double>>{u1, u2});
        },
        detail::with_params({{"input.x", x}}, store), opt);
  }
  if (id == "spatial_kernel_select") {
    const Conv2d<double> pw3(s.sub("pw3"), 3, 3, 1);
    const auto u1 = input({1, 3, 8, 8}), u2 = input({1, 3, 8, 8}), w = input({1, 2, 2, 3, 3});
    return check_gradients(
        id,
        [&] {
          const auto masks = ops::sigmoid(modality_conditioned_conv(spatial_attention_pool(u1, u2), w));
          return spatial_kernel_select(u1, u2, masks, pw3);
        },
        detail::with_params({{"input.u1", u1}, {"input.u2", u2}, {"input.weights", w}}, store), opt);
  }
  if (id == "mcwg_weights") {
    DmlpConfig cfg;
    cfg.hidden = 8;
    WeightGenerator<double> gen(s.sub("mcwg"), 3, 4, cfg, Pooling::kPyramid, 36);
    const auto x = input({2, 3, 6, 6}), y = input({2, 4, 6, 6});
    return check_gradients(id, [&] { return mcwg_weights(gen, x, y, 3); },
                           detail::with_params({{"input.x", x}, {"input.y", y}}, store), opt);
  }
  if (id == "mocolsk_forward" || id == "mocolsk_cs" || id == "mocolsk_ex") {
    MoCoLSKConfig cfg;
    cfg.lst_channels = 4;
    cfg.guid_channels = 4;
    cfg.out_channels = 6;
    cfg.scale = 2;
    cfg.dmlp.hidden = 8;
    cfg.attention_reduction = 2;
    cfg.variant = id == "mocolsk_cs"   ? FusionVariant::kMoCoLSK_CS
                  : id == "mocolsk_ex" ? FusionVariant::kMoCoLSK_Ex
                                       : FusionVariant::kMoCoLSK_SS;
    FusionModule<double> m = build_fusion_variant(s.sub("fusion"), cfg);
    const auto t = input({1, 4, 6, 6}), g = input({1, 4, 12, 12});
    return check_gradients(id, [&] { return m(t, g); }, detail::with_params({{"input.T", t}, {"input.G", g}}, store), opt);
  }
  if (id == "network") {
    NetworkConfig cfg;
    cfg.stages = 2;
    cfg.base_dim = 8;
    cfg.scale = 2;
    cfg.blocks_per_group = 1;
    cfg.groups_per_stage = 1;
    cfg.recon_groups = 1;
    cfg.dmlp.hidden = 8;
    cfg.seed = opt.seed;
    Network<double> net(cfg);
    const auto lr = input({1, 1, 12, 12}), g = input({1, cfg.guidance_channels, 24, 24});
    GradInputs groups{{"input.lst_lr", lr}, {"input.guid_hr", g}};
    for (const auto& [name, p] : net.params().entries()) groups.emplace_back(name, p);
    return check_gradients(id, [&] { return net.forward(lr, g); }, groups, opt);
  }
  throw ValidationError("unknown gradcheck module '" + id + "'");
}

}  // namespace mocolsk
