// Copyright 2026 The mocolsk Authors
// SPDX-License-Identifier: Apache-2.0

// Run configuration: one JSON document carrying the network, optimizer, loss,
// data and output settings. Unknown keys are rejected at every level.
//
// {
//   "seed": 0,
//   "network": { ...see NetworkConfig... },
//   "optim": { "lr": 1e-4, "weight_decay": 1e-5, "iterations": 500, "batch": 4,
//              "t0": 0, "t_mult": 2, "lr_min": 1e-6, "val_every": 100,
//              "beta1": 0.9, "beta2": 0.999, "eps": 1e-8 },
//   "loss": { "terms": [{"kind": "L1", "weight": 1.0}], "window": 11, "sigma": 1.5,
//             "k1": 0.01, "k2": 0.03, "ms_scales": 5 },
//   "data": { "path": "data/synth", "normalization": "zscore",
//             "guidance_normalization": "zscore" },
//   "output": { "dir": "runs/default" }
// }

#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"
#include "mocolsk/losses.hpp"
#include "mocolsk/network.hpp"
#include "mocolsk/training.hpp"

namespace mocolsk {

struct RunConfig {
  std::uint64_t seed = 0;
  NetworkConfig network;
  OptimSpec optim;
  LossSpec loss;
  std::string data_path = "data/synth";
  raster::Strategy normalization = raster::Strategy::kZScore;
  raster::Strategy guidance_normalization = raster::Strategy::kZScore;
  std::string output_dir = "runs/default";

  void validate() const {
    network.validate();
    optim.validate();
    loss.validate();
    if (network.seed != seed) throw ValidationError("network.seed must match the top-level seed");
  }
};

inline json to_json(const OptimSpec& o) {
  return {{"lr", o.lr},       {"weight_decay", o.weight_decay}, {"iterations", o.iterations}, {"batch", o.batch},
          {"t0", o.t0},       {"t_mult", o.t_mult},             {"lr_min", o.lr_min},         {"val_every", o.val_every},
          {"beta1", o.beta1}, {"beta2", o.beta2},               {"eps", o.eps}};
}

inline json to_json(const LossSpec& l) {
  json terms = json::array();
  for (const auto& t : l.terms) terms.push_back({{"kind", loss_kind_name(t.kind)}, {"weight", t.weight}});
  return {{"terms", terms}, {"window", l.window}, {"sigma", l.sigma},
          {"k1", l.k1},     {"k2", l.k2},         {"ms_scales", l.ms_scales}};
}

inline json to_json(const RunConfig& c) {
  return {{"seed", c.seed},
          {"network", to_json(c.network)},
          {"optim", to_json(c.optim)},
          {"loss", to_json(c.loss)},
          {"data",
           {{"path", c.data_path},
            {"normalization", raster::strategy_name(c.normalization)},
            {"guidance_normalization", raster::strategy_name(c.guidance_normalization)}}},
          {"output", {{"dir", c.output_dir}}}};
}

inline OptimSpec optim_from_json(const json& j, OptimSpec o = {}) {
  const std::string w = "optim";
  detail::check_keys(j, {"lr", "weight_decay", "iterations", "batch", "t0", "t_mult", "lr_min", "val_every", "beta1", "beta2", "eps"},
                     w);
  detail::read_opt(j, "lr", o.lr, w);
  detail::read_opt(j, "weight_decay", o.weight_decay, w);
  detail::read_opt(j, "iterations", o.iterations, w);
  detail::read_opt(j, "batch", o.batch, w);
  detail::read_opt(j, "t0", o.t0, w);
  detail::read_opt(j, "t_mult", o.t_mult, w);
  detail::read_opt(j, "lr_min", o.lr_min, w);
  detail::read_opt(j, "val_every", o.val_every, w);
  detail::read_opt(j, "beta1", o.beta1, w);
  detail::read_opt(j, "beta2", o.beta2, w);
  detail::read_opt(j, "eps", o.eps, w);
  o.validate();
  return o;
}

inline LossSpec loss_from_json(const json& j, LossSpec l = {}) {
  const std::string w = "loss";
  detail::check_keys(j, {"terms", "window", "sigma", "k1", "k2", "ms_scales"}, w);
  if (j.contains("terms")) {
    if (!j["terms"].is_array()) throw ValidationError("loss.terms must be a list");
    l.terms.clear();
    for (const auto& t : j["terms"]) {
      detail::check_keys(t, {"kind", "weight"}, "loss.terms[]");
      LossTerm term;
      std::string kind = "L1";
      detail::read_opt(t, "kind", kind, "loss.terms[]");
      term.kind = parse_loss_kind(kind);
      detail::read_opt(t, "weight", term.weight, "loss.terms[]");
      l.terms.push_back(term);
    }
  }
  detail::read_opt(j, "window", l.window, w);
  detail::read_opt(j, "sigma", l.sigma, w);
  detail::read_opt(j, "k1", l.k1, w);
  detail::read_opt(j, "k2", l.k2, w);
  detail::read_opt(j, "ms_scales", l.ms_scales, w);
  l.validate();
  return l;
}

/// Parses "0.7 SSIM + 0.3 L1" style expressions.
inline std::vector<LossTerm> parse_loss_expression(const std::string& expr) {
  std::vector<LossTerm> terms;
  std::size_t start = 0;
  while (start <= expr.size()) {
    const std::size_t plus = expr.find('+', start);
    std::istringstream ps(expr.substr(start, plus == std::string::npos ? std::string::npos : plus - start));
    std::string a, b, extra;
    ps >> a >> b >> extra;
    if (a.empty() || !extra.empty()) throw ValidationError("bad loss expression '" + expr + "'");
    LossTerm t;
    if (b.empty()) {
      t.kind = parse_loss_kind(a);
      t.weight = 1.0;
    } else {
      try {
        t.weight = std::stod(a);
      } catch (const std::exception&) {
        throw ValidationError("bad loss weight '" + a + "'");
      }
      t.kind = parse_loss_kind(b);
    }
    terms.push_back(t);
    if (plus == std::string::npos) break;
    start = plus + 1;
  }
  return terms;
}

inline RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  detail::check_keys(j, {"seed", "network", "optim", "loss", "data", "output"}, "config");
  detail::read_opt(j, "seed", c.seed, "config");
  c.network.seed = c.seed;
  if (j.contains("network")) {
    c.network = network_config_from_json(j["network"], c.network);
    if (j["network"].contains("seed") && c.network.seed != c.seed)
      throw ValidationError("network.seed must match the top-level seed");
    c.network.seed = c.seed;
  }
  if (j.contains("optim")) c.optim = optim_from_json(j["optim"]);
  if (j.contains("loss")) c.loss = loss_from_json(j["loss"]);
  if (j.contains("data")) {
    const json& d = j["data"];
    detail::check_keys(d, {"path", "normalization", "guidance_normalization"}, "data");
    detail::read_opt(d, "path", c.data_path, "data");
    std::string n = raster::strategy_name(c.normalization), gn;
    detail::read_opt(d, "normalization", n, "data");
    c.normalization = raster::parse_strategy(n);
    gn = n;
    detail::read_opt(d, "guidance_normalization", gn, "data");
    c.guidance_normalization = raster::parse_strategy(gn);
  }
  if (j.contains("output")) {
    detail::check_keys(j["output"], {"dir"}, "output");
    detail::read_opt(j["output"], "dir", c.output_dir, "output");
  }
  c.validate();
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot open config " + path.string());
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw ValidationError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

/// Relative output paths are resolved against $MOCOLSK_OUT_ROOT when set.
inline std::filesystem::path resolve_output(const std::filesystem::path& p) {
  if (p.is_absolute()) return p;
  if (const char* root = std::getenv("MOCOLSK_OUT_ROOT"); root && *root) return std::filesystem::path(root) / p;
  return p;
}

inline void write_json(const std::filesystem::path& path, const json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

}  // namespace mocolsk
