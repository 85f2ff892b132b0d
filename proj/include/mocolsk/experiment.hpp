// Copyright 2026 The mocolsk Authors
// SPDX-License-Identifier: Apache-2.0

// Run-level operations shared by the CLI and the acceptance suite: loading a
// dataset into normalized tensors, a full training run with its on-disk
// outputs, evaluation runs and the ablation sweeps.

#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "mocolsk/config.hpp"
#include "mocolsk/metrics.hpp"
#include "mocolsk/network.hpp"
#include "mocolsk/raster.hpp"
#include "mocolsk/training.hpp"

namespace mocolsk {

namespace fs = std::filesystem;

struct DataBundle {
  raster::LoadedDataset dataset;
  Normalizer norm;
  std::vector<PreparedSample> train, val, test;

  const std::vector<PreparedSample>& split(raster::Split s) const {
    switch (s) {
      case raster::Split::kTrain:
        return train;
      case raster::Split::kVal:
        return val;
      case raster::Split::kTest:
        return test;
      case raster::Split::kNone:
        break;
    }
    throw ValidationError("no such split");
  }

  /// Held-out samples for scoring: test, else val, else train.
  const std::vector<PreparedSample>& held_out() const { return !test.empty() ? test : !val.empty() ? val : train; }
};

/// Statistics come from the manifest when present, otherwise from the
/// training split.
inline DataBundle load_bundle(const fs::path& path, raster::Strategy lst, raster::Strategy guidance,
                              const std::optional<raster::NormalizationStats>& stats_override = std::nullopt) {
  DataBundle b;
  b.dataset = raster::load_dataset(path);
  b.norm.strategy = lst;
  b.norm.guidance_strategy = guidance;
  if (stats_override) {
    b.norm.stats = *stats_override;
  } else if (b.dataset.manifest.stats) {
    b.norm.stats = *b.dataset.manifest.stats;
  } else {
    b.norm.stats = raster::compute_stats(b.dataset.in_split(raster::Split::kTrain));
  }
  b.train = prepare(b.dataset.in_split(raster::Split::kTrain), b.norm);
  b.val = prepare(b.dataset.in_split(raster::Split::kVal), b.norm);
  b.test = prepare(b.dataset.in_split(raster::Split::kTest), b.norm);
  return b;
}

struct RunOutputs {
  TrainResult train;
  metrics::MetricReport val_report;
  fs::path dir;
};

/// Trains according to `cfg` and writes, under `out`: resolved_config.json,
/// history.csv, checkpoint/{index.json,params.f32} and val_metrics.csv.
inline RunOutputs run_training(const RunConfig& cfg, const DataBundle& data, const fs::path& out,
                               std::function<void(const HistoryRow&)> on_step = {}) {
  cfg.validate();
  if (data.dataset.manifest.scale != cfg.network.scale)
    throw ValidationError("dataset scale x" + std::to_string(data.dataset.manifest.scale) + " does not match network scale x" +
                          std::to_string(cfg.network.scale));
  fs::create_directories(out);
  RunConfig resolved = cfg;
  resolved.output_dir = out.string();
  write_json(out / "resolved_config.json", to_json(resolved));

  Network<float> net(cfg.network);
  TrainOptions opt{cfg.optim, cfg.loss, cfg.seed, std::move(on_step)};
  RunOutputs r;
  r.dir = out;
  r.train = train(net, data.train, data.val, data.norm, opt);
  write_history_csv(out / "history.csv", r.train.history);
  save_checkpoint(out / "checkpoint", net, r.train.steps, data.norm.stats, data.norm.strategy, data.norm.guidance_strategy);
  if (!data.val.empty()) {
    r.val_report = evaluate(net, data.val, data.norm);
    metrics::write_csv(out / "val_metrics.csv", r.val_report);
  }
  return r;
}

/// Loads a checkpoint into a fresh network.
inline Network<float> network_from_checkpoint(const Checkpoint& ck) {
  Network<float> net(ck.config);
  apply_checkpoint(net, ck);
  return net;
}

// ---------------------------------------------------------------------------
// Ablation suites.

struct AblationCase {
  std::string name;
  std::string description;
  RunConfig config;
};

inline const std::vector<std::string>& ablation_suites() {
  static const std::vector<std::string> s = {"component", "pooling", "kernel", "stages", "dims",
                                             "selection", "variants", "norm",    "loss"};
  return s;
}

/// Largest MS-SSIM scale count (<= 5) that fits an image side.
inline int ms_scales_for(int side, int window = 11) {
  int m = 1;
  while (m < 5 && side >= window * (1 << m)) ++m;
  return m;
}

inline std::vector<AblationCase> suite_cases(const std::string& suite, const RunConfig& base, int hr_side = 96) {
  std::vector<AblationCase> cases;
  auto add = [&](std::string name, std::string desc, const std::function<void(RunConfig&)>& edit) {
    RunConfig c = base;
    edit(c);
    c.validate();
    cases.push_back({std::move(name), std::move(desc), std::move(c)});
  };
  auto all = [](RunConfig& c, const std::string& tag) {
    c.network.variants.assign(static_cast<std::size_t>(c.network.stages), tag);
  };

  if (suite == "component") {
    add("case1", "up/down projection only", [&](RunConfig& c) { all(c, "Baseline"); });
    add("case2", "single large kernel (23,1)", [](RunConfig& c) { c.network.kernel_spec = {{23, 1}}; });
    add("case3", "static 2->2 convolution instead of DConv", [](RunConfig& c) { c.network.dynamic = false; });
    add("case4", "no modality fusion (Z = X*S)", [](RunConfig& c) { c.network.modality_fusion = false; });
    add("case5", "avg+max pooling in MCWG", [](RunConfig& c) { c.network.pooling = Pooling::kAvgMax; });
    add("case6", "full module", [](RunConfig&) {});
  } else if (suite == "pooling") {
    for (Pooling p : {Pooling::kAvg, Pooling::kMax, Pooling::kAvgMax, Pooling::kPyramid})
      add(pooling_name(p), std::string("MCWG pooling ") + pooling_name(p), [p](RunConfig& c) { c.network.pooling = p; });
  } else if (suite == "kernel") {
    const std::vector<KernelSpec> specs = {{{23, 1}},         {{3, 1}, {3, 2}}, {{3, 1}, {5, 2}},
                                           {{5, 1}, {7, 3}},  {{7, 1}, {9, 4}}, {{9, 1}, {11, 5}}};
    for (const auto& spec : specs) {
      std::string name;
      for (const auto& s : spec) name += (name.empty() ? "" : "->") + ("(" + std::to_string(s.kernel) + "," + std::to_string(s.dilation) + ")");
      add(name, "RF " + std::to_string(receptive_field(spec)), [spec](RunConfig& c) { c.network.kernel_spec = spec; });
    }
  } else if (suite == "stages") {
    for (int n = 1; n <= 5; ++n)
      add("N" + std::to_string(n), std::to_string(n) + " stages", [n](RunConfig& c) {
        c.network.stages = n;
        c.network.variants.clear();
      });
  } else if (suite == "dims") {
    for (int d : {16, 24, 32, 40})
      add("dim" + std::to_string(d), "base dimension " + std::to_string(d), [d](RunConfig& c) { c.network.base_dim = d; });
  } else if (suite == "selection") {
    for (const char* seq : {"SSSS", "CCCC", "SCSC", "CSCS", "CCSS", "SSCC", "CSCC", "SCSS"}) {
      const std::string s = seq;
      add(s, "stage selection sequence " + s, [s](RunConfig& c) {
        c.network.stages = 4;
        c.network.variants.clear();
        for (char ch : s) c.network.variants.emplace_back(1, ch);
      });
    }
  } else if (suite == "variants") {
    for (const char* v : {"Baseline", "SK-M", "LSK-M", "LSK-CS-M", "MoCoLSK-Ex", "MoCoLSK-SS"}) {
      const std::string tag = v;
      add(tag, "fusion module " + tag + " at every stage", [&, tag](RunConfig& c) { all(c, tag); });
    }
  } else if (suite == "norm") {
    using raster::Strategy;
    const std::vector<std::pair<Strategy, Strategy>> combos = {{Strategy::kNone, Strategy::kNone},
                                                               {Strategy::kZScore, Strategy::kZScore},
                                                               {Strategy::kMinMax, Strategy::kMinMax},
                                                               {Strategy::kZScore, Strategy::kMinMax},
                                                               {Strategy::kMinMax, Strategy::kZScore}};
    for (const auto& [l, g] : combos)
      add(std::string("lst_") + strategy_name(l) + "_guid_" + strategy_name(g),
          std::string("LST ") + strategy_name(l) + ", guidance " + strategy_name(g), [l, g](RunConfig& c) {
            c.normalization = l;
            c.guidance_normalization = g;
          });
  } else if (suite == "loss") {
    const int scales = ms_scales_for(hr_side, base.loss.window);
    for (const char* e : {"L1", "SSIM", "MS-SSIM", "0.3 SSIM + 0.7 L1", "0.5 SSIM + 0.5 L1", "0.7 SSIM + 0.3 L1",
                          "0.84 SSIM + 0.16 L1", "0.84 MS-SSIM + 0.16 L1"}) {
      const std::string expr = e;
      add(expr, "loss " + expr + " (MS-SSIM scales " + std::to_string(scales) + ")", [expr, scales](RunConfig& c) {
        c.loss.terms = parse_loss_expression(expr);
        c.loss.ms_scales = scales;
      });
    }
  } else {
    throw ValidationError("unknown ablation suite '" + suite + "'");
  }
  return cases;
}

struct AblationRow {
  std::string name, description;
  std::size_t parameters = 0;
  double final_loss = 0;
  metrics::SampleMetrics metrics;
};

inline std::string slug(const std::string& s) {
  std::string out;
  for (char c : s) out += std::isalnum(static_cast<unsigned char>(c)) || c == '.' ? c : '_';
  return out;
}

/// Runs every case of a suite from the same seed, writing each case under
/// out/<case>/ and the comparison table to out/<suite>.csv.
inline std::vector<AblationRow> run_ablation(const std::string& suite, const RunConfig& base, const fs::path& out,
                                             std::function<void(const std::string&)> log = {}) {
  raster::DatasetManifest manifest = raster::read_manifest(base.data_path);
  const int hr_side = manifest.samples.empty() ? 96 : manifest.samples.front().lst_hr.back();
  const auto cases = suite_cases(suite, base, hr_side);
  fs::create_directories(out);
  std::vector<AblationRow> rows;
  for (const auto& c : cases) {
    if (log) log("case " + c.name + ": " + c.description);
    const DataBundle data = load_bundle(c.config.data_path, c.config.normalization, c.config.guidance_normalization);
    const fs::path dir = out / slug(c.name);
    const RunOutputs r = run_training(c.config, data, dir);
    const Network<float> net = network_from_checkpoint(load_checkpoint(dir / "checkpoint"));
    const auto report = evaluate(net, data.held_out(), data.norm);
    metrics::write_csv(dir / "heldout_metrics.csv", report);
    AblationRow row;
    row.name = c.name;
    row.description = c.description;
    row.parameters = net.params().parameter_count();
    row.final_loss = r.train.history.back().loss;
    row.metrics = report.aggregate;
    rows.push_back(row);
  }
  std::ofstream os(out / (suite + ".csv"), std::ios::trunc);
  if (!os) throw IoError("cannot write suite table in " + out.string());
  os << "case,description,parameters,final_loss,rmse,mae,bias,cc,rsd\n";
  for (const auto& r : rows) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", r.final_loss);
    const std::string m = metrics::format_row(r.metrics);
    os << '"' << r.name << "\",\"" << r.description << "\"," << r.parameters << ',' << buf << m.substr(m.find(',')) << '\n';
  }
  write_json(out / "resolved_config.json", {{"suite", suite}, {"base", to_json(base)}});
  return rows;
}

}  // namespace mocolsk
