// Copyright 2026 The mocolsk Authors
// SPDX-License-Identifier: Apache-2.0

// mocolsk: synth | train | eval | ablate | gradcheck | plot
// Exit codes: 0 ok, 1 validation error or bad usage, 2 runtime failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "mocolsk/config.hpp"
#include "mocolsk/experiment.hpp"
#include "mocolsk/gradcheck.hpp"
#include "mocolsk/plot.hpp"

namespace fs = std::filesystem;
using namespace mocolsk;

namespace {

// Snapshot written beside a command's outputs; re-running the recorded
// arguments reproduces them.
void snapshot(const fs::path& path, const std::string& command, const json& args) {
  write_json(path, {{"command", command}, {"args", args}});
}

fs::path sibling_snapshot(const fs::path& out) {
  return out.parent_path() / (out.filename().string() + ".config.json");
}

struct SynthArgs {
  std::string out = "data/synth";
  int count = 40, hr_size = 96, scale = 2;
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> split_seed;
  bool no_split = false;
};

int run_synth(const SynthArgs& a) {
  const fs::path root = resolve_output(a.out);
  raster::DatasetManifest m = raster::synth_generate(root, a.count, a.hr_size, a.scale, a.seed);
  if (!a.no_split) {
    m = raster::split_dataset(std::move(m), a.split_seed.value_or(a.seed));
    m.stats = raster::compute_stats(root, m, raster::Split::kTrain);
  }
  raster::write_manifest(root, m);
  json args = {{"out", a.out}, {"count", a.count}, {"hr_size", a.hr_size}, {"scale", a.scale}, {"seed", a.seed},
               {"no_split", a.no_split}};
  if (a.split_seed) args["split_seed"] = *a.split_seed;
  snapshot(root / "synth_config.json", "synth", args);
  std::printf("wrote %d samples (x%d, %dpx) to %s\n", a.count, a.scale, a.hr_size, root.string().c_str());
  if (!a.no_split)
    std::printf("split: %zu train / %zu val / %zu test\n", m.in_split(raster::Split::kTrain).size(),
                m.in_split(raster::Split::kVal).size(), m.in_split(raster::Split::kTest).size());
  return 0;
}

struct RunArgs {
  std::string config, data, out;
  std::optional<std::uint64_t> seed;
  std::optional<int> iterations;
};

RunConfig resolve_run_config(const RunArgs& a, RunConfig base) {
  if (!a.config.empty()) base = load_run_config(a.config);
  if (a.seed) base.seed = base.network.seed = *a.seed;
  if (a.iterations) base.optim.iterations = *a.iterations;
  if (!a.data.empty()) base.data_path = a.data;
  if (!a.out.empty()) base.output_dir = a.out;
  base.validate();
  return base;
}

int run_train(const RunArgs& a) {
  const RunConfig cfg = resolve_run_config(a, RunConfig{});
  const DataBundle data = load_bundle(cfg.data_path, cfg.normalization, cfg.guidance_normalization);
  if (data.train.empty()) throw ValidationError("dataset " + cfg.data_path + " has no training samples");
  const fs::path out = resolve_output(cfg.output_dir);
  const long every = std::max(1, cfg.optim.iterations / 10);
  const RunOutputs r = run_training(cfg, data, out, [&](const HistoryRow& h) {
    if (h.step % every == 0 || h.val_rmse)
      std::printf("step %5ld  loss %.6f  lr %.3e%s\n", h.step, h.loss, h.lr,
                  h.val_rmse ? ("  val_rmse " + std::to_string(*h.val_rmse) + " K").c_str() : "");
  });
  std::printf("trained %ld steps; outputs in %s\n", r.train.steps, out.string().c_str());
  if (!data.val.empty()) std::printf("val: %s\n", metrics::format_row(r.val_report.aggregate).c_str());
  return 0;
}

struct EvalArgs {
  std::string ckpt, data, split = "test", out = "metrics.csv";
  bool bicubic = false;
};

int run_eval(const EvalArgs& a) {
  const Checkpoint ck = load_checkpoint(a.ckpt);
  const DataBundle data = load_bundle(a.data, ck.strategy, ck.guidance_strategy, ck.stats);
  const auto& samples = data.split(raster::parse_split(a.split));
  if (samples.empty()) throw ValidationError("split '" + a.split + "' of " + a.data + " is empty");
  metrics::MetricReport report;
  if (a.bicubic) {
    report = evaluate_bicubic(samples, data.dataset.manifest.scale);
  } else {
    const Network<float> net = network_from_checkpoint(ck);
    if (net.config().scale != data.dataset.manifest.scale)
      throw ValidationError("checkpoint scale x" + std::to_string(net.config().scale) + " does not match dataset x" +
                            std::to_string(data.dataset.manifest.scale));
    report = evaluate(net, samples, data.norm);
  }
  const fs::path out = resolve_output(a.out);
  metrics::write_csv(out, report);
  snapshot(sibling_snapshot(out), "eval",
           {{"ckpt", a.ckpt}, {"data", a.data}, {"split", a.split}, {"out", a.out}, {"bicubic", a.bicubic}});
  std::printf("%zu samples, %d degenerate\nsample_id,rmse,mae,bias,cc,rsd\n%s\n", report.samples.size(),
              report.degenerate_count, metrics::format_row(report.aggregate).c_str());
  return 0;
}

struct AblateArgs {
  std::string suite;
  RunArgs run;
};

int run_ablate(const AblateArgs& a) {
  // Desk-scale defaults unless a config says otherwise.
  RunConfig desk;
  desk.network.base_dim = 16;
  desk.optim.iterations = 200;
  desk.optim.val_every = 50;
  desk.output_dir = "runs/ablate/" + a.suite;
  const RunConfig base = resolve_run_config(a.run, desk);
  const fs::path out = resolve_output(base.output_dir);
  const auto rows = run_ablation(a.suite, base, out, [](const std::string& s) { std::printf("%s\n", s.c_str()); });
  std::printf("%-28s %10s %10s %10s\n", "case", "rmse", "cc", "params");
  for (const auto& r : rows) std::printf("%-28s %10.4f %10.4f %10zu\n", r.name.c_str(), r.metrics.rmse, r.metrics.cc, r.parameters);
  std::printf("table: %s\n", (out / (a.suite + ".csv")).string().c_str());
  return 0;
}

struct GradArgs {
  std::string module = "all", out;
  GradCheckOptions opt;
  std::optional<double> tol;
};

int run_gradcheck(const GradArgs& a) {
  std::vector<std::string> ids;
  if (a.module == "all")
    ids = gradcheck_modules();
  else
    ids = {a.module};
  bool ok = true;
  json results = json::array();
  for (const auto& id : ids) {
    GradCheckOptions o = a.opt;
    o.tol = a.tol.value_or(default_gradcheck_tol(id));
    const GradReport r = gradcheck(id, o);
    std::fputs(r.format().c_str(), stdout);
    ok = ok && r.passed();
    results.push_back({{"module", id}, {"max_rel_err", r.max_rel_err}, {"tol", r.tol}, {"passed", r.passed()}});
  }
  if (!a.out.empty()) {
    const fs::path out = resolve_output(a.out);
    write_json(out, results);
    snapshot(sibling_snapshot(out), "gradcheck",
             {{"module", a.module}, {"eps", a.opt.eps}, {"coords", a.opt.max_coords}, {"seed", a.opt.seed}, {"out", a.out}});
  }
  if (!ok) throw NumericError("gradient check failed");
  return 0;
}

struct PlotArgs {
  std::string ckpt, data, sample, out = "diff.png";
  int zoom = 4;
};

int run_plot(const PlotArgs& a) {
  const Checkpoint ck = load_checkpoint(a.ckpt);
  const DataBundle data = load_bundle(a.data, ck.strategy, ck.guidance_strategy, ck.stats);
  const PreparedSample* s = nullptr;
  for (const auto* part : {&data.train, &data.val, &data.test})
    for (const auto& p : *part)
      if (p.id == a.sample || (a.sample.empty() && !s)) s = &p;
  if (!s) throw ValidationError("sample '" + a.sample + "' not found in " + a.data);
  const Network<float> net = network_from_checkpoint(ck);
  const auto pred = to_kelvin(net.predict(s->lr, s->guid), data.norm);
  const int h = s->hr_kelvin.shape[s->hr_kelvin.rank() - 2], w = s->hr_kelvin.shape[s->hr_kelvin.rank() - 1];
  const auto p = plot::render_diff(pred, s->hr_kelvin.data, h, w, a.zoom);
  const fs::path out = resolve_output(a.out);
  plot::write_png(out, p.image);
  snapshot(sibling_snapshot(out), "plot",
           {{"ckpt", a.ckpt}, {"data", a.data}, {"sample", s->id}, {"out", a.out}, {"zoom", a.zoom}});
  std::printf("%s: sample %s, difference scale +/-%.1f K\n", out.string().c_str(), s->id.c_str(), p.bound);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MoCoLSK guided LST downscaling"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "generate a synthetic Wald-protocol dataset");
  c_synth->add_option("--out", synth.out, "dataset directory")->capture_default_str();
  c_synth->add_option("--count", synth.count, "number of scenes")->capture_default_str();
  c_synth->add_option("--hr-size", synth.hr_size, "HR side in pixels")->capture_default_str();
  c_synth->add_option("--scale", synth.scale, "2, 4 or 8")->capture_default_str();
  c_synth->add_option("--seed", synth.seed)->capture_default_str();
  c_synth->add_option("--split-seed", synth.split_seed, "defaults to --seed");
  c_synth->add_flag("--no-split", synth.no_split, "leave samples unassigned");

  RunArgs train_args;
  auto* c_train = app.add_subcommand("train", "train a network from a run config");
  c_train->add_option("--config", train_args.config, "run config JSON");
  c_train->add_option("--seed", train_args.seed);
  c_train->add_option("--data", train_args.data);
  c_train->add_option("--out", train_args.out);
  c_train->add_option("--iterations", train_args.iterations);

  EvalArgs eval;
  auto* c_eval = app.add_subcommand("eval", "score a checkpoint on one split");
  c_eval->add_option("--ckpt", eval.ckpt, "checkpoint directory")->required();
  c_eval->add_option("--data", eval.data)->required();
  c_eval->add_option("--split", eval.split)->capture_default_str();
  c_eval->add_option("--out", eval.out)->capture_default_str();
  c_eval->add_flag("--bicubic", eval.bicubic, "score the bicubic reference instead");

  AblateArgs ablate;
  auto* c_ablate = app.add_subcommand("ablate", "run an ablation suite");
  c_ablate->add_option("--suite", ablate.suite)->required()->check(CLI::IsMember(ablation_suites()));
  c_ablate->add_option("--config", ablate.run.config);
  c_ablate->add_option("--data", ablate.run.data);
  c_ablate->add_option("--out", ablate.run.out);
  c_ablate->add_option("--seed", ablate.run.seed);
  c_ablate->add_option("--steps", ablate.run.iterations);

  GradArgs grad;
  auto* c_grad = app.add_subcommand("gradcheck", "finite-difference gradient checks in float64");
  std::vector<std::string> grad_ids = gradcheck_modules();
  grad_ids.push_back("all");
  c_grad->add_option("--module", grad.module)->check(CLI::IsMember(grad_ids))->capture_default_str();
  c_grad->add_option("--eps", grad.opt.eps)->capture_default_str();
  c_grad->add_option("--tol", grad.tol, "default 1e-4, network 1e-3");
  c_grad->add_option("--coords", grad.opt.max_coords, "coordinates sampled per tensor")->capture_default_str();
  c_grad->add_option("--seed", grad.opt.seed)->capture_default_str();
  c_grad->add_option("--out", grad.out, "JSON report path");

  PlotArgs plot_args;
  auto* c_plot = app.add_subcommand("plot", "difference map for one sample");
  c_plot->add_option("--ckpt", plot_args.ckpt)->required();
  c_plot->add_option("--data", plot_args.data)->required();
  c_plot->add_option("--sample", plot_args.sample, "sample id (default: first)");
  c_plot->add_option("--out", plot_args.out)->capture_default_str();
  c_plot->add_option("--zoom", plot_args.zoom)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    if (rc == 0) return 0;
    std::cerr << app.help();
    return 1;
  }

  try {
    if (*c_synth) return run_synth(synth);
    if (*c_train) return run_train(train_args);
    if (*c_eval) return run_eval(eval);
    if (*c_ablate) return run_ablate(ablate);
    if (*c_grad) return run_gradcheck(grad);
    if (*c_plot) return run_plot(plot_args);
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  std::cerr << app.help();
  return 1;
}
