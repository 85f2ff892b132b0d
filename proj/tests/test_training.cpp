// Copyright 2026 The mocolsk Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "mocolsk/experiment.hpp"
#include "synth_fixture.hpp"
#include "test_util.hpp"

using namespace mocolsk;
using mocolsk::testing::temp_dir;

namespace {
NetworkConfig tiny() {
  NetworkConfig c;
  c.scale = 2;
  c.stages = 1;
  c.base_dim = 8;
  c.blocks_per_group = 1;
  c.groups_per_stage = 1;
  c.recon_groups = 1;
  c.dmlp.hidden = 8;
  return c;
}

const DataBundle& bundle() {
  static const DataBundle b = [] {
    const auto root = temp_dir("train_data");
    mocolsk::testing::make_split_dataset(root, 10, 16, 2, 3);
    return load_bundle(root, raster::Strategy::kZScore, raster::Strategy::kZScore);
  }();
  return b;
}
}  // namespace

TEST(LrSchedule, CosineWithRestarts) {
  OptimSpec o;
  o.t0 = 100;
  o.t_mult = 2;
  EXPECT_DOUBLE_EQ(lr_schedule(0, o), 1e-4);
  EXPECT_DOUBLE_EQ(lr_schedule(100, o), o.lr);
  EXPECT_NEAR(lr_schedule(50, o), o.lr_min + (o.lr - o.lr_min) / 2, 1e-12);
  // Second cycle is 200 long: midpoint at 200, restart at 300.
  EXPECT_NEAR(lr_schedule(200, o), o.lr_min + (o.lr - o.lr_min) / 2, 1e-12);
  EXPECT_DOUBLE_EQ(lr_schedule(300, o), o.lr);
  for (long s = 0; s < 700; ++s) {
    EXPECT_LE(lr_schedule(s, o), o.lr);
    EXPECT_GE(lr_schedule(s, o), o.lr_min);
  }
  EXPECT_THROW(lr_schedule(-1, o), ValidationError);
  o.t0 = 0;
  o.iterations = 400;
  EXPECT_EQ(o.cycle_length(), 100);
}

TEST(AdamW, SingleStepByHand) {
  ParamStore<double> store(1);
  auto w = Scope<double>{&store, ""}.param("w", {1}, Init::kZeros, 1);
  w.mutable_value().data[0] = 1.0;
  OptimSpec o;
  o.weight_decay = 0.01;
  AdamW<double> opt(store, o);
  backward(ops::scale(ops::sum(w), 0.5));
  opt.step(0.1);
  // m_hat = 0.5, v_hat = 0.25; decay first, then the Adam step.
  EXPECT_NEAR(w.value().data[0], 1.0 - 0.1 * 0.01 - 0.1 * 0.5 / (0.5 + 1e-8), 1e-12);
}

TEST(AdamW, ZeroLearningRateLeavesParameters) {
  Network<float> net(tiny());
  std::vector<std::vector<float>> before;
  for (const auto& e : net.params().entries()) before.push_back(e.second.value().data);
  AdamW<float> opt(net.params(), OptimSpec{});
  const auto& b = bundle();
  backward(ops::mean(net.forward(Var<float>(b.train[0].lr), Var<float>(b.train[0].guid))));
  opt.step(0.0);
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(net.params().entries()[i].second.value().data, before[i]);
}

TEST(Train, SeededHistoryIsReproducible) {
  const auto& b = bundle();
  TrainOptions opt;
  opt.optim.iterations = 6;
  opt.optim.batch = 2;
  opt.optim.val_every = 3;
  opt.seed = 5;
  auto run = [&](std::uint64_t seed) {
    auto cfg = tiny();
    cfg.seed = seed;
    Network<float> net(cfg);
    TrainOptions o = opt;
    o.seed = seed;
    return train(net, b.train, b.val, b.norm, o).history;
  };
  const auto h1 = run(5), h2 = run(5), h3 = run(6);
  ASSERT_EQ(h1.size(), 6u);
  for (std::size_t i = 0; i < h1.size(); ++i) {
    EXPECT_EQ(format_history_row(h1[i]), format_history_row(h2[i]));
    EXPECT_EQ(h1[i].lr, lr_schedule(static_cast<long>(i), opt.optim));
  }
  EXPECT_TRUE(h1[2].val_rmse.has_value());
  EXPECT_FALSE(h1[3].val_rmse.has_value());
  EXPECT_TRUE(h1[5].val_rmse.has_value());
  EXPECT_NE(format_history_row(h1[0]), format_history_row(h3[0]));
}

TEST(Evaluate, GroundTruthAgainstItself) {
  const auto& b = bundle();
  for (const auto& s : b.test) {
    const auto k = to_kelvin(s.hr, b.norm);
    const auto m = metrics::sample_metrics(s.id, k, s.hr_kelvin.data);
    EXPECT_LT(m.rmse, 1e-3);  // float round trip of ~300 K values
    EXPECT_LT(std::abs(m.bias), 1e-3);
    EXPECT_NEAR(m.cc, 1.0, 1e-9);
    EXPECT_NEAR(m.rsd, 0.0, 1e-6);
    const auto exact = metrics::sample_metrics(s.id, s.hr_kelvin.data, s.hr_kelvin.data);
    EXPECT_EQ(exact.rmse, 0.0);
    EXPECT_EQ(exact.mae, 0.0);
    EXPECT_EQ(exact.bias, 0.0);
    EXPECT_DOUBLE_EQ(exact.cc, 1.0);
    EXPECT_EQ(exact.rsd, 0.0);
  }
}

TEST(Evaluate, OneRowPerSample) {
  const auto& b = bundle();
  ASSERT_EQ(b.train.size(), 6u);
  ASSERT_EQ(b.val.size(), 1u);
  ASSERT_EQ(b.test.size(), 3u);
  Network<float> net(tiny());
  const auto r = evaluate(net, b.test, b.norm);
  EXPECT_EQ(r.samples.size(), b.test.size());
  EXPECT_EQ(r.scale, 2);
  EXPECT_EQ(evaluate_bicubic(b.test, 2).samples.size(), b.test.size());
}

TEST(RunTraining, WritesArtifactsAndRejectsScaleMismatch) {
  const auto out = temp_dir("run_training");
  RunConfig cfg;
  cfg.network = tiny();
  cfg.optim.iterations = 2;
  cfg.optim.val_every = 1;
  const auto r = run_training(cfg, bundle(), out);
  for (const char* f : {"resolved_config.json", "history.csv", "checkpoint/index.json", "checkpoint/params.f32",
                        "val_metrics.csv"})
    EXPECT_TRUE(std::filesystem::exists(out / f)) << f;
  EXPECT_EQ(load_checkpoint(out / "checkpoint").step, 2);
  cfg.network.scale = 4;
  EXPECT_THROW(run_training(cfg, bundle(), out), ValidationError);
}
