// Copyright 2026 The mocolsk Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <sstream>

#include "json.hpp"
#include "test_util.hpp"

using mocolsk::testing::read_file;
using mocolsk::testing::temp_dir;
namespace fs = std::filesystem;

namespace {

const char* cli() {
  const char* p = std::getenv("MOCOLSK_CLI");
  return p ? p : MOCOLSK_CLI;
}

int run(const std::string& args) {
  const std::string cmd = std::string(cli()) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

int count_lines(const std::string& text) {
  return static_cast<int>(std::count(text.begin(), text.end(), '\n'));
}

struct Workspace {
  fs::path root, data, config;
};

// Shared dataset and a tiny run config.
const Workspace& workspace() {
  static const Workspace w = [] {
    Workspace s;
    s.root = temp_dir("cli");
    s.data = s.root / "data";
    if (run("synth --out " + s.data.string() + " --count 10 --hr-size 16 --scale 2 --seed 4") != 0)
      throw std::runtime_error("synth failed");
    s.config = s.root / "tiny.json";
    nlohmann::json cfg = {{"seed", 1},
                          {"network",
                           {{"scale", 2},
                            {"stages", 1},
                            {"base_dim", 8},
                            {"blocks_per_group", 1},
                            {"groups_per_stage", 1},
                            {"recon_groups", 1},
                            {"dmlp", {{"hidden", 8}}}}},
                          {"optim", {{"iterations", 3}, {"batch", 2}, {"val_every", 1}}},
                          {"data", {{"path", s.data.string()}}}};
    std::ofstream(s.config) << cfg.dump(2);
    return s;
  }();
  return w;
}

}  // namespace

TEST(Cli, ExitCodes) {
  EXPECT_EQ(run("--help"), 0);
  EXPECT_EQ(run("frobnicate"), 1);
  EXPECT_EQ(run("train --config /nonexistent/cfg.json"), 1);
  EXPECT_EQ(run("synth --out /tmp/mocolsk_test_cli_bad --scale 3"), 1);
  EXPECT_EQ(run("eval --ckpt /nonexistent/ckpt --data /nonexistent/data"), 2);
}

TEST(Cli, SynthWritesManifestAndSplit) {
  const auto& w = workspace();
  const auto m = nlohmann::json::parse(read_file(w.data / "manifest.json"));
  EXPECT_EQ(m["scale"], 2);
  EXPECT_EQ(m["samples"].size(), 10u);
  EXPECT_TRUE(fs::exists(w.data / "synth_config.json"));
}

TEST(Cli, SeededTrainingIsByteIdentical) {
  const auto& w = workspace();
  const auto a = w.root / "run_a", b = w.root / "run_b";
  ASSERT_EQ(run("train --config " + w.config.string() + " --seed 1 --out " + a.string()), 0);
  ASSERT_EQ(run("train --config " + w.config.string() + " --seed 1 --out " + b.string()), 0);
  const auto ha = read_file(a / "history.csv");
  EXPECT_EQ(count_lines(ha), 4);
  EXPECT_EQ(ha, read_file(b / "history.csv"));
  EXPECT_EQ(read_file(a / "checkpoint/params.f32"), read_file(b / "checkpoint/params.f32"));
  EXPECT_TRUE(fs::exists(a / "resolved_config.json"));

  const auto csv = w.root / "eval.csv";
  ASSERT_EQ(run("eval --ckpt " + (a / "checkpoint").string() + " --data " + w.data.string() + " --out " + csv.string()), 0);
  const auto text = read_file(csv);
  EXPECT_EQ(text.rfind("sample_id,rmse,mae,bias,cc,rsd\n", 0), 0u);
  EXPECT_EQ(count_lines(text), 1 + 3 + 1);  // header, test split, mean
  EXPECT_TRUE(fs::exists(w.root / "eval.csv.config.json"));

  const auto png = w.root / "diff.png";
  ASSERT_EQ(run("plot --ckpt " + (a / "checkpoint").string() + " --data " + w.data.string() + " --out " + png.string()), 0);
  EXPECT_EQ(read_file(png).substr(1, 3), "PNG");
}

TEST(Cli, AblateComponentSuite) {
  const auto& w = workspace();
  const auto out = w.root / "ablate";
  ASSERT_EQ(run("ablate --suite component --config " + w.config.string() + " --steps 2 --out " + out.string()), 0);
  const auto text = read_file(out / "component.csv");
  EXPECT_EQ(text.rfind("case,description,parameters,final_loss,rmse,mae,bias,cc,rsd\n", 0), 0u);
  EXPECT_EQ(count_lines(text), 1 + 6);
  EXPECT_EQ(run("ablate --suite nonsense --config " + w.config.string()), 1);
}

TEST(Cli, GradcheckLinear) {
  const auto& w = workspace();
  const auto out = w.root / "grad.json";
  ASSERT_EQ(run("gradcheck --module linear --out " + out.string()), 0);
  const auto rep = nlohmann::json::parse(read_file(out));
  EXPECT_TRUE(rep.dump().find("linear") != std::string::npos);
}
