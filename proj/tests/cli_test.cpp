// Copyright 2026 The HyperKD Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include "cli.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "hyperkd/band_table.hpp"
#include "test_support.hpp"

namespace hyperkd::cli {
namespace {

namespace fs = std::filesystem;

struct Result {
  int code;
  std::string out, err;
};

Result call(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::map<std::string, std::string> dir_contents(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) out[e.path().filename().string()] = slurp(e.path());
  return out;
}

// Small store shared by the pretraining tests.
const fs::path& small_store() {
  static const fs::path dir = [] {
    const fs::path d = testing::scratch_dir("cli_store") / "store";
    const Result r = call({"gen-data", "--seed", "4", "--out", d.string(), "--train", "4", "--eval", "1"});
    EXPECT_EQ(r.code, 0) << r.err;
    return d;
  }();
  return dir;
}

std::vector<std::string> quick_pretrain(const fs::path& out) {
  return {"pretrain", "--store", small_store().string(), "--out", out.string(), "--preset", "hyperkd_gabor",
          "--set", "epochs=2", "--set", "warmup_epochs=1", "--set", "batch_size=2", "--set", "random_switch_epoch=1"};
}

TEST(CliTest, UsageErrors) {
  EXPECT_EQ(call({}).code, kExitUsage);
  EXPECT_EQ(call({"frobnicate"}).code, kExitUsage);
  EXPECT_EQ(call({"gen-data"}).code, kExitUsage);
  EXPECT_EQ(call({"gen-data", "--out", "x", "--bogus"}).code, kExitUsage);
  EXPECT_EQ(call({"--threads", "0", "gen-data", "--out", "x"}).code, kExitUsage);
  const Result help = call({"--help"});
  EXPECT_EQ(help.code, kExitOk);
  for (const char* s : {"gen-data", "align-bands", "score-patches", "pretrain", "eval-recon", "downstream", "--seed",
                        "--threads", "--dry-run", "--preset", "--set", "--config"}) {
    EXPECT_NE(help.out.find(s), std::string::npos) << s;
  }
}

TEST(CliTest, GenDataIsDeterministic) {
  const fs::path base = testing::scratch_dir("cli_gen");
  ASSERT_EQ(call({"gen-data", "--seed", "7", "--out", (base / "a").string()}).code, 0);
  ASSERT_EQ(call({"gen-data", "--seed", "7", "--out", (base / "b").string()}).code, 0);
  ASSERT_EQ(call({"gen-data", "--seed", "8", "--out", (base / "c").string()}).code, 0);
  const auto a = dir_contents(base / "a");
  EXPECT_GT(a.size(), 20u);
  EXPECT_EQ(a, dir_contents(base / "b"));
  EXPECT_NE(a, dir_contents(base / "c"));
}

TEST(CliTest, DryRunWritesNothing) {
  const fs::path base = testing::scratch_dir("cli_dry");
  EXPECT_EQ(call({"--dry-run", "gen-data", "--out", (base / "d").string()}).code, 0);
  EXPECT_FALSE(fs::exists(base / "d"));
  const Result r = call({"pretrain", "--dry-run", "--store", small_store().string(), "--out", (base / "run").string(),
                         "--preset", "student"});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("recon_loss=huber"), std::string::npos);
  EXPECT_FALSE(fs::exists(base / "run"));
}

TEST(CliTest, AlignOutsideCoverageIsDataError) {
  const fs::path base = testing::scratch_dir("cli_align");
  save_band_table(BandTable("far", {{1, 3000.0, 3100.0}}), base / "far.txt");
  const Result r = call({"align-bands", "--store", small_store().string(), "--out", (base / "out").string(),
                         "--target-bands", (base / "far.txt").string()});
  EXPECT_EQ(r.code, kExitData);
  EXPECT_NE(r.err.find("EmptySubset"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(base / "out"));

  const Result ok = call({"align-bands", "--store", small_store().string(), "--out", (base / "hls").string()});
  EXPECT_EQ(ok.code, 0) << ok.err;
  EXPECT_TRUE(fs::exists(base / "hls" / "manifest.json"));
}

TEST(CliTest, ScorePatchesOutputs) {
  const fs::path out = testing::scratch_dir("cli_score");
  const Result r = call({"--seed", "1", "score-patches", "--store", small_store().string(), "--out", out.string(),
                         "--method", "wavelet", "--ratio", "0.5"});
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string csv = slurp(out / "scores.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "patch_index,row,col,score,masked");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 17);
  EXPECT_EQ(slurp(out / "scores.pgm").substr(0, 2), "P5");
  EXPECT_EQ(call({"score-patches", "--store", small_store().string(), "--out", out.string(), "--method", "fft"}).code,
            kExitData);
}

TEST(CliTest, PretrainPresetRecordsConfig) {
  const fs::path out = testing::scratch_dir("cli_pretrain") / "run";
  const Result r = call(quick_pretrain(out));
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string cfg = slurp(out / "config.txt");
  EXPECT_NE(cfg.find("kd_function=kld\n"), std::string::npos);
  EXPECT_NE(cfg.find("mask_method=gabor\n"), std::string::npos);
  EXPECT_NE(cfg.find("preset=hyperkd_gabor\n"), std::string::npos);
  const std::string epochs = slurp(out / "epochs.csv");
  EXPECT_NE(epochs.find("\n0,salient_masked,"), std::string::npos);
  EXPECT_NE(epochs.find("\n1,random,"), std::string::npos);
  EXPECT_TRUE(fs::exists(out / "final.ckpt"));
  EXPECT_EQ(slurp(out / "steps.csv").substr(0, 34), "step,l_mse,l_ssim,l_kd,l_total,lr\n");
}

TEST(CliTest, ResultsIndependentOfThreadCount) {
  const fs::path base = testing::scratch_dir("cli_threads");
  auto one = quick_pretrain(base / "one");
  one.insert(one.begin(), {"--threads", "1"});
  auto three = quick_pretrain(base / "three");
  three.insert(three.begin(), {"--threads", "3"});
  ASSERT_EQ(call(one).code, 0);
  ASSERT_EQ(call(three).code, 0);
  EXPECT_EQ(slurp(base / "one" / "steps.csv"), slurp(base / "three" / "steps.csv"));
  EXPECT_EQ(slurp(base / "one" / "final.ckpt"), slurp(base / "three" / "final.ckpt"));
}

TEST(CliTest, UnknownConfigKeysNamed) {
  const fs::path base = testing::scratch_dir("cli_keys");
  auto args = quick_pretrain(base / "run");
  args.insert(args.end(), {"--set", "learning_rate=0.1"});
  Result r = call(args);
  EXPECT_EQ(r.code, kExitData);
  EXPECT_NE(r.err.find("learning_rate"), std::string::npos) << r.err;

  std::ofstream(base / "cfg.txt") << "# run\nepochs=2\nwarmup_epochs=1\nmomentum=0.9\n";
  r = call({"pretrain", "--store", small_store().string(), "--out", (base / "run2").string(), "--config",
            (base / "cfg.txt").string()});
  EXPECT_EQ(r.code, kExitData);
  EXPECT_NE(r.err.find("momentum"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(base / "run2"));
}

TEST(CliTest, ConfigFileThenOverrides) {
  const fs::path base = testing::scratch_dir("cli_cfgfile");
  std::ofstream(base / "cfg.txt") << "preset=student\nepochs=2\nwarmup_epochs=1\nbatch_size=4\n";
  const Result r = call({"--dry-run", "pretrain", "--store", small_store().string(), "--out", "unused", "--config",
                         (base / "cfg.txt").string(), "--set", "epochs=3", "--seed", "9"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("epochs=3\n"), std::string::npos);
  EXPECT_NE(r.out.find("seed=9\n"), std::string::npos);
  EXPECT_NE(r.out.find("recon_loss=huber\n"), std::string::npos);
}

TEST(CliTest, EvalAndDownstream) {
  const fs::path base = testing::scratch_dir("cli_eval");
  ASSERT_EQ(call(quick_pretrain(base / "run")).code, 0);
  const std::string ckpt = (base / "run" / "final.ckpt").string();
  Result r = call({"eval-recon", "--store", small_store().string(), "--checkpoint", ckpt, "--out",
                   (base / "ev").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(base / "ev" / "summary.csv").substr(0, 42), "psnr,ssim,max_channel_psnr,feature_distanc");
  EXPECT_TRUE(fs::exists(base / "ev" / "tiles.csv"));
  EXPECT_TRUE(fs::exists(base / "ev" / "channels.csv"));

  r = call({"downstream", "--store", small_store().string(), "--checkpoint", ckpt, "--out", (base / "cls").string(),
            "--steps", "5"});
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string cls = slurp(base / "cls" / "results.csv");
  EXPECT_EQ(cls.substr(0, 15), "class,top1,iou\n");
  EXPECT_NE(cls.find("\nall,"), std::string::npos);

  r = call({"downstream", "--store", small_store().string(), "--checkpoint", ckpt, "--out", (base / "reg").string(),
            "--task", "regression", "--steps", "5"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(base / "reg" / "results.csv").substr(0, 4), "mae\n");
}

TEST(CliTest, MissingInputsAreDataErrors) {
  const fs::path base = testing::scratch_dir("cli_missing");
  Result r = call({"pretrain", "--store", (base / "nowhere").string(), "--out", (base / "run").string()});
  EXPECT_EQ(r.code, kExitData);
  EXPECT_FALSE(r.err.empty());
  r = call({"eval-recon", "--store", small_store().string(), "--checkpoint", (base / "none.ckpt").string(), "--out",
            (base / "ev").string()});
  EXPECT_EQ(r.code, kExitData);
  r = call({"pretrain", "--store", small_store().string(), "--out", (base / "run").string(), "--preset", "teacher"});
  EXPECT_EQ(r.code, kExitData);
  EXPECT_NE(r.err.find("teacher"), std::string::npos);
}

}  // namespace
}  // namespace hyperkd::cli
