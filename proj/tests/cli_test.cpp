// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>
#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>

#include "blockexp/artifacts.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct CliResult {
  int code = -1;
  std::string out;  // stdout and stderr interleaved
};

CliResult run(const std::string& args) {
  const std::string cmd = std::string(BLOCKEXP_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return {};
  CliResult r;
  std::array<char, 4096> buf{};
  while (std::size_t n = std::fread(buf.data(), 1, buf.size(), pipe)) r.out.append(buf.data(), n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// One small workspace shared by every test: corpora, a config and an
// 8-block base checkpoint.
class CliTest : public ::testing::Test {
 protected:
  static fs::path root() { return fs::path(::testing::TempDir()) / "blockexp_cli"; }
  static std::string config() { return (root() / "experiment.json").string(); }
  static std::string base() { return (root() / "pre" / "base").string(); }
  static std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

  static void SetUpTestSuite() {
    fs::remove_all(root());
    fs::create_directories(root());
    const CliResult g = run("gen-corpus --out " + q(root() / "data") +
                      " --seed 3 --general-train 20 --general-eval 4 --domain-train 20 --domain-eval 4");
    ASSERT_EQ(g.code, 0) << g.out;
    const json cfg = {
        {"model", {{"vocab_size", 258}, {"hidden", 16}, {"heads", 2}, {"ffn", 24}, {"blocks", 8}, {"max_seq_len", 32}}},
        {"pretrain", {{"max_lr", 1e-3}, {"total_steps", 6}, {"batch_size", 2}, {"seq_len", 16}}},
        {"train", {{"total_steps", 4}, {"batch_size", 2}, {"seq_len", 16}}},
        {"corpora",
         {{"general_train", {{"path", "data/general_train.txt"}}},
          {"general_eval", {{"path", "data/general_eval.txt"}}},
          {"domain_train", {{"path", "data/domain_train.txt"}}},
          {"domain_eval", {{"path", "data/domain_eval.txt"}}}}},
        {"compare",
         {{"eval_seq_len", 32},
          {"seeds", {0, 1}},
          {"strategies", {{{"kind", "block_expand"}, {"added_blocks", 2}}, {{"kind", "full_ft"}}}}}},
        {"shift", {{"queries", {"the ", "12+7="}}, {"max_new_tokens", 6}}}};
    std::ofstream(config()) << cfg.dump(2);
    const CliResult p = run("pretrain-base --config " + q(config()) + " --out " + q(root() / "pre") + " --seed 1");
    ASSERT_EQ(p.code, 0) << p.out;
  }
};

}  // namespace

TEST_F(CliTest, GenCorpusWritesFourSplitsAndRecord) {
  for (const char* f : {"general_train.txt", "general_eval.txt", "domain_train.txt", "domain_eval.txt", "run.json"}) {
    EXPECT_TRUE(fs::exists(root() / "data" / f)) << f;
  }
  EXPECT_NE(slurp(root() / "data" / "general_train.txt"), slurp(root() / "data" / "general_eval.txt"));
}

TEST_F(CliTest, PretrainWritesCheckpointHistoryAndRunRecord) {
  EXPECT_TRUE(fs::exists(blockexp::manifest_path(base())));
  EXPECT_TRUE(fs::exists(root() / "pre" / "history.csv"));
  const json rec = json::parse(slurp(root() / "pre" / "run.json"));
  EXPECT_EQ(rec["command"], "pretrain-base");
  EXPECT_EQ(rec["seed"], 1);
  EXPECT_TRUE(rec.contains("version"));
  EXPECT_EQ(rec["config"]["pretrain"]["total_steps"], 6);
}

TEST_F(CliTest, ExpandEightBlocksByFourGroups) {
  const auto out = root() / "exp" / "n4";
  const CliResult r = run("expand --base " + q(base()) + " --groups 4 --copies 1 --out " + q(out));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("8 -> 12 blocks"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("max_abs_diff 0 "), std::string::npos) << r.out;
  const auto ck = blockexp::load_checkpoint(out.string());
  EXPECT_EQ(ck.model.config.blocks, 12u);
  ASSERT_TRUE(ck.mask.has_value());
  ASSERT_TRUE(ck.provenance.plan.has_value());
  EXPECT_EQ(ck.provenance.base_checkpoint_hash, blockexp::load_checkpoint(base()).blob_hash);
}

TEST_F(CliTest, ExpandTwoGroupsGivesTenBlocks) {
  const CliResult r = run("expand --base " + q(base()) + " -N 2 -P 1 --out " + q(root() / "exp" / "n2"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("8 -> 10 blocks"), std::string::npos) << r.out;
}

TEST_F(CliTest, ExpandRejectsNonDividingGroups) {
  const CliResult r = run("expand --base " + q(base()) + " --groups 3 --out " + q(root() / "exp" / "bad"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("L mod N"), std::string::npos) << r.out;
  EXPECT_FALSE(fs::exists(blockexp::manifest_path((root() / "exp" / "bad").string())));
}

TEST_F(CliTest, PlacementsShareCountButNotInsertions) {
  const auto a = root() / "exp" / "inter", b = root() / "exp" / "suffix";
  ASSERT_EQ(run("expand --base " + q(base()) + " -N 2 --placement interleaved --out " + q(a)).code, 0);
  ASSERT_EQ(run("expand --base " + q(base()) + " -N 2 --placement suffix --out " + q(b)).code, 0);
  const json pa = json::parse(slurp(a.string() + ".plan.json")), pb = json::parse(slurp(b.string() + ".plan.json"));
  EXPECT_EQ(pa["insertions"].size(), pb["insertions"].size());
  EXPECT_NE(pa["insertions"], pb["insertions"]);
  const auto ca = blockexp::load_checkpoint(a.string()), cb = blockexp::load_checkpoint(b.string());
  EXPECT_EQ(blockexp::parameter_count(ca.model), blockexp::parameter_count(cb.model));
}

TEST_F(CliTest, EvalIdenticalBeforeAndAfterExpansion) {
  const auto exp = root() / "exp" / "eval";
  ASSERT_EQ(run("expand --base " + q(base()) + " -N 4 --out " + q(exp)).code, 0);
  const CliResult a = run("eval --config " + q(config()) + " --checkpoint " + q(base()) + " --out " + q(root() / "ev_a"));
  const CliResult b = run("eval --config " + q(config()) + " --checkpoint " + q(exp) + " --out " + q(root() / "ev_b"));
  ASSERT_EQ(a.code, 0) << a.out;
  ASSERT_EQ(b.code, 0) << b.out;
  EXPECT_EQ(a.out, b.out);
  EXPECT_EQ(slurp(root() / "ev_a" / "eval.csv"), slurp(root() / "ev_b" / "eval.csv"));
}

TEST_F(CliTest, ShiftOnIdenticalModelsIsAllUnshifted) {
  const CliResult r = run("shift --config " + q(config()) + " --base " + q(base()) + " --aligned " + q(base()) + " --out " +
                    q(root() / "shift"));
  ASSERT_EQ(r.code, 0) << r.out;
  const json s = json::parse(slurp(root() / "shift" / "shift.json"));
  EXPECT_EQ(s["unshifted"].get<double>(), 1.0);
  EXPECT_EQ(s["marginal"].get<double>(), 0.0);
  EXPECT_EQ(s["shifted"].get<double>(), 0.0);
  EXPECT_EQ(s["positions"], 12);
}

TEST_F(CliTest, TrainUsesCheckpointMaskAndLeavesInputUntouched) {
  const auto exp = root() / "exp" / "train";
  ASSERT_EQ(run("expand --base " + q(base()) + " -N 2 --out " + q(exp)).code, 0);
  const std::string before = slurp(blockexp::blob_path(exp.string()));
  const CliResult r = run("train --config " + q(config()) + " --checkpoint " + q(exp) + " --out " + q(root() / "tr") +
                    " --seed 4 --checkpoint-every 2");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(slurp(blockexp::blob_path(exp.string())), before);
  EXPECT_TRUE(fs::exists(blockexp::manifest_path((root() / "tr" / "checkpoints" / "step_2").string())));
  const auto fin = blockexp::load_checkpoint((root() / "tr" / "final").string());
  const auto orig = blockexp::load_checkpoint(exp.string());
  EXPECT_TRUE(fin.model.blocks[0].wq.bitwise_equal(orig.model.blocks[0].wq));
  EXPECT_FALSE(fin.model.blocks[4].wo.bitwise_equal(orig.model.blocks[4].wo));  // copy of block 3
}

TEST_F(CliTest, CompareIsByteIdenticalAcrossRuns) {
  const std::string args = "compare --config " + q(config()) + " --base " + q(base()) + " --out ";
  const CliResult a = run(args + q(root() / "cmp_a"));
  const CliResult b = run(args + q(root() / "cmp_b") + " --workers 2");
  ASSERT_EQ(a.code, 0) << a.out;
  ASSERT_EQ(b.code, 0) << b.out;
  for (const char* f : {"compare.csv", "compare_medians.csv", "compare.json"}) {
    EXPECT_EQ(slurp(root() / "cmp_a" / f), slurp(root() / "cmp_b" / f)) << f;
  }
  EXPECT_TRUE(fs::exists(root() / "cmp_a" / "timing.json"));
  const std::string csv = slurp(root() / "cmp_a" / "compare.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 6);
}

TEST_F(CliTest, DivergenceExitsWithTwo) {
  json cfg = json::parse(slurp(config()));
  cfg["train"]["max_lr"] = 1e30;
  cfg["train"]["total_steps"] = 20;
  const auto path = root() / "diverge.json";
  std::ofstream(path) << cfg.dump();
  const CliResult r = run("train --config " + q(path) + " --checkpoint " + q(base()) + " --strategy full_ft --out " +
                    q(root() / "div"));
  EXPECT_EQ(r.code, 2) << r.out;
  EXPECT_NE(r.out.find("diverged"), std::string::npos) << r.out;
}

TEST_F(CliTest, ConfigAndUsageErrorsExitWithOne) {
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("expand --groups 2").code, 1);
  EXPECT_EQ(run("eval --config " + q(root() / "missing.json") + " --checkpoint x").code, 1);
  const CliResult r = run("eval --config " + q(config()) + " --checkpoint " + q(root() / "nope"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("nope"), std::string::npos) << r.out;
  const CliResult bad = run("expand --base " + q(base()) + " -N 2 --placement sideways --out " + q(root() / "x"));
  EXPECT_EQ(bad.code, 1);
}

TEST_F(CliTest, EveryCommandHasHelp) {
  for (const char* c : {"gen-corpus", "pretrain-base", "expand", "train", "eval", "shift", "compare"}) {
    const CliResult r = run(std::string(c) + " --help");
    EXPECT_EQ(r.code, 0) << c;
    EXPECT_NE(r.out.find("--out"), std::string::npos) << c;
  }
}
