// Copyright (c) 2026 The obsprune Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "obsprune/cli.hpp"

namespace fs = std::filesystem;
using namespace obsprune;

namespace {

struct CliRun {
  int code;
  std::string out;
  std::string err;
};

CliRun run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("obsprune_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    const CliRun g = run({"gen-toy", "--out", (dir_ / "toy").string(), "--seed", "3", "--layers", "3", "--n-head", "4",
                          "--d-head", "4", "--d-ff", "24", "--seq-len", "8", "--n-seq", "4"});
    ASSERT_EQ(g.code, 0) << g.err;
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::vector<std::string> prune_args(const std::string& out) const {
    return {"prune", "--model", (dir_ / "toy/model.tsr").string(), "--manifest", (dir_ / "toy/manifest.json").string(),
            "--calib", (dir_ / "toy/calib.tsr").string(), "--out", (dir_ / out).string()};
  }

  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, ZeroRatiosLeaveModelUnchanged) {
  auto args = prune_args("p0");
  args.insert(args.end(), {"--ratio-first", "0", "--ratio-last", "0"});
  const CliRun r = run(args);
  ASSERT_EQ(r.code, 0) << r.err;
  const TensorMap a = read_tensor_file(dir_ / "toy/model.tsr"), b = read_tensor_file(dir_ / "p0/model.tsr");
  EXPECT_EQ(encode_tensor_file(a), encode_tensor_file(b));
}

TEST_F(CliTest, PruneVerifyReport) {
  auto args = prune_args("p1");
  args.insert(args.end(), {"--variant", "log-inc", "--ratio-first", "0.25", "--global-target", "0.4", "--group-start",
                           "4", "--group-min", "1"});
  ASSERT_EQ(run(args).code, 0);
  for (const char* f : {"model.tsr", "manifest.json", "report.json", "report.csv"}) EXPECT_TRUE(fs::exists(dir_ / "p1" / f));

  const CliRun v = run({"verify", "--report", (dir_ / "p1/report.json").string(), "--model",
                        (dir_ / "p1/model.tsr").string(), "--manifest", (dir_ / "p1/manifest.json").string()});
  EXPECT_EQ(v.code, 0) << v.err;
  EXPECT_NE(v.out.find("verify: ok"), std::string::npos);

  const CliRun c = run({"report", "--report", (dir_ / "p1/report.json").string()});
  EXPECT_EQ(c.code, 0);
  EXPECT_EQ(c.out, slurp(dir_ / "p1/report.csv"));
}

TEST_F(CliTest, RepeatedRunsAreBitIdentical) {
  auto a = prune_args("ra"), b = prune_args("rb");
  for (auto* v : {&a, &b}) v->insert(v->end(), {"--variant", "uniform", "--ratio-first", "0.5", "--group-start", "8"});
  ASSERT_EQ(run(a).code, 0);
  ASSERT_EQ(run(b).code, 0);
  for (const char* f : {"model.tsr", "manifest.json", "report.json", "report.csv"}) {
    EXPECT_EQ(slurp(dir_ / "ra" / f), slurp(dir_ / "rb" / f)) << f;
  }
}

TEST_F(CliTest, ConfigFileAndOverrides) {
  {
    std::ofstream cfg(dir_ / "cfg.json");
    cfg << R"({"variant": "uniform", "ratio_first": 0.5, "group_start": 4, "group_min": 1})";
  }
  auto args = prune_args("pc");
  args.insert(args.end(), {"--config", (dir_ / "cfg.json").string(), "--ratio-first", "0.25"});
  ASSERT_EQ(run(args).code, 0);
  const auto report = nlohmann::json::parse(slurp(dir_ / "pc/report.json"));
  EXPECT_EQ(report["config"]["ratio_first"], 0.25);
  EXPECT_EQ(report["config"]["group_start"], 4);

  {
    std::ofstream cfg(dir_ / "bad.json");
    cfg << R"({"ratio_frist": 0.5})";
  }
  auto bad = prune_args("pb");
  bad.insert(bad.end(), {"--config", (dir_ / "bad.json").string()});
  const CliRun r = run(bad);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("unknown key"), std::string::npos);
}

TEST_F(CliTest, VerifyFailsOnTamperedReport) {
  auto args = prune_args("pt");
  args.insert(args.end(), {"--variant", "uniform", "--ratio-first", "0.5"});
  ASSERT_EQ(run(args).code, 0);
  auto j = nlohmann::json::parse(slurp(dir_ / "pt/report.json"));
  j["layers"][0]["heads_removed"] = 3;
  std::ofstream(dir_ / "pt/report.json") << j.dump();
  const CliRun v = run({"verify", "--report", (dir_ / "pt/report.json").string()});
  EXPECT_EQ(v.code, 2);
  EXPECT_NE(v.err.find("violation"), std::string::npos);
}

TEST_F(CliTest, UsageErrors) {
  const CliRun unknown = run({"prune", "--bogus"});
  EXPECT_EQ(unknown.code, 1);
  EXPECT_NE(unknown.err.find("Usage"), std::string::npos);
  EXPECT_EQ(run({}).code, 1);
  auto args = prune_args("pv");
  args.insert(args.end(), {"--variant", "cubic"});
  EXPECT_EQ(run(args).code, 1);
  EXPECT_EQ(run({"report", "--report", (dir_ / "missing.json").string()}).code, 1);
}

TEST_F(CliTest, NumericalFailureExitsTwo) {
  TensorMap calib = read_tensor_file(dir_ / "toy/calib.tsr");
  calib[kCalibInputName].setZero();
  write_tensor_file(calib, dir_ / "toy/calib.tsr");
  auto args = prune_args("pn");
  args.insert(args.end(), {"--variant", "uniform", "--ratio-first", "0.5", "--damping", "0"});
  const CliRun r = run(args);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("layer 0"), std::string::npos);
}
