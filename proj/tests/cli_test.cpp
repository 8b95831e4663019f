/*
 * Copyright 2026 The roast Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */


// Drives the roast_cli executable end to end: exit codes, manifests and output files.
#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>

#ifndef ROAST_CLI_PATH
#error "ROAST_CLI_PATH must name the roast_cli executable"
#endif

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run run(const std::string& args) {
  const std::string cmd = std::string(ROAST_CLI_PATH) + " " + args + " 2>&1";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  while (std::fgets(buf, sizeof(buf), pipe)) r.out += buf;
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

std::string field(const std::string& text, const std::string& key) {
  const auto pos = text.find(key + "=");
  if (pos == std::string::npos) return "";
  const auto start = pos + key.size() + 1;
  return text.substr(start, text.find_first_of(" \n", start) - start);
}

std::size_t line_count(const std::string& s) {
  std::size_t n = 0;
  for (char c : s) n += c == '\n';
  return n;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("roast_cli_test_" + std::to_string(::getpid()) + "_" +
                                        ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string out(const std::string& sub = "") const { return (dir_ / sub).string(); }

  fs::path dir_;
};

TEST_F(Cli, StoreSaveLoadRoundTrip) {
  const auto saved = run("--out " + out() + " --seed 7 store save --m 3000 --scale 2");
  ASSERT_EQ(saved.code, 0) << saved.out;
  const auto loaded = run("--out " + out() + " store load");
  ASSERT_EQ(loaded.code, 0) << loaded.out;
  EXPECT_EQ(field(saved.out, "checksum"), field(loaded.out, "checksum"));
  EXPECT_EQ(field(loaded.out, "m"), "3000");
  EXPECT_EQ(field(loaded.out, "seed"), "7");
  EXPECT_TRUE(fs::exists(dir_ / "manifest.json"));
}

TEST_F(Cli, CorruptSnapshotIsFormatError) {
  ASSERT_EQ(run("--out " + out() + " store save --m 16").code, 0);
  const auto path = dir_ / "store.roast";
  auto bytes = slurp(path);
  bytes[0] = 'X';
  std::ofstream(path, std::ios::binary) << bytes;
  const auto r = run("--out " + out() + " store load");
  EXPECT_EQ(r.code, 4);
  EXPECT_NE(r.out.find("magic"), std::string::npos);
  bytes[0] = 'R';
  bytes[5] = '2';
  std::ofstream(path, std::ios::binary) << bytes;
  const auto v = run("--out " + out() + " store load");
  EXPECT_EQ(v.code, 4);
  EXPECT_NE(v.out.find("version"), std::string::npos);
  EXPECT_EQ(run("--out " + out() + " store load --path " + out("missing.roast")).code, 4);
}

TEST_F(Cli, ConfigErrorsExitTwo) {
  fs::create_directories(dir_);
  std::ofstream(dir_ / "bad.json") << R"({"epochs": 2, "unknown_key": 1})";
  EXPECT_EQ(run("--config " + out("bad.json") + " train").code, 2);
  std::ofstream(dir_ / "broken.json") << "{not json";
  EXPECT_EQ(run("--config " + out("broken.json") + " train").code, 2);
  EXPECT_EQ(run("--out " + out() + " bench --dims 0").code, 2);
  EXPECT_EQ(run("--out " + out() + " train --optimizer rmsprop").code, 2);
  EXPECT_EQ(run("--out " + out() + " estimate --study gap --gap-k 0").code, 2);
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("--no-such-flag").code, 2);
}

TEST_F(Cli, VerifyPasses) {
  const auto r = run("--out " + out() + " verify --quick");
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos);
  const auto csv = slurp(dir_ / "verify.csv");
  EXPECT_EQ(line_count(csv), 9U);  // header + 8 checks
  const auto full = run("--out " + out("full") + " verify");
  EXPECT_EQ(full.code, 0) << full.out;
}

TEST_F(Cli, TrainIsReproducibleFromManifest) {
  const std::string args = " --seed 3 train --epochs 2 --samples 600 --ratio 1,2 --sharing global,local --seeds 1,2 "
                           "--z1 4 --z2 4 --chunk 4 --keep-dense-bias";
  ASSERT_EQ(run("--out " + out("a") + args).code, 0);
  ASSERT_EQ(run("--out " + out("b") + args).code, 0);
  const auto train_a = slurp(dir_ / "a" / "train.csv");
  EXPECT_EQ(train_a, slurp(dir_ / "b" / "train.csv"));
  EXPECT_EQ(slurp(dir_ / "a" / "experiment.csv"), slurp(dir_ / "b" / "experiment.csv"));
  // 2 ratios x 2 modes x 2 seeds x 2 epochs x 2 splits + header
  EXPECT_EQ(line_count(train_a), 33U);
  // per-seed rows plus one summary per (ratio, sharing)
  EXPECT_EQ(line_count(slurp(dir_ / "a" / "experiment.csv")), 1U + 2 * 2 * 3);

  fs::rename(dir_ / "a" / "train.csv", dir_ / "first.csv");
  const auto again = run("--config " + out("a/manifest.json"));
  ASSERT_EQ(again.code, 0) << again.out;
  EXPECT_EQ(slurp(dir_ / "a" / "train.csv"), slurp(dir_ / "first.csv"));
}

TEST_F(Cli, EstimateWritesStudiesAndManifest) {
  const auto r = run("--out " + out() + " --seed 2 estimate --trials 1000 --draws 50 --norm-trials 1000");
  ASSERT_EQ(r.code, 0) << r.out;
  for (const char* f : {"moments.csv", "gap.csv", "norm.csv", "manifest.json"}) EXPECT_TRUE(fs::exists(dir_ / f)) << f;
  const auto gap = slurp(dir_ / "gap.csv");
  EXPECT_EQ(gap.substr(0, gap.find('\n')),
            "layout_id,k,m,n,profile,V_G_analytic,V_L_analytic,sample_V_G,sample_V_L,trials,seed");
  EXPECT_EQ(line_count(gap), 51U);
  const auto manifest = slurp(dir_ / "manifest.json");
  EXPECT_NE(manifest.find("\"command\": \"estimate\""), std::string::npos);
  EXPECT_NE(manifest.find("\"draws\": 50"), std::string::npos);

  const auto single = run("--out " + out("k1") + " estimate --study gap --gap-k 1 --draws 20");
  ASSERT_EQ(single.code, 0);
  EXPECT_NE(single.out.find("(0 exceptions)"), std::string::npos);
}

TEST_F(Cli, BenchRowCountsAndDenseOnlySummary) {
  const auto r = run("--out " + out() + " bench --dims 64,96 --store-mib 1,2 --kernels dense,roast --runs 1 --warmup 0");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(line_count(slurp(dir_ / "bench.csv")), 1U + 2 * 2 * 2);
  EXPECT_EQ(r.out.find("speedup"), std::string::npos);
  const auto both = run("--out " + out() + " bench --dims 64 --store-mib 1 --kernels hashednet,roast --runs 1");
  EXPECT_NE(both.out.find("speedup"), std::string::npos);
}

}  // namespace
