#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"

namespace {

namespace fs = std::filesystem;

struct Result {
  int code = -1;
  std::string out;
};

Result run(const std::string& args) {
  const std::string cmd = std::string(DEVA_CLI_PATH) + " " + args + " 2>/dev/null";
  Result r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  while (std::fgets(buf, sizeof buf, pipe)) r.out += buf;
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / "deva_cli_test";
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    std::ofstream(dir_ / "spec.json") << R"({"train": 120, "valid": 20, "test": 20})";
    ASSERT_EQ(run("gen-data --spec " + (dir_ / "spec.json").string() + " --out " + (dir_ / "data").string()).code, 0);
  }
  static void TearDownTestSuite() { fs::remove_all(dir_); }
  static fs::path dir_;
};

fs::path Cli::dir_;

TEST_F(Cli, UsageErrors) {
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("frobnicate").code, 1);
  EXPECT_EQ(run("eval --ckpt /nonexistent.ckpt --data " + (dir_ / "data").string()).code, 1);
  std::ofstream(dir_ / "bad.json") << R"({"model": {"colour": 3}})";
  EXPECT_EQ(run("train --config " + (dir_ / "bad.json").string() + " --data " + (dir_ / "data").string() +
                " --out " + (dir_ / "x.ckpt").string())
                .code,
            1);
  EXPECT_EQ(run("ablate --data " + (dir_ / "data").string() + " --toggles no_text").code, 1);
}

TEST_F(Cli, DataErrors) {
  std::ofstream(dir_ / "junk.ckpt") << "not a checkpoint";
  EXPECT_EQ(run("eval --ckpt " + (dir_ / "junk.ckpt").string() + " --data " + (dir_ / "data").string()).code, 2);
  fs::create_directories(dir_ / "empty");
  EXPECT_EQ(run("fit-tertiles --data " + (dir_ / "empty").string()).code, 2);
}

TEST_F(Cli, EdgDescribesOneUtterance) {
  const auto tertiles = dir_ / "tertiles.json";
  ASSERT_EQ(run("fit-tertiles --data " + (dir_ / "data").string() + " --out " + tertiles.string()).code, 0);
  const auto r = run("edg --au-file " + (dir_ / "data/au/train_00000.csv").string() + " --prosody-file " +
                     (dir_ / "data/prosody/train_00000.csv").string() + " --tertiles " + tertiles.string() +
                     " --k 2");
  ASSERT_EQ(r.code, 0);
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_TRUE(j.at("aed").get<std::string>().starts_with("The Speaker made such an tone:"));
  EXPECT_TRUE(j.at("ved").get<std::string>().starts_with("The speaker made"));
  EXPECT_LE(j.at("aus").size(), 2u);
}

TEST_F(Cli, TrainThenEval) {
  std::ofstream(dir_ / "cfg.json") << R"({"optim": {"epochs": 1}})";
  const auto ckpt = dir_ / "m.ckpt";
  const auto metrics = dir_ / "m.json";
  ASSERT_EQ(run("train --config " + (dir_ / "cfg.json").string() + " --data " + (dir_ / "data").string() +
                " --out " + ckpt.string() + " --metrics-out " + metrics.string())
                .code,
            0);
  ASSERT_TRUE(fs::exists(ckpt));
  std::ifstream in(metrics);
  const auto report = nlohmann::json::parse(in);
  const auto r = run("eval --ckpt " + ckpt.string() + " --data " + (dir_ / "data").string() + " --fine-grained");
  ASSERT_EQ(r.code, 0);
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j.at("test").at("mae"), report.at("test").at("mae"));
  EXPECT_EQ(j.at("fine_grained").size(), 7u);
}

}  // namespace
