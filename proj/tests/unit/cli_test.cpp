#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string("\"") + FCAC_CLI_PATH + "\" " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("fcac_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    std::ofstream(dir_ / "fast.json") << R"({"pan": {"ways": 2, "shots": 2, "epochs": 2, "queries_per_class": 5}})";
    ASSERT_EQ(run("gen-synth --kind embeddings --base-classes 6 --sessions 1 --ways 2 --shots 2 --base-train 12 "
                  "--eval 4 --incremental-train 4 --seed 1 --out " + (dir_ / "data").string()),
              0);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string common() const {
    return "--config " + (dir_ / "fast.json").string() + " --manifest " + (dir_ / "data" / "manifest.json").string();
  }

  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, RunProtocolWritesReportsDeterministically) {
  ASSERT_EQ(run("run-protocol " + common() + " --seed 5 --out " + (dir_ / "a").string()), 0);
  ASSERT_EQ(run("run-protocol " + common() + " --seed 5 --out " + (dir_ / "b").string()), 0);
  for (const char* f : {"report.json", "report.csv", "report.md", "timing.json", "prototypes.txt"}) {
    EXPECT_TRUE(fs::exists(dir_ / "a" / f)) << f;
  }
  EXPECT_EQ(slurp(dir_ / "a" / "report.json"), slurp(dir_ / "b" / "report.json"));
  const auto doc = nlohmann::json::parse(slurp(dir_ / "a" / "report.json"));
  EXPECT_EQ(doc.at("sessions").size(), 2u);
}

TEST_F(CliTest, StagedCommandsChain) {
  const auto out = (dir_ / "staged").string();
  ASSERT_EQ(run("train-base " + common() + " --out " + out), 0);
  ASSERT_TRUE(fs::exists(dir_ / "staged" / "base.ckpt"));
  ASSERT_EQ(run("run-incremental " + common() + " --checkpoint " + out + "/base.ckpt --out " + out), 0);
  ASSERT_EQ(run("evaluate " + common() + " --checkpoint " + out + "/final.ckpt --out " + out), 0);
  EXPECT_TRUE(fs::exists(dir_ / "staged" / "predictions.csv"));
  ASSERT_EQ(run("report --input " + out + "/report.json --out " + (dir_ / "rerender").string()), 0);
  EXPECT_EQ(slurp(dir_ / "staged" / "report.md"), slurp(dir_ / "rerender" / "report.md"));
}

TEST_F(CliTest, ConfigErrorsExitWithTwo) {
  EXPECT_EQ(run("run-protocol --manifest /nonexistent/manifest.json --out " + dir_.string()), 2);
  EXPECT_EQ(run("run-protocol " + common() + " --mode sideways --out " + dir_.string()), 2);
  std::ofstream(dir_ / "bad.json") << R"({"mode": "magic"})";
  EXPECT_EQ(run("run-protocol --config " + (dir_ / "bad.json").string() + " --manifest " +
                (dir_ / "data" / "manifest.json").string() + " --out " + dir_.string()),
            2);
  EXPECT_EQ(run("no-such-command"), 2);
}

TEST_F(CliTest, RuntimeErrorsExitWithThree) {
  std::ofstream(dir_ / "junk.ckpt") << "not a checkpoint";
  EXPECT_EQ(run("evaluate " + common() + " --checkpoint " + (dir_ / "junk.ckpt").string() + " --out " + dir_.string()),
            3);
}
