#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "rvs/cli.hpp"
#include "support.hpp"
#include "tiny_run.hpp"

namespace rvs {
namespace {

namespace fs = std::filesystem;

struct Result {
  int code;
  std::string out, err;
};

Result rvs_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "rvs");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(int(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

struct CliFixture : ::testing::Test {
  static inline fs::path dir;
  static inline std::string config;
  static inline std::string checkpoint;

  static void SetUpTestSuite() {
    dir = test::temp_dir("cli");
    config = (dir / "tiny.cfg").string();
    std::ofstream(config) << test::tiny_config_text((dir / "run").string());
    const auto r = rvs_cli({"train", "--config", config, "--quiet"});
    ASSERT_EQ(r.code, 0) << r.err;
    checkpoint = (dir / "run" / "ckpt-00000006.bin").string();
  }
  static void TearDownTestSuite() { fs::remove_all(dir); }
};

TEST_F(CliFixture, TrainReportsHashAndCheckpoints) {
  EXPECT_TRUE(fs::exists(checkpoint));
  const auto r = rvs_cli({"train", "--config", config, "--out-dir", (dir / "again").string(), "-q"});
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("config_hash " + hex64(config_hash(load_config(config)))), std::string::npos);
  EXPECT_NE(r.out.find("steps 6/6"), std::string::npos);
}

TEST_F(CliFixture, EvalPrintsCsvOrWritesFiles) {
  auto r = rvs_cli({"eval", checkpoint});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.substr(0, 33), "model,config_hash,attack,accuracy");
  EXPECT_NE(r.out.find(",pgd-3,"), std::string::npos);
  const auto prefix = (dir / "report").string();
  r = rvs_cli({"eval", checkpoint, "--attack", "pgd", "--steps", "2", "--eps", "4/255", "-o", prefix});
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream js(prefix + ".json");
  const auto j = nlohmann::json::parse(js);
  EXPECT_TRUE(j["attacks"].contains("pgd-2"));
  EXPECT_TRUE(fs::exists(prefix + ".csv"));
}

TEST_F(CliFixture, EvalSweepAndTransfer) {
  auto r = rvs_cli({"eval", checkpoint, "--sweep", "0:4:2", "--steps", "2"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 4);
  const auto other = (dir / "run" / "ckpt-00000002.bin").string();
  r = rvs_cli({"eval", checkpoint, "--attack", "fgsm", "--surrogate", other});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find(" <- "), std::string::npos);
}

TEST_F(CliFixture, DiversityExpandsGlobs) {
  const auto r = rvs_cli({"diversity", (dir / "run" / "ckpt-*.bin").string(), "--k", "3", "--subset", "4"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.substr(0, 13), "step,mean,std");
  EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 5);
  EXPECT_EQ(rvs_cli({"diversity", (dir / "nothing-*.bin").string()}).code, 1);
  EXPECT_EQ(rvs_cli({"diversity", checkpoint, "--k", "1"}).code, 2);
}

TEST_F(CliFixture, ExportCleanAndAttackedData) {
  const auto clean = (dir / "clean.bin").string(), adv = (dir / "adv.bin").string();
  ASSERT_EQ(rvs_cli({"export-dataset", "--config", config, "--out", clean}).code, 0);
  auto r = rvs_cli({"export-dataset", checkpoint, "--attack", "fgsm", "--out", adv});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto a = load_dataset(fs::path(clean)), b = load_dataset(fs::path(adv));
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_NE(a.images, b.images);
  EXPECT_NO_THROW(check_budget(a.images, b.images, 8.0 / 255));
  // the exported file feeds back into eval
  r = rvs_cli({"eval", checkpoint, "--data", adv, "--attack", "none"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find(",natural,"), std::string::npos);
  EXPECT_EQ(rvs_cli({"export-dataset", checkpoint, "--out", adv}).code, 2);
}

TEST_F(CliFixture, ResumeRefusalExitsWithUsageError) {
  const auto other = (dir / "other.cfg").string();
  std::string text = test::tiny_config_text((dir / "run").string());
  text.replace(text.find("seed = 3"), 8, "seed = 4");
  std::ofstream(other) << text;
  const auto r = rvs_cli({"train", "--config", other, "--resume", "-q"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("--force"), std::string::npos);
}

TEST(Cli, UsageErrors) {
  EXPECT_EQ(rvs_cli({}).code, 2);
  EXPECT_EQ(rvs_cli({"frobnicate"}).code, 2);
  EXPECT_EQ(rvs_cli({"eval", "/nonexistent/ckpt.bin"}).code, 2);
  EXPECT_EQ(rvs_cli({"--help"}).code, 0);
  const auto dir = test::temp_dir("cli-bad");
  const auto bad = (dir / "bad.cfg").string();
  std::ofstream(bad) << "[train]\nmomentum = 7\n";
  const auto r = rvs_cli({"train", "--config", bad});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("momentum"), std::string::npos);
  fs::remove_all(dir);
}

}  // namespace
}  // namespace rvs
