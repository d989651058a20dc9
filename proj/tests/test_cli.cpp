#include <gtest/gtest.h>

#include <sys/wait.h>

#include <fstream>
#include <sstream>

#include "testing.hpp"

using namespace xmodal;
using namespace xmodal::testing;
namespace fs = std::filesystem;

namespace {

int run(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(XMODAL_CLI) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const char* kTiny = "--set model.widths=4,4,4 --set model.descriptor_dim=4 --set trainer.crop_size=32";

class Cli : public ::testing::Test {
 protected:
  TempDir dir{"cli"};
  fs::path log() const { return dir / "log.txt"; }
  std::string data() const { return (dir / "data").string(); }
  void make_data() {
    ASSERT_EQ(run("make-synthetic --n 6 --size 32 --seed 3 --out " + data(), log()), 0) << slurp(log());
  }
};

TEST_F(Cli, HelpAndBadArguments) {
  EXPECT_EQ(run("--help", log()), 0);
  EXPECT_EQ(run("train --no-such-flag", log()), 2);
  EXPECT_EQ(run("train --out " + (dir / "t").string(), log()), 2);  // no data
  EXPECT_NE(slurp(log()).find("--data"), std::string::npos);
  EXPECT_EQ(run("eval --checkpoint " + (dir / "none.ckpt").string() + " --data " + data(), log()), 2);
  EXPECT_EQ(run("train --data " + data() + " --set trainer.bogus=1", log()), 2);
}

TEST_F(Cli, MakeSyntheticIsDeterministic) {
  make_data();
  ASSERT_EQ(run("make-synthetic --n 6 --size 32 --seed 3 --out " + (dir / "again").string(), log()), 0);
  for (const char* sub : {"visible", "other"})
    for (const auto& e : fs::directory_iterator(dir / "data" / sub))
      EXPECT_EQ(slurp(e.path()), slurp(dir / "again" / sub / e.path().filename())) << e.path();
}

TEST_F(Cli, TrainEvalMatchRoundTrip) {
  make_data();
  const std::string out = (dir / "run").string();
  ASSERT_EQ(run("train --data " + data() + " --max-steps 0 --set data.test_count=2 " + kTiny + " --out " + out, log()), 0)
      << slurp(log());
  for (const char* f : {"config.txt", "train_manifest.tsv", "test_manifest.tsv", "model.ckpt"})
    EXPECT_TRUE(fs::exists(fs::path(out) / f)) << f;

  ASSERT_EQ(run("train --data " + data() + " --max-steps 3 --set data.test_count=2 " + kTiny + " --out " + out, log()), 0)
      << slurp(log());
  std::ifstream train_log(fs::path(out) / "train_log.tsv");
  int lines = 0;
  for (std::string l; std::getline(train_log, l);) ++lines;
  EXPECT_EQ(lines, 4);  // header + 3 steps

  const std::string ev = (dir / "eval").string();
  ASSERT_EQ(run("eval --checkpoint " + out + "/model.ckpt --manifest " + out + "/test_manifest.tsv --k 16 --out " + ev,
                log()),
            0)
      << slurp(log());
  const std::string metrics = slurp(fs::path(ev) / "metrics.tsv");
  EXPECT_NE(metrics.find("# aggregation\tper_pair_mean"), std::string::npos);
  EXPECT_NE(metrics.find("mean\t*\t16\t"), std::string::npos);

  // Keypoints written by `match` feed `eval --keypoints` and reproduce the same numbers.
  const std::string img = data() + "/visible/synth_00000.png";
  const std::string mo = (dir / "match").string();
  ASSERT_EQ(run("match --checkpoint " + out + "/model.ckpt --a " + img + " --b " + img +
                    " --identity --k 16 --pair-id synth_00000 --out " + mo,
                log()),
            0)
      << slurp(log());
  EXPECT_TRUE(fs::exists(fs::path(mo) / "matches.png"));
  EXPECT_TRUE(fs::exists(fs::path(mo) / "synth_00000.visible.kps"));
  std::ofstream(dir / "one.tsv") << "# root\t" << data() << "\n# split\ttest\nsynth_00000\t" << img << '\t' << img
                                 << "\tsynthetic\n";
  const std::string ek = (dir / "evalk").string();
  ASSERT_EQ(run("eval --keypoints " + mo + " --manifest " + (dir / "one.tsv").string() + " --k 16 --out " + ek, log()), 0)
      << slurp(log());
  const std::string kmetrics = slurp(fs::path(ek) / "metrics.tsv");
  EXPECT_NE(kmetrics.find("pair\tsynth_00000\t16\t16\t16\t16\t16\t100"), std::string::npos) << kmetrics;
}

TEST_F(Cli, SweepWritesArtifacts) {
  make_data();
  const std::string out = (dir / "sweep").string();
  ASSERT_EQ(run("sweep-lambda --data " + data() + " --lambdas 0,0.5 --seeds 1 --max-steps 2 --k 16 " +
                    "--set data.test_count=2 " + kTiny + " --out " + out,
                log()),
            0)
      << slurp(log());
  EXPECT_TRUE(fs::exists(fs::path(out) / "sweep.tsv"));
  EXPECT_TRUE(fs::exists(fs::path(out) / "sweep.png"));
  std::ifstream in(fs::path(out) / "sweep.tsv");
  int lines = 0;
  for (std::string l; std::getline(in, l);) ++lines;
  EXPECT_EQ(lines, 3);  // header + one row per lambda
  int runs = 0;
  for (const auto& e : fs::directory_iterator(fs::path(out) / "runs")) runs += e.is_directory() ? 1 : 0;
  EXPECT_EQ(runs, 2);
}

}  // namespace
