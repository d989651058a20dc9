#include <gtest/gtest.h>

#include <fstream>

#include "testing.hpp"
#include "xmodal/config.hpp"

using namespace xmodal;
using namespace xmodal::testing;

namespace {

TEST(RunConfig, UnknownKeyIsRejected) {
  RunConfig c;
  EXPECT_THROW(c.set("trainer.learning_rat", "1"), ConfigError);
  EXPECT_THROW(c.set("nonsense", "1"), ConfigError);
  EXPECT_THROW(c.set("trainer.learning_rate", "fast"), ConfigError);
}

TEST(RunConfig, D2PresetVerbatim) {
  const RunConfig c = RunConfig::resolve({{"trainer.preset", "d2_style"}});
  EXPECT_EQ(c.train.preset, Preset::d2_style);
  EXPECT_EQ(c.train.learning_rate, 1e-4);
  EXPECT_EQ(c.train.weight_decay, 1e-5);
  EXPECT_EQ(c.train.batch_size, 1u);
  EXPECT_EQ(c.train.crop_size, 256);
}

TEST(RunConfig, R2D2PresetVerbatim) {
  const RunConfig c = RunConfig::resolve({{"trainer.preset", "r2d2_style"}});
  EXPECT_EQ(c.train.preset, Preset::r2d2_style);
  EXPECT_EQ(c.train.learning_rate, 1e-4);
  EXPECT_EQ(c.train.weight_decay, 5e-4);
  EXPECT_EQ(c.train.batch_size, 2u);
  EXPECT_EQ(c.train.crop_size, 192);
}

TEST(RunConfig, ExplicitKeysOverrideThePresetWhateverTheOrder) {
  const RunConfig c = RunConfig::resolve(
      {{"trainer.learning_rate", "0.001"}, {"trainer.preset", "r2d2"}, {"trainer.crop_size", "64"}});
  EXPECT_EQ(c.train.learning_rate, 1e-3);
  EXPECT_EQ(c.train.crop_size, 64);
  EXPECT_EQ(c.train.weight_decay, 5e-4);
  EXPECT_EQ(c.train.batch_size, 2u);
}

TEST(RunConfig, TextRoundTrip) {
  TempDir dir("cfg");
  RunConfig c = RunConfig::resolve({{"trainer.preset", "r2d2"},
                                    {"trainer.lambda", "0.4"},
                                    {"model.widths", "5,6,7"},
                                    {"eval.ks", "64,128"},
                                    {"sweep.lambdas", "0,0.8"},
                                    {"data.test_count", "10"},
                                    {"synth.size", "96"}});
  std::ofstream(dir / "run.cfg") << c.to_text();
  const RunConfig back = RunConfig::resolve(read_config_file(dir / "run.cfg"));
  EXPECT_EQ(back.to_text(), c.to_text());
  EXPECT_EQ(back.model.widths, (std::vector<int>{5, 6, 7}));
  EXPECT_EQ(back.eval.ks, (std::vector<std::size_t>{64, 128}));
  EXPECT_EQ(back.train.lambda, 0.4);
  EXPECT_EQ(back.train.crop_size, 192);
}

TEST(RunConfig, NmsRadiusReachesModelAndEval) {
  RunConfig c;
  c.set("eval.nms_radius", "6");
  EXPECT_EQ(c.eval.nms_radius, 6.0);
  EXPECT_EQ(c.model.nms_radius, 6.0);
}

TEST(RunConfig, SplitRequestFallsBackToLayoutDefault) {
  RunConfig c;
  c.set("data.layout", "roadscene");
  EXPECT_EQ(c.split_request().test_count, 43u);
  c.set("data.test_fraction", "0.5");
  EXPECT_EQ(c.split_request().test_fraction, 0.5);
}

TEST(ConfigFile, CommentsBlanksAndLineNumbers) {
  TempDir dir("cfgfile");
  std::ofstream(dir / "a.cfg") << "# comment\n\ntrainer.lambda = 0.2  # trailing\nmodel.stride=2\n";
  const auto a = read_config_file(dir / "a.cfg");
  ASSERT_EQ(a.size(), 2u);
  EXPECT_EQ(a[0], (Assignment{"trainer.lambda", "0.2"}));
  EXPECT_EQ(a[1], (Assignment{"model.stride", "2"}));
  std::ofstream(dir / "b.cfg") << "trainer.lambda = 1\nno equals sign\n";
  try {
    read_config_file(dir / "b.cfg");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("2"), std::string::npos) << e.what();
  }
  EXPECT_THROW(read_config_file(dir / "missing.cfg"), ConfigError);
}

TEST(ConfigFile, ParseAssignment) {
  EXPECT_EQ(parse_assignment("a.b=c=d"), (Assignment{"a.b", "c=d"}));
  EXPECT_THROW(parse_assignment("novalue"), ConfigError);
}

}  // namespace
