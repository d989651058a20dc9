#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "testing.hpp"
#include "xmodal/trainer.hpp"

using namespace xmodal;
using namespace xmodal::testing;

namespace {

TrainConfig fast_config(std::size_t steps, std::uint64_t seed = 5) {
  TrainConfig c;
  c.learning_rate = 1e-3;
  c.crop_size = 32;
  c.max_steps = steps;
  c.lambda = 0.5;
  c.seed = seed;
  c.correspondences = 32;
  c.safe_radius = 4.0;
  return c;
}

std::vector<ImagePair> small_pairs(std::size_t n = 4, int size = 32) {
  SyntheticParams p;
  p.size = {size, size};
  return make_synthetic_pairs(n, p, 17);
}

void expect_same_tensors(const Checkpoint& a, const Checkpoint& b) {
  ASSERT_EQ(a.tensors.size(), b.tensors.size());
  for (std::size_t i = 0; i < a.tensors.size(); ++i) {
    EXPECT_EQ(a.tensors[i].name, b.tensors[i].name);
    EXPECT_EQ(a.tensors[i].shape, b.tensors[i].shape);
    EXPECT_TRUE(a.tensors[i].values == b.tensors[i].values) << a.tensors[i].name;
  }
}

TEST(Presets, D2Style) {
  const TrainConfig c = TrainConfig::from_preset(Preset::d2_style);
  EXPECT_EQ(c.learning_rate, 1e-4);
  EXPECT_EQ(c.weight_decay, 1e-5);
  EXPECT_EQ(c.batch_size, 1u);
  EXPECT_EQ(c.crop_size, 256);
}

TEST(Presets, R2D2Style) {
  const TrainConfig c = TrainConfig::from_preset(Preset::r2d2_style);
  EXPECT_EQ(c.learning_rate, 1e-4);
  EXPECT_EQ(c.weight_decay, 5e-4);
  EXPECT_EQ(c.batch_size, 2u);
  EXPECT_EQ(c.crop_size, 192);
}

TEST(Presets, NamesParse) {
  EXPECT_EQ(parse_preset("d2_style"), Preset::d2_style);
  EXPECT_EQ(parse_preset("d2-style"), Preset::d2_style);
  EXPECT_EQ(parse_preset("r2d2"), Preset::r2d2_style);
  EXPECT_EQ(parse_preset("custom"), Preset::custom);
  EXPECT_THROW(parse_preset("vgg"), ConfigError);
}

TEST(TrainConfig, EpochsMapToSteps) {
  TrainConfig c;
  c.batch_size = 2;
  c.epochs = 100;
  EXPECT_EQ(c.total_steps(178), 8900u);
  EXPECT_EQ(c.total_steps(5), 250u);  // ceil(100 * 5 / 2)
  c.epochs.reset();
  c.max_steps = 7;
  EXPECT_EQ(c.total_steps(178), 7u);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  c.lambda = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(Trainer(TrainConfig{}, tiny_model(), {}), ConfigError);
}

TEST(AdamW, ZeroGradientsDecayByTheConfiguredFactor) {
  ConvNet net(tiny_model(3));
  const double lr = 1e-2, wd = 5e-2;
  AdamW opt(net.parameters(), lr, wd);
  const ParameterSet zero = net.parameters().zeros_like();
  double norm = net.parameters().squared_norm();
  for (int i = 0; i < 10; ++i) {
    opt.step(net.parameters(), zero);
    const double next = net.parameters().squared_norm();
    EXPECT_LT(next, norm);
    EXPECT_NEAR(std::sqrt(next), std::sqrt(norm) * (1 - lr * wd), 1e-12);
    norm = next;
  }
}

TEST(AdamW, FirstStepMovesBySignTimesLearningRate) {
  ParameterSet p({{"w", {3}, {1.0, -2.0, 0.5}}});
  ParameterSet g({{"w", {3}, {0.3, -4.0, 0.0}}});
  AdamW opt(p, 0.1, 0.0);
  opt.step(p, g);
  EXPECT_NEAR(p[0].values[0], 0.9, 1e-6);
  EXPECT_NEAR(p[0].values[1], -1.9, 1e-6);
  EXPECT_EQ(p[0].values[2], 0.5);
}

TEST(Trainer, ZeroStepsWritesTheInitialization) {
  TempDir dir("zero");
  Trainer t(fast_config(0), tiny_model(8), small_pairs(2));
  t.set_checkpoint_path(dir / "m.ckpt");
  t.run();
  EXPECT_EQ(t.steps_done(), 0u);
  const ConvNet loaded = load_model(dir / "m.ckpt");
  EXPECT_EQ(loaded.parameters(), ConvNet(tiny_model(8)).parameters());
}

TEST(Trainer, SameSeedIsBitIdentical) {
  Trainer a(fast_config(8), tiny_model(9), small_pairs());
  Trainer b(fast_config(8), tiny_model(9), small_pairs());
  a.run();
  b.run();
  expect_same_tensors(a.checkpoint(), b.checkpoint());
  ASSERT_EQ(a.log().size(), 8u);
  for (std::size_t i = 0; i < 8; ++i) {
    EXPECT_EQ(a.log()[i].loss.total, b.log()[i].loss.total);
    EXPECT_EQ(a.log()[i].rng_id, b.log()[i].rng_id);
  }
  Trainer c(fast_config(8, 6), tiny_model(9), small_pairs());
  c.run();
  EXPECT_NE(c.log().back().loss.total, a.log().back().loss.total);
}

TEST(Trainer, SplitResumeEqualsUninterruptedRun) {
  TempDir dir("resume");
  TrainConfig cfg = fast_config(100);
  cfg.batch_size = 2;
  Trainer whole(cfg, tiny_model(10), small_pairs());
  whole.run();

  Trainer first(cfg, tiny_model(10), small_pairs());
  for (int i = 0; i < 50; ++i) first.step();
  first.save_checkpoint(dir / "half.ckpt");
  Trainer second = Trainer::resume(dir / "half.ckpt", cfg, small_pairs());
  EXPECT_EQ(second.steps_done(), 50u);
  second.run();
  EXPECT_EQ(second.steps_done(), 100u);
  expect_same_tensors(whole.checkpoint(), second.checkpoint());
  EXPECT_EQ(whole.checkpoint().meta.at("trainer.rng"), second.checkpoint().meta.at("trainer.rng"));
  for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ(second.log()[i].loss.total, whole.log()[50 + i].loss.total);
}

TEST(Trainer, ResumeWithoutStepsKeepsParameters) {
  TempDir dir("resume0");
  Trainer t(fast_config(3), tiny_model(11), small_pairs(2));
  t.run();
  t.save_checkpoint(dir / "m.ckpt");
  const Trainer back = Trainer::resume(dir / "m.ckpt", fast_config(3), small_pairs(2));
  EXPECT_EQ(back.model().parameters(), t.model().parameters());
  expect_same_tensors(back.checkpoint(), t.checkpoint());
}

TEST(Trainer, CorruptOrIncompleteCheckpointIsRejected) {
  TempDir dir("bad");
  Trainer t(fast_config(1), tiny_model(12), small_pairs(2));
  t.run();
  t.save_checkpoint(dir / "m.ckpt");
  {
    std::fstream f(dir / "m.ckpt", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(-12, std::ios::end);
    f.put('\x01');
  }
  EXPECT_THROW(Trainer::resume(dir / "m.ckpt", fast_config(1), small_pairs(2)), ConfigError);

  Checkpoint ck = t.checkpoint();
  ck.meta.erase("trainer.step");
  ck.save(dir / "nostep.ckpt");
  try {
    Trainer::resume(dir / "nostep.ckpt", fast_config(1), small_pairs(2));
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("trainer.step"), std::string::npos);
  }
}

TEST(Trainer, LogFileFormat) {
  TempDir dir("log");
  Trainer t(fast_config(5), tiny_model(13), small_pairs(2));
  t.set_log_path(dir / "train_log.tsv");
  t.run();
  std::ifstream in(dir / "train_log.tsv");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "step\ttotal\tsl\tssl_vis\tssl_ir\tlambda\tms");
  std::size_t rows = 0, last = 0;
  while (std::getline(in, line)) {
    std::istringstream is(line);
    std::size_t step;
    double total, sl, sv, si, lambda, ms;
    ASSERT_TRUE(is >> step >> total >> sl >> sv >> si >> lambda >> ms) << line;
    EXPECT_GT(step, last);
    EXPECT_EQ(lambda, 0.5);
    EXPECT_GE(ms, 0.0);
    last = step;
    ++rows;
  }
  EXPECT_EQ(rows, 5u);
  for (const auto& r : t.log()) EXPECT_TRUE(r.loss.satisfies_identity());
}

// 20 synthetic 128x128 pairs, tiny model, lambda 0.4, 300 steps.
TEST(Trainer, SmokeRunReducesLoss) {
  TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.crop_size = 64;
  cfg.max_steps = 300;
  cfg.lambda = 0.4;
  cfg.seed = 1;
  ModelConfig m;
  m.widths = {8, 16, 16};
  m.descriptor_dim = 16;
  m.seed = 1;
  Trainer t(cfg, m, make_synthetic_pairs(20, SyntheticParams{}, 21));
  t.run();
  ASSERT_EQ(t.log().size(), 300u);
  double first = 0, last = 0;
  for (std::size_t i = 0; i < 50; ++i) {
    first += t.log()[i].loss.total / 50;
    last += t.log()[250 + i].loss.total / 50;
  }
  EXPECT_LT(last, first);
  for (const auto& r : t.log()) {
    EXPECT_TRUE(r.loss.satisfies_identity()) << r.step;
    EXPECT_TRUE(std::isfinite(r.loss.total));
    EXPECT_GE(r.loss.sl, 0.0);
  }
}

}  // namespace
