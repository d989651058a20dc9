#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "testing.hpp"
#include "xmodal/model.hpp"

using namespace xmodal;
using namespace xmodal::testing;

namespace {

double column_norm(const Tensor& t, int y, int x) {
  double s = 0;
  for (int c = 0; c < t.channels(); ++c) s += t(c, y, x) * t(c, y, x);
  return std::sqrt(s);
}

double sum(const Tensor& t) {
  double s = 0;
  for (double v : t.values()) s += v;
  return s;
}

TEST(Forward, ShapesAndNormalization) {
  ModelConfig cfg;
  cfg.descriptor_dim = 32;
  cfg.widths = {8, 8, 16};
  cfg.seed = 3;
  const ConvNet net(cfg);
  Rng rng(1);
  const FeatureOutput out = forward(net, smooth_image(64, 64, rng));
  EXPECT_EQ(out.features.channels(), 32);
  EXPECT_EQ(out.features.height(), 64);
  EXPECT_EQ(out.features.width(), 64);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) EXPECT_NEAR(column_norm(out.descriptors, y, x), 1.0, 1e-5);
  EXPECT_NEAR(sum(out.scores), 1.0, 1e-5);
  for (double v : out.scores.values()) EXPECT_GE(v, 0.0);
}

TEST(Forward, StridesShrinkTheMap) {
  for (int stride : {2, 4}) {
    ModelConfig cfg = tiny_model();
    cfg.stride = stride;
    const ConvNet net(cfg);
    const FeatureOutput out = forward(net, make_image(16, 24, 0.3));
    EXPECT_EQ(out.features.height(), 16 / stride);
    EXPECT_EQ(out.features.width(), 24 / stride);
    EXPECT_EQ(out.stride, stride);
  }
}

TEST(Forward, IndivisibleSizeIsError) {
  ModelConfig cfg = tiny_model();
  cfg.stride = 4;
  const ConvNet net(cfg);
  EXPECT_THROW(forward(net, make_image(18, 16)), std::invalid_argument);
}

TEST(Forward, ConstantZeroImageHasUniformInteriorScores) {
  const ConvNet net(tiny_model(7));
  const FeatureOutput out = forward(net, make_image(24, 24, 0.0));
  const double ref = out.scores(0, 12, 12);
  for (int y = 5; y < 19; ++y)
    for (int x = 5; x < 19; ++x) EXPECT_NEAR(out.scores(0, y, x), ref, 1e-5);
}

TEST(Forward, TranslationEquivariance) {
  for (int stride : {1, 2}) {
    ModelConfig cfg = tiny_model(9);
    cfg.stride = stride;
    const ConvNet net(cfg);
    Rng rng(5);
    const Image big = smooth_image(40, 40, rng);
    Image a = make_image(32, 32), b = make_image(32, 32);
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) {
        a.at(y, x) = big.at(y + 4, x + 4);
        b.at(y, x) = big.at(y + 4, x + 4 + stride);  // b is a shifted left by `stride` pixels
      }
    const FeatureOutput oa = forward(net, a), ob = forward(net, b);
    const int n = 32 / stride, margin = 8 / stride + 1;
    double worst = 0;
    for (int y = margin; y < n - margin; ++y)
      for (int x = margin + 1; x < n - margin; ++x)
        for (int c = 0; c < 4; ++c) worst = std::max(worst, std::abs(oa.descriptors(c, y, x) - ob.descriptors(c, y, x - 1)));
    EXPECT_LT(worst, 1e-4) << "stride " << stride;
  }
}

TEST(Forward, InputGradientMatchesFiniteDifferences) {
  const ConvNet net(tiny_model(11));
  Rng rng(2);
  Image img = smooth_image(8, 8, rng);
  Tensor mask = random_tensor(1, 8, 8, rng);
  const std::vector<Point2> pts{{2.3, 5.1}, {6.7, 1.9}};
  const std::vector<double> w = {0.3, -0.7, 0.5, 0.2, -0.4, 0.9, 0.1, -0.6};
  auto objective = [&](const Image& im) {
    const FeatureOutput out = forward(net, im);
    double v = 0;
    for (std::size_t i = 0; i < out.scores.size(); ++i) v += out.scores.values()[i] * mask.values()[i] * 64.0;
    const DescriptorSet d = describe_at(out, pts);
    for (std::size_t i = 0; i < d.values.size(); ++i) v += w[i] * d.values[i];
    return v;
  };
  Tape tape;
  const FeatureOutput out = forward(net, img, &tape);
  DenseGrad g = DenseGrad::zeros_for(out);
  for (std::size_t i = 0; i < g.scores.size(); ++i) g.scores.values()[i] = mask.values()[i] * 64.0;
  DescriptorSet rows{4, w};
  describe_at_backward(out, pts, rows, g);
  Image gin;
  backward(net, tape, out, g, nullptr, &gin);
  ASSERT_TRUE(gin.same_shape(img));
  const double h = 1e-6;
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      Image p = img, m = img;
      p.at(y, x) += h;
      m.at(y, x) -= h;
      const double fd = (objective(p) - objective(m)) / (2 * h);
      EXPECT_LT(relative_error(gin.at(y, x), fd, 1e-6), 1e-3) << y << "," << x << " " << gin.at(y, x) << " vs " << fd;
    }
}

FeatureOutput with_scores(const Tensor& scores, int stride = 1) {
  FeatureOutput out;
  out.scores = scores;
  out.stride = stride;
  out.features = Tensor(4, scores.height(), scores.width(), 1.0);
  out.descriptors = Tensor(4, scores.height(), scores.width(), 0.5);
  out.image_size = {scores.height() * stride, scores.width() * stride};
  return out;
}

TEST(ExtractKeypoints, FiveIsolatedPeaks) {
  Tensor s(1, 8, 8, 0.0);
  const std::vector<std::pair<int, int>> peaks{{0, 0}, {1, 6}, {4, 3}, {7, 0}, {7, 7}};
  double v = 1.0;
  for (auto [y, x] : peaks) s(0, y, x) = v++;
  const auto out = with_scores(s);
  const KeypointSet kp = extract_keypoints(out, 5, 2.0);
  const auto oracle = oracle_keypoints(out, 5, 2.0);
  ASSERT_EQ(kp.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(kp.points[i].x, oracle[i].x);
    EXPECT_EQ(kp.points[i].y, oracle[i].y);
  }
  std::set<std::pair<double, double>> got, want;
  for (const auto& p : kp.points) got.insert({p.x, p.y});
  for (auto [y, x] : peaks) want.insert({x + 0.5, y + 0.5});
  EXPECT_EQ(got, want);
}

TEST(ExtractKeypoints, SingleIsGlobalArgmax) {
  Rng rng(3);
  const Tensor s = random_tensor(1, 9, 7, rng, 0.0, 1.0);
  const auto out = with_scores(s, 2);
  const auto best = std::max_element(s.values().begin(), s.values().end()) - s.values().begin();
  const KeypointSet kp = extract_keypoints(out, 1, 4.0);
  ASSERT_EQ(kp.size(), 1u);
  EXPECT_EQ(kp.points[0].x, (best % 7 + 0.5) * 2);
  EXPECT_EQ(kp.points[0].y, (best / 7 + 0.5) * 2);
}

TEST(ExtractKeypoints, AdjacentPeaksSuppressEachOther) {
  Tensor s(1, 8, 8, 0.01);
  s(0, 3, 3) = 1.0;
  s(0, 3, 4) = 0.9;
  s(0, 0, 7) = 0.5;
  const KeypointSet kp = extract_keypoints(with_scores(s), 2, 4.0);
  ASSERT_EQ(kp.size(), 2u);
  EXPECT_EQ(kp.points[0].x, 3.5);
  EXPECT_EQ(kp.points[0].y, 3.5);
  EXPECT_EQ(kp.points[1].x, 7.5);
  EXPECT_EQ(kp.points[1].y, 0.5);
}

TEST(ExtractKeypoints, MatchesOracleOnRandomMaps) {
  Rng rng(4);
  for (int trial = 0; trial < 250; ++trial) {
    const int h = 1 + static_cast<int>(uniform_index(rng, 16)), w = 1 + static_cast<int>(uniform_index(rng, 16));
    const int stride = 1 << uniform_index(rng, 3);
    Tensor s = random_tensor(1, h, w, rng, 0.0, 1.0);
    if (trial % 4 == 0)
      for (double& v : s.values()) v = std::round(v * 3) / 3;  // plenty of ties
    const auto out = with_scores(s, stride);
    const std::size_t k = 1 + uniform_index(rng, 32);
    const double radius = uniform(rng, 0.0, 10.0);
    const KeypointSet kp = extract_keypoints(out, k, radius);
    const auto oracle = oracle_keypoints(out, k, radius);
    ASSERT_EQ(kp.size(), oracle.size());
    for (std::size_t i = 0; i < oracle.size(); ++i) {
      EXPECT_EQ(kp.points[i].x, oracle[i].x);
      EXPECT_EQ(kp.points[i].y, oracle[i].y);
    }
    for (std::size_t i = 0; i < kp.size(); ++i)
      for (std::size_t j = i + 1; j < kp.size(); ++j)
        EXPECT_GE(std::hypot(kp.points[i].x - kp.points[j].x, kp.points[i].y - kp.points[j].y), radius);
  }
}

TEST(ExtractKeypoints, CarriesScoresAndDescriptors) {
  Rng rng(6);
  const FeatureOutput out = random_output(4, 6, 6, rng);
  const KeypointSet kp = extract_keypoints(out, 5, 1.0);
  ASSERT_EQ(kp.descriptors.count(), kp.size());
  for (std::size_t i = 0; i < kp.size(); ++i) {
    const int col = static_cast<int>(kp.points[i].x), row = static_cast<int>(kp.points[i].y);
    EXPECT_EQ(kp.scores[i], out.scores(0, row, col));
    for (int c = 0; c < 4; ++c) EXPECT_NEAR(kp.descriptors.row(i)[c], out.descriptors(c, row, col), 1e-12);
  }
}

TEST(DescribeAt, CellCenterGivesThatCell) {
  Rng rng(7);
  const FeatureOutput out = random_output(4, 5, 5, rng, 2);
  const DescriptorSet d = describe_at(out, {out.cell_center(2, 3)});
  for (int c = 0; c < 4; ++c) EXPECT_NEAR(d.row(0)[c], out.descriptors(c, 2, 3), 1e-12);
}

TEST(DescribeAt, MidpointOfOrthogonalCells) {
  FeatureOutput out = with_scores(Tensor(1, 1, 2, 0.5));
  out.descriptors = Tensor(4, 1, 2, 0.0);
  out.descriptors(0, 0, 0) = 1.0;
  out.descriptors(1, 0, 1) = 1.0;
  const DescriptorSet d = describe_at(out, {{1.0, 0.5}});
  EXPECT_NEAR(d.row(0)[0], 1 / std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(d.row(0)[1], 1 / std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(std::hypot(d.row(0)[0], d.row(0)[1]), 1.0, 1e-6);
}

TEST(DescribeAt, MatchesPerChannelOracle) {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const int stride = 1 << uniform_index(rng, 3);
    const FeatureOutput out = random_output(4, 3 + static_cast<int>(uniform_index(rng, 8)),
                                            3 + static_cast<int>(uniform_index(rng, 8)), rng, stride);
    std::vector<Point2> pts(10);
    for (auto& p : pts) p = {uniform(rng, 0, out.image_size.width - 1e-9), uniform(rng, 0, out.image_size.height - 1e-9)};
    const DescriptorSet d = describe_at(out, pts);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const auto o = oracle_descriptor(out, pts[i]);
      for (int c = 0; c < 4; ++c) EXPECT_NEAR(d.row(i)[c], o[c], 1e-6);
    }
    const auto s = scores_at(out, pts);
    for (std::size_t i = 0; i < pts.size(); ++i) EXPECT_NEAR(s[i], oracle_score(out, pts[i]), 1e-12);
  }
}

TEST(DescribeAt, OutOfRangeNamesThePoint) {
  Rng rng(9);
  const FeatureOutput out = random_output(4, 4, 4, rng);
  try {
    describe_at(out, {{1, 1}, {4.5, 1}});
    FAIL() << "expected out_of_range";
  } catch (const std::out_of_range& e) {
    EXPECT_NE(std::string(e.what()).find("4.5"), std::string::npos) << e.what();
  }
}

TEST(Checkpoint, RoundTripIsExact) {
  TempDir dir("ckpt");
  ModelConfig cfg = tiny_model(21);
  cfg.stride = 2;
  cfg.nms_radius = 3.5;
  const ConvNet net(cfg);
  Checkpoint ck;
  store_model(net, ck);
  ck.meta["note"] = "tab\tand\nnewline";
  ck.save(dir / "m.ckpt");
  const Checkpoint back = Checkpoint::load(dir / "m.ckpt");
  EXPECT_EQ(back.meta, ck.meta);
  const ConvNet restored = restore_model(back);
  EXPECT_EQ(restored.parameters(), net.parameters());
  EXPECT_EQ(restored.config().to_text(), cfg.to_text());
}

TEST(Checkpoint, CorruptFileIsRejected) {
  TempDir dir("corrupt");
  Checkpoint ck;
  store_model(ConvNet(tiny_model()), ck);
  ck.save(dir / "m.ckpt");
  std::fstream f(dir / "m.ckpt", std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(40);
  f.put('\x7f');
  f.close();
  EXPECT_THROW(Checkpoint::load(dir / "m.ckpt"), ConfigError);
  std::ofstream(dir / "short.ckpt") << "XMODALCK";
  EXPECT_THROW(Checkpoint::load(dir / "short.ckpt"), ConfigError);
  EXPECT_THROW(Checkpoint::load(dir / "missing.ckpt"), ConfigError);
}

TEST(Checkpoint, ShapeMismatchNamesTheTensor) {
  Checkpoint ck;
  store_model(ConvNet(tiny_model()), ck);
  Parameter& p = ck.tensors[0];
  p.shape[0] += 1;
  p.values.resize(p.values.size() + p.values.size() / (p.shape[0] - 1));
  try {
    restore_model(ck);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find(p.name.substr(p.name.find('/') + 1)), std::string::npos) << e.what();
  }
}

TEST(ModelConfig, Validation) {
  ModelConfig c = tiny_model();
  c.descriptor_dim = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_model();
  c.stride = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_model();
  c.widths = {4, 4};
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(ModelConfig, TextRoundTrip) {
  ModelConfig c = tiny_model(99);
  c.widths = {5, 6, 7};
  c.stride = 4;
  const ModelConfig back = ModelConfig::from_text(c.to_text());
  EXPECT_EQ(back.widths, c.widths);
  EXPECT_EQ(back.stride, 4);
  EXPECT_EQ(back.seed, 99u);
  EXPECT_EQ(back.descriptor_dim, c.descriptor_dim);
}

}  // namespace
