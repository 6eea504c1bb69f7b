#include <gtest/gtest.h>

#include <sstream>

#include "rmgpmsi/backbone.hpp"

using namespace rmgpmsi;
using backbone::partition_stages;

namespace {

/// Independent oracle: count strict increases by a plain scan.
std::size_t count_stages(const std::vector<std::size_t>& profile) {
  std::size_t n = 1;
  for (std::size_t i = 0; i + 1 < profile.size(); ++i)
    if (profile[i + 1] > profile[i]) ++n;
  return n;
}

Tensor<double> random_input(std::size_t b, std::size_t side, Rng& rng) {
  Tensor<double> x(b, 3, side, side);
  for (auto& v : x.values()) v = rng.uniform();
  return x;
}

}  // namespace

TEST(PartitionStages, SplitsAtChannelIncreases) {
  const std::vector<std::size_t> profile{16, 16, 24, 24, 32};
  const auto p = partition_stages(profile);
  EXPECT_EQ(p.stages(), 3u);
  // boundaries hold the first layer of each later stage: after indices 1 and 3
  EXPECT_EQ(p.boundaries, (std::vector<std::size_t>{2, 4}));
  EXPECT_EQ(p.channels_per_stage, (std::vector<std::size_t>{16, 24, 32}));
  EXPECT_EQ(p.begin(1), 0u);
  EXPECT_EQ(p.end(3), 5u);
}

TEST(PartitionStages, ConstantProfileIsOneStage) {
  const std::vector<std::size_t> profile{64, 64, 64};
  EXPECT_EQ(partition_stages(profile).stages(), 1u);
}

TEST(PartitionStages, MobileNetV2Profile) {
  const std::vector<std::size_t> profile{32, 16, 24, 32, 64, 96, 160, 320, 1280};
  const auto p = partition_stages(profile);
  EXPECT_EQ(p.stages(), count_stages(profile));
  EXPECT_EQ(p.stages(), 8u);
  for (std::size_t i = 1; i < p.channels_per_stage.size(); ++i)
    EXPECT_GT(p.channels_per_stage[i], p.channels_per_stage[i - 1]);
}

TEST(PartitionStages, EmptyProfileFails) {
  try {
    (void)partition_stages(std::vector<std::size_t>{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::EmptyProfile);
  }
}

TEST(PartitionStages, IdempotentOnStageChannels) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    // Non-decreasing after an optional leading drop, like real CNN profiles.
    std::vector<std::size_t> profile{8 * (1 + rng.uniform_index(6))};
    std::size_t c = 8;
    for (std::size_t i = rng.uniform_index(12); i > 0; --i) {
      c += 8 * rng.uniform_index(2);
      profile.push_back(c);
    }
    const auto p = partition_stages(profile);
    EXPECT_EQ(p.stages(), count_stages(profile));
    const auto again = partition_stages(p.channels_per_stage);
    EXPECT_EQ(again.channels_per_stage, p.channels_per_stage);
    for (std::size_t i = 1; i < p.boundaries.size(); ++i) EXPECT_GT(p.boundaries[i], p.boundaries[i - 1]);
  }
}

TEST(TinyNet, StageShapes) {
  Rng rng(1);
  backbone::BackboneSpec spec;
  auto net = backbone::make_tinynet<double>(spec, rng);
  ASSERT_EQ(net.stages(), 5u);
  const auto maps = net.forward_stages(random_input(2, 64, rng), nn::Mode::Train);
  // Shape arithmetic: out = floor((in + 2*pad - k) / stride) + 1 with k=3, pad=1, stride=2.
  std::size_t side = 64;
  const std::vector<std::size_t> channels{8, 16, 32, 64, 128};
  ASSERT_EQ(maps.stages(), 5u);
  for (std::size_t n = 1; n <= 5; ++n) {
    side = (side + 2 - 3) / 2 + 1;
    EXPECT_EQ(maps.stage(n).h(), side);
    EXPECT_EQ(maps.stage(n).w(), side);
    EXPECT_EQ(maps.stage(n).c(), channels[n - 1]);
  }
  EXPECT_EQ(maps.stage(5).h(), 2u);
}

TEST(TinyNet, EvalIsDeterministicAndChainsStageByStage) {
  Rng rng(2);
  auto net = backbone::make_tinynet<double>(backbone::BackboneSpec{}, rng);
  const auto x = random_input(3, 64, rng);
  net.forward_stages(x, nn::Mode::Train);  // move running stats off their defaults
  const auto a = net.forward_stages(x, nn::Mode::Eval);
  const auto b = net.forward_stages(x, nn::Mode::Eval);
  Tensor<double> h = x;
  for (std::size_t n = 1; n <= 5; ++n) {
    EXPECT_EQ(a.stage(n), b.stage(n));
    h = net.forward_stage(n, h, nn::Mode::Eval);
    EXPECT_EQ(h, a.stage(n));
  }
}

TEST(TinyNet, ZeroImageThroughLinearVariantGivesZeroMaps) {
  Rng rng(3);
  backbone::BackboneSpec spec;
  spec.bias = false;
  spec.normalization = false;
  auto net = backbone::make_tinynet<double>(spec, rng);
  const auto maps = net.forward_stages(Tensor<double>(1, 3, 64, 64), nn::Mode::Eval);
  for (const auto& m : maps.maps)
    for (double v : m.values()) EXPECT_EQ(v, 0.0);
}

TEST(TinyNet, ShapeMismatch) {
  Rng rng(4);
  auto net = backbone::make_tinynet<double>(backbone::BackboneSpec{}, rng);
  try {
    (void)net.forward_stages(Tensor<double>(1, 3, 32, 32), nn::Mode::Eval);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ShapeMismatch);
  }
}

TEST(TinyNet, BackwardReportsTotalStageGradients) {
  Rng rng(5);
  backbone::BackboneSpec spec;
  spec.channels = {2, 3, 4};
  spec.stages = 3;
  spec.input_size = 16;
  auto net = backbone::make_tinynet<double>(spec, rng);
  const auto x = random_input(2, 16, rng);
  const auto maps = net.forward_stages(x, nn::Mode::Train);
  std::vector<std::optional<Tensor<double>>> grads(3);
  grads[2] = Tensor<double>::like(maps.stage(3), 1.0);
  std::vector<Tensor<double>> totals;
  for (auto* p : net.params()) p->grad.zero();
  net.backward(grads, &totals);
  ASSERT_EQ(totals.size(), 3u);
  EXPECT_EQ(totals[2], grads[2].value());
  EXPECT_EQ(totals[1].shape(), maps.stage(2).shape());
  double mag = 0;
  for (double v : totals[0].values()) mag += std::abs(v);
  EXPECT_GT(mag, 0.0);
}

TEST(BackboneSpec, ParsesKeyValueText) {
  std::istringstream is("# tiny\nstages = 3\nchannels = 4, 8, 16\ninput_size = 32\n");
  const auto spec = backbone::parse_backbone_spec(is);
  EXPECT_EQ(spec.stages, 3u);
  EXPECT_EQ(spec.channels, (std::vector<std::size_t>{4, 8, 16}));
  EXPECT_EQ(spec.input_size, 32u);
  std::istringstream bad("stages = 2\nchannels = 4\n");
  EXPECT_THROW((void)backbone::parse_backbone_spec(bad), Error);
}
