#include <gtest/gtest.h>

#include <random>

#include "zico/genome.hpp"

using namespace zico;

namespace {

Genome effnet() {
  Genome g;
  g.family = Family::effnet_like;
  g.stages = {{2, 32, 3, ConvMode::group, 1, 4}, {3, 64, 5, ConvMode::regular, 2, 6}};
  g.input_height = g.input_width = 16;
  return g;
}

Genome resnet() {
  Genome g;
  g.stages = {{1, 32, 3, ConvMode::regular, 1}, {2, 128, 5, ConvMode::group, 2}};
  g.input_height = g.input_width = 8;
  return g;
}

void expect_field_error(const Genome& g, const std::string& field) {
  try {
    validate(g);
    FAIL() << "expected ValueError naming " << field;
  } catch (const ValueError& e) {
    EXPECT_EQ(std::string(e.what()).rfind(field, 0), 0u) << e.what();
  }
}

}  // namespace

TEST(Genome, GroupSizes) {
  EXPECT_EQ(group_size(Family::resnet_like, 256), 128);
  EXPECT_EQ(group_size(Family::resnet_like, 192), 64);
  EXPECT_EQ(group_size(Family::resnet_like, 96), 32);
  EXPECT_EQ(group_size(Family::resnet_like, 48), 0);
  EXPECT_EQ(group_size(Family::effnet_like, 256), 32);
  EXPECT_EQ(conv_groups(Family::effnet_like, ConvMode::group, 64, 256), 8);
  EXPECT_EQ(conv_groups(Family::resnet_like, ConvMode::depthwise, 64, 64), 64);
}

TEST(Genome, ValidateNamesTheField) {
  EXPECT_NO_THROW(validate(effnet()));
  EXPECT_NO_THROW(validate(resnet()));
  auto g = resnet();
  g.stages[0].channels = 20;
  expect_field_error(g, "stages[0].channels");
  g = resnet();
  g.stages[1].kernel = 7;
  expect_field_error(g, "stages[1].kernel");
  g = resnet();
  g.stages[0].conv_mode = ConvMode::group;
  g.stages[0].channels = 40;
  expect_field_error(g, "stages[0].conv_mode");
  g = resnet();
  g.stages[0].expansion = 6;
  expect_field_error(g, "stages[0].expansion");
  g = resnet();
  g.stages.clear();
  expect_field_error(g, "stages");
  g = resnet();
  g.stages[0].repeats = 13;
  expect_field_error(g, "stages[0].repeats");
}

TEST(Genome, ResolutionUnderflow) {
  auto g = resnet();
  g.input_height = g.input_width = 2;
  g.stages = {{1, 32, 3, ConvMode::regular, 2}, {1, 32, 3, ConvMode::regular, 2}};
  try {
    validate(g);
    FAIL();
  } catch (const ValueError& e) {
    EXPECT_NE(std::string(e.what()).find("underflow"), std::string::npos);
  }
  g.input_height = g.input_width = 6;
  expect_field_error(g, "input_resolution");
}

TEST(Genome, JsonRoundTripIsByteStable) {
  for (const auto& g : {effnet(), resnet()}) {
    const std::string text = serialize(g);
    EXPECT_EQ(parse_genome(text), g);
    EXPECT_EQ(serialize(parse_genome(text)), text);
  }
  EXPECT_EQ(serialize(resnet()).find("expansion"), std::string::npos);
}

TEST(Genome, ParseRejectsUnknownAndMissingFields) {
  auto j = to_json(resnet());
  j["stages"][0]["dilation"] = 2;
  EXPECT_THROW(genome_from_json(j), ParseError);
  j = to_json(resnet());
  j.erase("num_classes");
  EXPECT_THROW(genome_from_json(j), ParseError);
  j = to_json(resnet());
  j["family"] = "mobilenet";
  EXPECT_THROW(genome_from_json(j), ParseError);
  EXPECT_THROW(parse_genome("{not json"), ParseError);
}

TEST(Genome, DepthAndMeanWidth) {
  const auto g = resnet();
  EXPECT_EQ(total_blocks(g), 3);
  EXPECT_DOUBLE_EQ(mean_width(g), (32.0 + 2 * 128.0) / 3.0);
}

TEST(Mutation, ZeroRatesIsIdentity) {
  MutationConfig cfg;
  for (std::uint64_t s = 0; s < 50; ++s) {
    EXPECT_EQ(mutate(effnet(), cfg, s), effnet());
    EXPECT_EQ(mutate(resnet(), cfg, s), resnet());
  }
}

TEST(Mutation, SelfCrossoverIsIdentity) {
  for (std::uint64_t s = 0; s < 50; ++s) {
    EXPECT_EQ(crossover(effnet(), effnet(), s), effnet());
    EXPECT_EQ(crossover(resnet(), resnet(), s), resnet());
  }
}

TEST(Mutation, ChildrenAlwaysValidate) {
  MutationConfig cfg{MutationRates::uniform(0.5), {}};
  cfg.bounds.allow_depthwise = true;
  cfg.bounds.expansions = {1, 2, 4, 6};
  std::mt19937_64 rng(17);
  for (const auto& parent : {effnet(), resnet()}) {
    Genome g = parent;
    for (int i = 0; i < 5000; ++i) {
      g = mutate(g, cfg, rng);
      ASSERT_TRUE(is_valid(g)) << serialize(g);
    }
  }
}

TEST(Mutation, CrossoverOfSpaceSamplesValidates) {
  const GenomeSpace space(resnet(), SpaceBounds{});
  std::mt19937_64 rng(3);
  for (int i = 0; i < 500; ++i) {
    const auto a = space.sample(rng), b = space.sample(rng);
    ASSERT_TRUE(is_valid(a));
    const auto c = space.crossover(a, b, rng);
    ASSERT_TRUE(is_valid(c));
    for (std::size_t s = 0; s < c.stages.size(); ++s) EXPECT_EQ(c.stages[s].stride, a.stages[s].stride);
  }
}

TEST(Mutation, CrossoverRejectsIncompatibleParents) {
  EXPECT_THROW(crossover(effnet(), resnet(), 1), ValueError);
  auto short_g = resnet();
  short_g.stages.pop_back();
  EXPECT_THROW(crossover(resnet(), short_g, 1), ValueError);
}

TEST(Mutation, SpaceRejectsBadBounds) {
  SpaceBounds b;
  b.min_channels = 64;
  b.max_channels = 32;
  EXPECT_THROW(GenomeSpace(resnet(), b), ValueError);
  b = SpaceBounds{};
  b.kernels = {7};
  EXPECT_THROW(GenomeSpace(resnet(), b), ValueError);
}
