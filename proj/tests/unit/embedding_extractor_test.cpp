#include <gtest/gtest.h>

#include <random>

#include "fcac/error.hpp"
#include "fcac/embedding_extractor.hpp"
#include "fcac/gradcheck.hpp"

using namespace fcac;

namespace {

EEConfig tiny_config(std::size_t classes = 3) {
  EEConfig c;
  c.width_scale = 1.0 / 16;  // widths 4, 8, 16, 32
  c.embedding_dim = 6;
  c.mel_bins = 8;
  c.num_classes = classes;
  return c;
}

LogMelSpectrogram random_spect(std::size_t frames, std::size_t bins, std::uint64_t seed, double offset = 0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(offset, 1.0);
  LogMelSpectrogram s;
  s.values = RealMatrix(frames, bins);
  for (auto& v : s.values.values) v = dist(rng);
  return s;
}

}  // namespace

TEST(EEConfig, DeskScaleAndWidths) {
  const auto c = EEConfig::desk_scale(5);
  EXPECT_EQ(c.embedding_dim, 16u);
  EXPECT_EQ(c.mel_bins, 32u);
  EXPECT_EQ(c.stage_widths(), (std::array<std::size_t, 4>{8, 16, 32, 64}));
  EXPECT_EQ(EEConfig{}.stage_widths(), (std::array<std::size_t, 4>{64, 128, 256, 512}));
}

TEST(EEConfig, RejectsBadValues) {
  auto c = tiny_config();
  c.blocks_per_stage = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config();
  c.width_scale = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(EmbeddingExtractor, OutputShapes) {
  const auto ee = EmbeddingExtractor::build(tiny_config(), 1);
  const auto spect = random_spect(20, 8, 2);
  EXPECT_EQ(ee.forward_embedding(spect).shape(), (Shape{1, 6}));
  EXPECT_EQ(ee.forward_logits(spect).shape(), (Shape{1, 3}));
  EXPECT_EQ(ee.embed(spect, "x").vector.size(), 6u);
  EXPECT_THROW(ee.embed(random_spect(20, 9, 2)), ShapeError);
}

TEST(EmbeddingExtractor, SeededBuildIsDeterministic) {
  const auto a = EmbeddingExtractor::build(tiny_config(), 7);
  const auto b = EmbeddingExtractor::build(tiny_config(), 7);
  const auto c = EmbeddingExtractor::build(tiny_config(), 8);
  EXPECT_EQ(a.parameter_hash(), b.parameter_hash());
  EXPECT_NE(a.parameter_hash(), c.parameter_hash());
}

TEST(EmbeddingExtractor, CopyIsDeep) {
  auto a = EmbeddingExtractor::build(tiny_config(), 3);
  const auto before = a.parameter_hash();
  EmbeddingExtractor b = a;
  b.mutable_parameters()[0].mutable_data()[0] += 1.0;
  EXPECT_EQ(a.parameter_hash(), before);
  EXPECT_NE(b.parameter_hash(), before);
}

TEST(EmbeddingExtractor, FreezeIsIdempotentAndRemovesHead) {
  auto ee = EmbeddingExtractor::build(tiny_config(), 4);
  const auto spect = random_spect(12, 8, 5);
  const auto before = ee.embed(spect).vector;
  ee.freeze();
  ee.freeze();
  EXPECT_TRUE(ee.frozen());
  EXPECT_EQ(ee.embed(spect).vector, before);
  EXPECT_THROW(ee.forward_logits(spect), StateError);
  EXPECT_THROW(ee.mutable_parameters(), StateError);
  EXPECT_FALSE(ee.forward_embedding(spect).requires_grad());
  std::vector<TrainingExample> data{{spect, 0}};
  EXPECT_THROW(train_ee(ee, data, {}), StateError);
}

TEST(EmbeddingExtractor, FromParametersRebuildsTheSameModel) {
  const auto ee = EmbeddingExtractor::build(tiny_config(), 9);
  std::vector<std::vector<Real>> values;
  for (const auto& p : ee.parameters()) values.emplace_back(p.data().begin(), p.data().end());
  const auto copy = EmbeddingExtractor::from_parameters(tiny_config(), values, false);
  EXPECT_EQ(copy.parameter_hash(), ee.parameter_hash());
  values.pop_back();
  EXPECT_THROW(EmbeddingExtractor::from_parameters(tiny_config(), values, false), FormatError);
}

TEST(EmbeddingExtractor, LossGradientMatchesFiniteDifferences) {
  auto ee = EmbeddingExtractor::build(tiny_config(2), 11);
  const auto spect = random_spect(9, 8, 12);
  const std::size_t label[] = {1};
  auto params = ee.mutable_parameters();
  GradCheckOptions opt;
  opt.max_coordinates = 60;
  opt.seed = 3;
  const auto r = finite_diff_check([&] { return cross_entropy(ee.forward_logits(spect), label); },
                                   params, opt);
  EXPECT_EQ(r.coordinates_checked, 60u);
  EXPECT_LT(r.max_relative_error, 1e-5);
}

TEST(EmbeddingExtractor, TrainsOnSeparableSpectrograms) {
  auto ee = EmbeddingExtractor::build(tiny_config(2), 13);
  std::vector<TrainingExample> data;
  for (std::size_t i = 0; i < 8; ++i) {
    data.push_back({random_spect(10, 8, 100 + i, -1.5), 0});
    data.push_back({random_spect(10, 8, 200 + i, 1.5), 1});
  }
  EETrainConfig tc;
  tc.epochs = 15;
  tc.learning_rate = 3e-3;
  tc.batch_size = 4;
  tc.seed = 1;
  const auto log = train_ee(ee, data, tc);
  ASSERT_EQ(log.epochs.size(), 15u);
  EXPECT_LT(log.epochs.back().mean_loss, log.epochs.front().mean_loss);
  EXPECT_GE(evaluate_accuracy(ee, data), 0.9);
}

TEST(EmbeddingExtractor, EpochCallbackStopsTraining) {
  auto ee = EmbeddingExtractor::build(tiny_config(2), 14);
  std::vector<TrainingExample> data{{random_spect(10, 8, 1), 0}, {random_spect(10, 8, 2), 1}};
  EETrainConfig tc;
  tc.epochs = 10;
  tc.on_epoch = [](std::size_t epoch, const EpochStats&) { return epoch < 2; };
  EXPECT_EQ(train_ee(ee, data, tc).epochs.size(), 3u);
}

TEST(EmbeddingExtractor, ResetHeadChangesClassCount) {
  auto ee = EmbeddingExtractor::build(tiny_config(2), 15);
  const auto spect = random_spect(10, 8, 3);
  const auto emb = ee.embed(spect).vector;
  ee.reset_head(5, 1);
  EXPECT_EQ(ee.forward_logits(spect).dim(1), 5u);
  EXPECT_EQ(ee.embed(spect).vector, emb);
}

TEST(EmbeddingExtractor, RejectsOutOfRangeLabels) {
  auto ee = EmbeddingExtractor::build(tiny_config(2), 16);
  std::vector<TrainingExample> data{{random_spect(10, 8, 1), 2}};
  EXPECT_THROW(train_ee(ee, data, {}), InvalidInput);
}
