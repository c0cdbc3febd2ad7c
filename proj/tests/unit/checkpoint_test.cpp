#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "fcac/binary_io.hpp"
#include "fcac/checkpoint.hpp"
#include "fcac/error.hpp"
#include "fcac/synth.hpp"

using namespace fcac;

namespace {

PrototypeStore random_store(std::size_t classes, std::size_t dim, std::uint64_t seed) {
  const GaussianClasses world(classes, dim, 5.0, 1.0, seed);
  std::mt19937_64 rng(seed);
  std::vector<Embedding> items;
  for (ClassId c = 0; c < classes; ++c) {
    auto v = world.sample(c, 3, rng, "c" + std::to_string(c) + "_");
    items.insert(items.end(), v.begin(), v.end());
  }
  auto store = build_base(items);
  store.set_session_index(2);
  return store;
}

EEConfig tiny_ee() {
  EEConfig c;
  c.width_scale = 1.0 / 16;
  c.embedding_dim = 4;
  c.mel_bins = 8;
  c.num_classes = 3;
  return c;
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
  const auto store = random_store(6, 4, 1);
  auto ee = EmbeddingExtractor::build(tiny_ee(), 2);
  ee.freeze();
  const auto pan = PanParams::init(4, 3, true, 7.5);
  const auto bytes = encode_checkpoint(store, &ee, &pan);
  const auto back = decode_checkpoint(bytes);
  EXPECT_EQ(back.store.hash(), store.hash());
  ASSERT_TRUE(back.extractor.has_value());
  EXPECT_TRUE(back.extractor->frozen());
  EXPECT_EQ(back.extractor->parameter_hash(), ee.parameter_hash());
  ASSERT_TRUE(back.pan.has_value());
  EXPECT_EQ(back.pan->temperature, 7.5);
  EXPECT_TRUE(back.pan->apgm.use_bias());
  EXPECT_EQ(encode_checkpoint(back.store, &*back.extractor, &*back.pan), bytes);
}

TEST(Checkpoint, OptionalSectionsMayBeAbsent) {
  const auto store = random_store(3, 5, 4);
  const auto back = decode_checkpoint(encode_checkpoint(store, nullptr, nullptr));
  EXPECT_FALSE(back.extractor.has_value());
  EXPECT_FALSE(back.pan.has_value());
  EXPECT_EQ(back.store.hash(), store.hash());
}

TEST(Checkpoint, SaveLoadSaveGivesIdenticalFiles) {
  const auto dir = std::filesystem::temp_directory_path() / "fcac_ckpt_test";
  std::filesystem::create_directories(dir);
  const auto store = random_store(4, 4, 5);
  const auto pan = PanParams::init(4, 6);
  save_checkpoint(dir / "a.ckpt", store, nullptr, &pan);
  const auto loaded = load_checkpoint(dir / "a.ckpt");
  save_checkpoint(dir / "b.ckpt", loaded.store, nullptr, &*loaded.pan);
  EXPECT_EQ(read_file_bytes(dir / "a.ckpt"), read_file_bytes(dir / "b.ckpt"));
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, DetectsCorruption) {
  const auto bytes = encode_checkpoint(random_store(3, 4, 7), nullptr, nullptr);
  auto truncated = bytes;
  truncated.resize(bytes.size() / 2);
  EXPECT_THROW(decode_checkpoint(truncated), FormatError);
  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x40;
  EXPECT_THROW(decode_checkpoint(flipped), FormatError);
  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(magic), FormatError);
  EXPECT_THROW(load_checkpoint("/nonexistent/fcac.ckpt"), NotFound);
}

TEST(Checkpoint, PrototypePayloadIsClassesTimesDim) {
  CheckpointLayout layout;
  const auto store = random_store(40, 512, 8);
  encode_checkpoint(store, nullptr, nullptr, &layout);
  EXPECT_EQ(prototype_payload_elements(store), 20480u);
  EXPECT_EQ(layout.prototype_payload_bytes, 20480u * layout.bytes_per_real);
}

TEST(Checkpoint, Crc32KnownValue) {
  const std::string text = "123456789";
  const std::vector<std::uint8_t> bytes(text.begin(), text.end());
  EXPECT_EQ(crc32_of(bytes), 0xCBF43926u);
}
