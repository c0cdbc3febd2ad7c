#pragma once

// Checkpoint layout (all little-endian):
//   "FCACCKPT"            8-byte magic
//   u32 version           currently 1
//   u32 real_bytes        4 or 8; width of every real below
//   extractor section     u8 present; config; u8 frozen; u32 tensor count; per tensor u32 n + n reals
//   PAN section           u8 present; u32 D; u8 bias flag; f64 temperature; u32 tensor count; tensors
//   prototype table       u32 D; u32 count; u32 session index; per entry u32 class id + D reals
//   u32 CRC-32            over every preceding byte

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "fcac/classifier.hpp"
#include "fcac/embedding_extractor.hpp"
#include "fcac/pan.hpp"

namespace fcac {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::optional<EmbeddingExtractor> extractor;
  std::optional<PanParams> pan;
  PrototypeStore store;
};

struct CheckpointLayout {
  std::size_t total_bytes = 0;
  std::size_t bytes_per_real = 0;
  /// Bytes of prototype values alone (no ids, no header).
  std::size_t prototype_payload_bytes = 0;
};

std::vector<std::uint8_t> encode_checkpoint(const PrototypeStore& store,
                                            const EmbeddingExtractor* extractor,
                                            const PanParams* pan,
                                            CheckpointLayout* layout = nullptr);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

CheckpointLayout save_checkpoint(const std::filesystem::path& path, const PrototypeStore& store,
                                 const EmbeddingExtractor* extractor, const PanParams* pan);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes);

}  // namespace fcac
