#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "fcac/real.hpp"

namespace fcac {

struct Embedding {
  std::string clip_id;
  std::optional<ClassId> class_id;
  std::vector<Real> vector;
};

/// clip_id -> Embedding lookup with a fixed dimension.
class EmbeddingTable {
 public:
  explicit EmbeddingTable(std::size_t dim = 0) : dim_(dim) {}

  /// Rejects duplicate ids and vectors of the wrong length.
  void add(Embedding e);

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return records_.size(); }
  bool contains(const std::string& clip_id) const { return index_.count(clip_id) != 0; }
  /// Throws NotFound for unknown ids.
  const Embedding& at(const std::string& clip_id) const;
  std::span<const Embedding> records() const { return records_; }

 private:
  std::size_t dim_;
  std::vector<Embedding> records_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Text format:   "DIM <D>" header, then "clip_id<TAB>class_id<TAB>v0,v1,..." per record;
//                an absent class id is written as "-". Values use shortest round-trip decimals.
// Binary format: u32 record count, u32 D, then per record u32-length-prefixed clip id,
//                i32 class id (-1 when absent) and D float32 values, all little-endian.
void save_embeddings_text(const std::filesystem::path& path, std::span<const Embedding> records,
                          std::size_t dim);
void save_embeddings_binary(const std::filesystem::path& path,
                            std::span<const Embedding> records, std::size_t dim);

/// Loads either format (text files start with "DIM ").
EmbeddingTable load_precomputed(const std::filesystem::path& path);

}  // namespace fcac
