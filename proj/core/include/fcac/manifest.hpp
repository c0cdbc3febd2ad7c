#pragma once

// Session manifests: one JSON document describing every session's label set
// and its train/eval clips.
//
// {
//   "kind": "audio" | "embeddings",
//   "embedding_file": "embeddings.txt",          (embeddings kind only)
//   "ways": 5, "shots": 5,
//   "split": {"pseudo_base": [...], "pseudo_novel": [...]},   (optional pinned base split)
//   "sessions": [
//     {"labels": [0, 1, ...],
//      "train": [{"id": "c0_000", "label": 0, "path": "audio/c0_000.wav"}, ...],
//      "eval":  [...]},
//     ...
//   ]
// }
// Relative paths resolve against the manifest's directory.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fcac/error.hpp"
#include "fcac/real.hpp"

namespace fcac {

class ManifestError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

enum class DataKind { audio, embeddings };

struct ClipRef {
  std::string id;
  ClassId label = 0;
  std::string path;  // audio manifests only
};

struct SessionDataset {
  std::size_t index = 0;
  std::vector<ClassId> labels;
  std::vector<ClipRef> train;
  std::vector<ClipRef> eval;
};

struct BaseSplit {
  std::vector<ClassId> pseudo_base;
  std::vector<ClassId> pseudo_novel;
};

struct Manifest {
  DataKind kind = DataKind::embeddings;
  std::filesystem::path base_dir;
  std::string embedding_file;
  std::size_t ways = 5;
  std::size_t shots = 5;
  std::vector<SessionDataset> sessions;
  std::optional<BaseSplit> split;

  std::filesystem::path resolve(const std::string& relative) const;
};

/// Parses and validates. Structural problems raise ManifestError.
Manifest load_manifest(const std::filesystem::path& path, bool check_files = true);
Manifest parse_manifest(const nlohmann::json& doc, const std::filesystem::path& base_dir);
nlohmann::json manifest_to_json(const Manifest& manifest);
void save_manifest(const std::filesystem::path& path, const Manifest& manifest);

/// Label sets pairwise disjoint, train/eval label sets equal, incremental
/// sessions N-way with >= K shots, unique clip ids, consistent pinned split.
void validate_manifest(const Manifest& manifest, bool check_files = false);

/// Seeded class-level partition of the base labels into pseudo-base and pseudo-novel groups.
BaseSplit stdu_split(std::span<const ClassId> base_labels, std::size_t pseudo_novel_count,
                     std::uint64_t seed);

const char* to_string(DataKind kind);

}  // namespace fcac
