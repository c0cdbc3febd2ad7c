#include "fcac/manifest.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <unordered_set>

namespace fcac {

namespace fs = std::filesystem;
using nlohmann::json;

fs::path Manifest::resolve(const std::string& relative) const {
  const fs::path p(relative);
  return p.is_absolute() ? p : base_dir / p;
}

const char* to_string(DataKind kind) { return kind == DataKind::audio ? "audio" : "embeddings"; }

namespace {

std::vector<ClipRef> parse_clips(const json& arr, const std::string& where) {
  if (!arr.is_array()) throw ManifestError(where + " must be an array");
  std::vector<ClipRef> out;
  for (const auto& item : arr) {
    if (!item.is_object() || !item.contains("id") || !item.contains("label")) {
      throw ManifestError(where + ": every clip needs an id and a label");
    }
    ClipRef c;
    c.id = item.at("id").get<std::string>();
    c.label = item.at("label").get<ClassId>();
    c.path = item.value("path", std::string{});
    out.push_back(std::move(c));
  }
  return out;
}

json clips_to_json(const std::vector<ClipRef>& clips) {
  json arr = json::array();
  for (const auto& c : clips) {
    json item{{"id", c.id}, {"label", c.label}};
    if (!c.path.empty()) item["path"] = c.path;
    arr.push_back(std::move(item));
  }
  return arr;
}

}  // namespace

Manifest parse_manifest(const json& doc, const fs::path& base_dir) {
  Manifest m;
  m.base_dir = base_dir;
  try {
    const auto kind = doc.value("kind", std::string("embeddings"));
    if (kind == "audio") {
      m.kind = DataKind::audio;
    } else if (kind == "embeddings") {
      m.kind = DataKind::embeddings;
    } else {
      throw ManifestError("unknown manifest kind '" + kind + "'");
    }
    m.embedding_file = doc.value("embedding_file", std::string{});
    m.ways = doc.value("ways", std::size_t{5});
    m.shots = doc.value("shots", std::size_t{5});
    if (doc.contains("split")) {
      BaseSplit s;
      s.pseudo_base = doc.at("split").at("pseudo_base").get<std::vector<ClassId>>();
      s.pseudo_novel = doc.at("split").at("pseudo_novel").get<std::vector<ClassId>>();
      m.split = std::move(s);
    }
    if (!doc.contains("sessions")) throw ManifestError("manifest has no sessions");
    std::size_t index = 0;
    for (const auto& s : doc.at("sessions")) {
      SessionDataset ds;
      ds.index = index++;
      const auto where = "session " + std::to_string(ds.index);
      ds.labels = s.at("labels").get<std::vector<ClassId>>();
      ds.train = parse_clips(s.at("train"), where + " train");
      ds.eval = parse_clips(s.value("eval", json::array()), where + " eval");
      m.sessions.push_back(std::move(ds));
    }
  } catch (const json::exception& e) {
    throw ManifestError(std::string("malformed manifest: ") + e.what());
  }
  validate_manifest(m);
  return m;
}

Manifest load_manifest(const fs::path& path, bool check_files) {
  std::ifstream is(path);
  if (!is) throw ManifestError("cannot open manifest '" + path.string() + "'");
  json doc;
  try {
    doc = json::parse(is);
  } catch (const json::exception& e) {
    throw ManifestError("manifest '" + path.string() + "' is not valid JSON: " + e.what());
  }
  auto m = parse_manifest(doc, path.parent_path());
  if (check_files) validate_manifest(m, true);
  return m;
}

json manifest_to_json(const Manifest& m) {
  json doc;
  doc["kind"] = to_string(m.kind);
  if (!m.embedding_file.empty()) doc["embedding_file"] = m.embedding_file;
  doc["ways"] = m.ways;
  doc["shots"] = m.shots;
  if (m.split) doc["split"] = {{"pseudo_base", m.split->pseudo_base}, {"pseudo_novel", m.split->pseudo_novel}};
  json sessions = json::array();
  for (const auto& s : m.sessions) {
    sessions.push_back({{"labels", s.labels}, {"train", clips_to_json(s.train)}, {"eval", clips_to_json(s.eval)}});
  }
  doc["sessions"] = std::move(sessions);
  return doc;
}

void save_manifest(const fs::path& path, const Manifest& manifest) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open '" + path.string() + "' for writing");
  os << manifest_to_json(manifest).dump(1) << '\n';
}

void validate_manifest(const Manifest& m, bool check_files) {
  if (m.sessions.empty()) throw ManifestError("manifest has no sessions");
  if (m.ways < 1 || m.shots < 1) throw ManifestError("ways and shots must be positive");
  if (m.kind == DataKind::embeddings && m.embedding_file.empty()) {
    throw ManifestError("embedding manifests need an embedding_file");
  }
  std::map<ClassId, std::size_t> owner;
  std::unordered_set<std::string> ids;
  for (const auto& s : m.sessions) {
    const auto where = "session " + std::to_string(s.index);
    if (s.labels.empty()) throw ManifestError(where + " has no labels");
    const std::set<ClassId> labels(s.labels.begin(), s.labels.end());
    if (labels.size() != s.labels.size()) throw ManifestError(where + " lists a label twice");
    for (auto l : labels) {
      const auto [it, fresh] = owner.emplace(l, s.index);
      if (!fresh) {
        throw ManifestError("label " + std::to_string(l) + " appears in sessions " +
                            std::to_string(it->second) + " and " + std::to_string(s.index));
      }
    }
    std::map<ClassId, std::size_t> train_counts;
    std::set<ClassId> eval_labels;
    auto check_clip = [&](const ClipRef& c, const char* role) {
      if (!labels.count(c.label)) {
        throw ManifestError(where + " " + role + " clip '" + c.id + "' has label " +
                            std::to_string(c.label) + " outside the session's label set");
      }
      if (!ids.insert(c.id).second) throw ManifestError("duplicate clip id '" + c.id + "'");
      if (m.kind == DataKind::audio) {
        if (c.path.empty()) throw ManifestError("audio clip '" + c.id + "' has no path");
        if (check_files && !fs::exists(m.resolve(c.path))) {
          throw ManifestError("missing audio file '" + m.resolve(c.path).string() + "'");
        }
      }
    };
    for (const auto& c : s.train) {
      check_clip(c, "train");
      ++train_counts[c.label];
    }
    for (const auto& c : s.eval) {
      check_clip(c, "eval");
      eval_labels.insert(c.label);
    }
    if (train_counts.size() != labels.size()) {
      throw ManifestError(where + ": every label needs training clips");
    }
    if (!s.eval.empty() && eval_labels != labels) {
      throw ManifestError(where + ": train and eval splits must cover the same label set");
    }
    if (s.index > 0) {
      if (labels.size() != m.ways) {
        throw ManifestError(where + " has " + std::to_string(labels.size()) + " classes, expected " +
                            std::to_string(m.ways) + "-way");
      }
      for (const auto& [label, count] : train_counts) {
        if (count < m.shots) {
          throw ManifestError(where + " class " + std::to_string(label) + " has " + std::to_string(count) +
                              " training clips, fewer than " + std::to_string(m.shots) + " shots");
        }
      }
    }
  }
  if (m.split) {
    const std::set<ClassId> base(m.split->pseudo_base.begin(), m.split->pseudo_base.end());
    const std::set<ClassId> novel(m.split->pseudo_novel.begin(), m.split->pseudo_novel.end());
    std::set<ClassId> both = base;
    both.insert(novel.begin(), novel.end());
    const std::set<ClassId> l0(m.sessions[0].labels.begin(), m.sessions[0].labels.end());
    if (base.empty() || novel.empty() || both.size() != base.size() + novel.size() || both != l0) {
      throw ManifestError("pinned split must partition the base labels into two non-empty groups");
    }
  }
  if (check_files && m.kind == DataKind::embeddings && !fs::exists(m.resolve(m.embedding_file))) {
    throw ManifestError("missing embedding file '" + m.resolve(m.embedding_file).string() + "'");
  }
}

BaseSplit stdu_split(std::span<const ClassId> base_labels, std::size_t pseudo_novel_count,
                     std::uint64_t seed) {
  if (pseudo_novel_count == 0 || pseudo_novel_count >= base_labels.size()) {
    throw ConfigError("pseudo-novel class count must be in [1, " + std::to_string(base_labels.size()) + ")");
  }
  std::vector<ClassId> labels(base_labels.begin(), base_labels.end());
  std::sort(labels.begin(), labels.end());
  std::mt19937_64 rng(seed);
  std::shuffle(labels.begin(), labels.end(), rng);
  BaseSplit split;
  split.pseudo_novel.assign(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(pseudo_novel_count));
  split.pseudo_base.assign(labels.begin() + static_cast<std::ptrdiff_t>(pseudo_novel_count), labels.end());
  std::sort(split.pseudo_base.begin(), split.pseudo_base.end());
  std::sort(split.pseudo_novel.begin(), split.pseudo_novel.end());
  return split;
}

}  // namespace fcac
