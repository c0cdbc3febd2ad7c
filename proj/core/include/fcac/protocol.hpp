#pragma once

// Session protocol: base-session training (pre-train extractor on the
// pseudo-base classes, train the PAN episodically, train the extractor on all
// base classes and freeze it, build the base prototypes), then one classifier
// update per incremental session, each followed by evaluation on the union of
// all eval splits seen so far.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fcac/classifier.hpp"
#include "fcac/dsp.hpp"
#include "fcac/embedding_extractor.hpp"
#include "fcac/episode.hpp"
#include "fcac/manifest.hpp"
#include "fcac/metrics.hpp"
#include "fcac/pan.hpp"

namespace fcac {

enum class ExpansionMode { pan, naive };
const char* to_string(ExpansionMode mode);
ExpansionMode expansion_mode_from_string(const std::string& name);

struct ProtocolConfig {
  std::uint64_t seed = 0;
  ExpansionMode mode = ExpansionMode::pan;
  EvalMode eval_mode = EvalMode::pqam;

  DspConfig dsp;
  EEConfig extractor;  // num_classes and mel_bins are filled in from the data and dsp config
  EETrainConfig ee_pretrain;
  EETrainConfig ee_train;

  EpisodeConfig episode;
  Real temperature = Real(10);
  bool pan_bias = false;
  ConsolidationMode consolidation = ConsolidationMode::mean;
  /// Unset: round(|L0| * 25 / 55), clamped to [1, |L0| - 1].
  std::optional<std::size_t> pseudo_novel_classes;

  std::string feature_cache_dir;
  std::size_t workers = 1;

  /// Small preset for CI: tiny extractor, 32 mel bins, few epochs.
  static ProtocolConfig desk_scale();
};

nlohmann::json config_to_json(const ProtocolConfig& config);
/// Missing keys keep their defaults (or the "preset": "desk" values); unknown
/// enum names raise ConfigError.
ProtocolConfig config_from_json(const nlohmann::json& doc, ProtocolConfig base = {});
ProtocolConfig load_config(const std::filesystem::path& path);

/// Resolves clips to embeddings: table lookups for embedding manifests, log-mel
/// extraction (optionally cached on disk) plus the extractor for audio manifests.
class ClipEmbedder {
 public:
  ClipEmbedder(const Manifest& manifest, const ProtocolConfig& config);

  std::size_t table_dim() const { return table_.dim(); }
  const LogMelSpectrogram& spectrogram(const ClipRef& clip);
  Embedding embed(const ClipRef& clip, const EmbeddingExtractor* extractor);
  /// Order-preserving; extractor forward passes fan out over `workers` threads.
  std::vector<Embedding> embed_all(std::span<const ClipRef> clips, const EmbeddingExtractor* extractor);

 private:
  const Manifest& manifest_;
  ProtocolConfig config_;
  EmbeddingTable table_;
  std::map<std::string, LogMelSpectrogram> spectrograms_;
};

struct BaseTrainingLog {
  BaseSplit split;
  EETrainingLog ee_pretrain;
  EETrainingLog ee_train;
  std::vector<Real> pan_epoch_losses;
  std::size_t pan_episodes = 0;
};

struct BaseModel {
  std::optional<EmbeddingExtractor> extractor;
  std::optional<PanParams> pan;
  PrototypeStore store;
  BaseTrainingLog log;
};

BaseModel train_base(const Manifest& manifest, const ProtocolConfig& config);

struct SessionResult {
  std::size_t index = 0;
  std::map<Partition, std::optional<Real>> accuracy;
  std::map<Partition, std::size_t> samples;
  /// Same partitions under the other eval mode (PAN runs only).
  std::map<Partition, std::optional<Real>> alternate_accuracy;
  std::size_t store_size = 0;
  std::size_t support_count = 0;
  std::size_t query_count = 0;
  double update_seconds = 0;
};

struct SessionReport {
  std::string mode;
  std::string eval_mode;
  std::string alternate_eval_mode;  // empty for naive runs
  std::uint64_t seed = 0;
  std::size_t dim = 0;
  std::vector<SessionResult> sessions;
  std::map<Partition, std::optional<Real>> aa;
  std::map<Partition, std::optional<Real>> pd;
  ConfusionMatrix final_confusion;
  std::size_t incremental_classes = 0;
  std::size_t ss_elements = 0;
  std::optional<double> att_seconds;
  std::string hardware_note;
  /// Set when a session failed; the sessions before it are still reported.
  std::optional<std::string> failure;

  std::vector<std::optional<Real>> accuracy_row(Partition p) const;
  /// Fills aa/pd from the per-session rows.
  void compute_summary();
};

struct IncrementalResult {
  PrototypeStore store;
  SessionReport report;
};

/// Evaluates session 0, then expands and evaluates every incremental session.
IncrementalResult run_incremental(const BaseModel& base, const Manifest& manifest,
                                  const ProtocolConfig& config);

struct ProtocolResult {
  BaseModel base;
  PrototypeStore final_store;
  SessionReport report;
};

ProtocolResult run_protocol(const Manifest& manifest, const ProtocolConfig& config);

/// Predictions for every clip against `store`; order matches `clips`.
std::vector<Prediction> evaluate_store(const PrototypeStore& store, std::span<const Embedding> clips,
                                       EvalMode mode, const PanParams* pan,
                                       std::size_t workers = 1);

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace fcac
