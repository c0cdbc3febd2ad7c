#include "fcac/protocol.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "fcac/error.hpp"
#include "fcac/wav.hpp"

namespace fcac {

namespace {

using json = nlohmann::json;

// Stream ids for derive_seed.
constexpr std::uint64_t kSplitStream = 1;
constexpr std::uint64_t kPretrainInitStream = 2;
constexpr std::uint64_t kPretrainStream = 3;
constexpr std::uint64_t kPanInitStream = 4;
constexpr std::uint64_t kPanTrainStream = 5;
constexpr std::uint64_t kHeadStream = 6;
constexpr std::uint64_t kTrainStream = 7;
constexpr std::uint64_t kSessionStream = 100;

template <typename T>
void read_if(const json& doc, const char* key, T& out) {
  if (!doc.contains(key) || doc.at(key).is_null()) return;
  try {
    out = doc.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

json train_config_json(const EETrainConfig& c) {
  return {{"epochs", c.epochs}, {"learning_rate", c.learning_rate}, {"batch_size", c.batch_size}};
}

void read_train_config(const json& doc, EETrainConfig& c) {
  read_if(doc, "epochs", c.epochs);
  read_if(doc, "learning_rate", c.learning_rate);
  read_if(doc, "batch_size", c.batch_size);
}

std::set<ClassId> label_set(std::span<const SessionDataset> sessions) {
  std::set<ClassId> out;
  for (const auto& s : sessions) out.insert(s.labels.begin(), s.labels.end());
  return out;
}

std::size_t pseudo_novel_count(const ProtocolConfig& config, std::size_t base_classes) {
  if (config.pseudo_novel_classes) return *config.pseudo_novel_classes;
  if (base_classes < 2) throw ProtocolError("the base session needs at least two classes");
  const auto n = static_cast<std::size_t>(std::lround(double(base_classes) * 25.0 / 55.0));
  return std::clamp<std::size_t>(n, 1, base_classes - 1);
}

std::vector<Embedding> filter_labels(std::span<const Embedding> items, std::span<const ClassId> labels) {
  const std::set<ClassId> keep(labels.begin(), labels.end());
  std::vector<Embedding> out;
  for (const auto& e : items) {
    if (e.class_id && keep.count(*e.class_id)) out.push_back(e);
  }
  return out;
}

std::vector<TrainingExample> training_examples(ClipEmbedder& embedder, std::span<const ClipRef> clips,
                                               std::span<const ClassId> labels) {
  std::map<ClassId, std::size_t> index;
  for (auto l : labels) index.emplace(l, index.size());
  std::vector<TrainingExample> out;
  for (const auto& clip : clips) {
    const auto it = index.find(clip.label);
    if (it == index.end()) continue;
    out.push_back({embedder.spectrogram(clip), it->second});
  }
  return out;
}

std::string hardware_note() {
  std::ostringstream os;
  os << std::thread::hardware_concurrency() << " hardware threads";
#if defined(__clang__)
  os << ", clang " << __clang_major__ << "." << __clang_minor__;
#elif defined(__GNUC__)
  os << ", gcc " << __GNUC__ << "." << __GNUC_MINOR__;
#endif
  os << ", " << sizeof(Real) * 8 << "-bit reals";
  return os.str();
}

template <typename Fn>
void parallel_for(std::size_t count, std::size_t workers, Fn&& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, count));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> threads;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < count; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

const char* to_string(ExpansionMode mode) { return mode == ExpansionMode::pan ? "pan" : "naive"; }

ExpansionMode expansion_mode_from_string(const std::string& name) {
  if (name == "pan") return ExpansionMode::pan;
  if (name == "naive") return ExpansionMode::naive;
  throw ConfigError("unknown mode '" + name + "' (expected pan or naive)");
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over the combined value
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

ProtocolConfig ProtocolConfig::desk_scale() {
  ProtocolConfig c;
  c.dsp.mel_bins = 32;
  c.extractor = EEConfig::desk_scale(2);
  c.ee_pretrain.epochs = 10;
  c.ee_train.epochs = 10;
  c.episode.epochs = 20;
  return c;
}

json config_to_json(const ProtocolConfig& c) {
  json doc;
  doc["seed"] = c.seed;
  doc["mode"] = to_string(c.mode);
  doc["eval_mode"] = to_string(c.eval_mode);
  doc["dsp"] = {{"frame_ms", c.dsp.frame_ms}, {"hop_ms", c.dsp.hop_ms},   {"mel_bins", c.dsp.mel_bins},
                {"fmin_hz", c.dsp.fmin_hz},   {"fmax_hz", c.dsp.fmax_hz}, {"log_floor", c.dsp.log_floor}};
  doc["extractor"] = {{"base_widths", c.extractor.base_widths},
                      {"width_scale", c.extractor.width_scale},
                      {"blocks_per_stage", c.extractor.blocks_per_stage},
                      {"embedding_dim", c.extractor.embedding_dim}};
  doc["ee_pretrain"] = train_config_json(c.ee_pretrain);
  doc["ee_train"] = train_config_json(c.ee_train);
  doc["pan"] = {{"ways", c.episode.ways},
                {"shots", c.episode.shots},
                {"queries_per_class", c.episode.queries_per_class},
                {"epochs", c.episode.epochs},
                {"learning_rate", c.episode.learning_rate},
                {"optimizer", to_string(c.episode.optimizer)},
                {"max_episodes", c.episode.max_episodes},
                {"temperature", c.temperature},
                {"bias", c.pan_bias},
                {"consolidation", to_string(c.consolidation)}};
  doc["pseudo_novel_classes"] = c.pseudo_novel_classes ? json(*c.pseudo_novel_classes) : json(nullptr);
  doc["feature_cache_dir"] = c.feature_cache_dir;
  doc["workers"] = c.workers;
  return doc;
}

ProtocolConfig config_from_json(const json& doc, ProtocolConfig c) {
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  if (doc.contains("preset")) {
    const auto preset = doc.at("preset").get<std::string>();
    if (preset == "desk") {
      c = ProtocolConfig::desk_scale();
    } else if (preset != "default") {
      throw ConfigError("unknown preset '" + preset + "' (expected default or desk)");
    }
  }
  read_if(doc, "seed", c.seed);
  if (doc.contains("mode")) c.mode = expansion_mode_from_string(doc.at("mode").get<std::string>());
  if (doc.contains("eval_mode")) {
    try {
      c.eval_mode = eval_mode_from_string(doc.at("eval_mode").get<std::string>());
    } catch (const InvalidInput& e) {
      throw ConfigError(e.what());
    }
  }
  if (doc.contains("dsp")) {
    const auto& d = doc.at("dsp");
    read_if(d, "frame_ms", c.dsp.frame_ms);
    read_if(d, "hop_ms", c.dsp.hop_ms);
    read_if(d, "mel_bins", c.dsp.mel_bins);
    read_if(d, "fmin_hz", c.dsp.fmin_hz);
    read_if(d, "fmax_hz", c.dsp.fmax_hz);
    read_if(d, "log_floor", c.dsp.log_floor);
  }
  if (doc.contains("extractor")) {
    const auto& e = doc.at("extractor");
    read_if(e, "base_widths", c.extractor.base_widths);
    read_if(e, "width_scale", c.extractor.width_scale);
    read_if(e, "blocks_per_stage", c.extractor.blocks_per_stage);
    read_if(e, "embedding_dim", c.extractor.embedding_dim);
  }
  if (doc.contains("ee_pretrain")) read_train_config(doc.at("ee_pretrain"), c.ee_pretrain);
  if (doc.contains("ee_train")) read_train_config(doc.at("ee_train"), c.ee_train);
  if (doc.contains("pan")) {
    const auto& p = doc.at("pan");
    read_if(p, "ways", c.episode.ways);
    read_if(p, "shots", c.episode.shots);
    read_if(p, "queries_per_class", c.episode.queries_per_class);
    read_if(p, "epochs", c.episode.epochs);
    read_if(p, "learning_rate", c.episode.learning_rate);
    read_if(p, "max_episodes", c.episode.max_episodes);
    read_if(p, "temperature", c.temperature);
    read_if(p, "bias", c.pan_bias);
    try {
      if (p.contains("optimizer")) c.episode.optimizer = optimizer_kind_from_string(p.at("optimizer").get<std::string>());
      if (p.contains("consolidation")) {
        c.consolidation = consolidation_mode_from_string(p.at("consolidation").get<std::string>());
      }
    } catch (const InvalidInput& e) {
      throw ConfigError(e.what());
    }
  }
  if (doc.contains("pseudo_novel_classes")) {
    const auto& v = doc.at("pseudo_novel_classes");
    c.pseudo_novel_classes = v.is_null() ? std::nullopt : std::optional<std::size_t>(v.get<std::size_t>());
  }
  read_if(doc, "feature_cache_dir", c.feature_cache_dir);
  read_if(doc, "workers", c.workers);
  try {
    c.episode.validate();
  } catch (const InvalidInput& e) {
    throw ConfigError(e.what());
  }
  if (!(c.temperature > 0)) throw ConfigError("pan.temperature must be positive");
  if (c.workers == 0) throw ConfigError("workers must be at least 1");
  return c;
}

ProtocolConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return config_from_json(doc);
}

ClipEmbedder::ClipEmbedder(const Manifest& manifest, const ProtocolConfig& config)
    : manifest_(manifest), config_(config) {
  if (manifest.kind == DataKind::embeddings) {
    table_ = load_precomputed(manifest.resolve(manifest.embedding_file));
  }
}

const LogMelSpectrogram& ClipEmbedder::spectrogram(const ClipRef& clip) {
  if (manifest_.kind != DataKind::audio) throw StateError("spectrograms need an audio manifest");
  const auto it = spectrograms_.find(clip.id);
  if (it != spectrograms_.end()) return it->second;

  std::filesystem::path cache;
  if (!config_.feature_cache_dir.empty()) {
    cache = std::filesystem::path(config_.feature_cache_dir) / (clip.id + ".lms");
    if (std::filesystem::exists(cache)) {
      auto spect = read_feature_cache(cache);
      if (spect.mel_bins() == config_.dsp.mel_bins) return spectrograms_.emplace(clip.id, std::move(spect)).first->second;
    }
  }
  auto spect = log_mel(read_wav(manifest_.resolve(clip.path)), config_.dsp);
  if (!cache.empty()) {
    // The cache holds float32; round now so cold and warm runs see the same values.
    for (auto& v : spect.values.values) v = static_cast<Real>(static_cast<float>(v));
    std::filesystem::create_directories(cache.parent_path());
    write_feature_cache(cache, spect);
  }
  return spectrograms_.emplace(clip.id, std::move(spect)).first->second;
}

Embedding ClipEmbedder::embed(const ClipRef& clip, const EmbeddingExtractor* extractor) {
  if (manifest_.kind == DataKind::embeddings) {
    Embedding e = table_.at(clip.id);
    if (e.class_id && *e.class_id != clip.label) {
      throw ManifestError("clip " + clip.id + " is labeled " + std::to_string(clip.label) +
                          " in the manifest but " + std::to_string(*e.class_id) + " in the embedding file");
    }
    e.class_id = clip.label;
    return e;
  }
  if (!extractor) throw StateError("audio clips need an embedding extractor");
  Embedding e = extractor->embed(spectrogram(clip), clip.id);
  e.class_id = clip.label;
  return e;
}

std::vector<Embedding> ClipEmbedder::embed_all(std::span<const ClipRef> clips,
                                               const EmbeddingExtractor* extractor) {
  std::vector<Embedding> out(clips.size());
  if (manifest_.kind == DataKind::embeddings) {
    for (std::size_t i = 0; i < clips.size(); ++i) out[i] = embed(clips[i], extractor);
    return out;
  }
  if (!extractor) throw StateError("audio clips need an embedding extractor");
  // Spectrograms first (the cache map is not thread-safe), then the forward passes.
  std::vector<const LogMelSpectrogram*> spects;
  spects.reserve(clips.size());
  for (const auto& clip : clips) spects.push_back(&spectrogram(clip));
  parallel_for(clips.size(), config_.workers, [&](std::size_t i) {
    out[i] = extractor->embed(*spects[i], clips[i].id);
    out[i].class_id = clips[i].label;
  });
  return out;
}

BaseModel train_base(const Manifest& manifest, const ProtocolConfig& config) {
  if (manifest.sessions.empty()) throw ProtocolError("manifest has no sessions");
  const auto& base = manifest.sessions.front();
  ClipEmbedder embedder(manifest, config);

  BaseModel model;
  model.log.split = manifest.split ? *manifest.split
                                   : stdu_split(base.labels, pseudo_novel_count(config, base.labels.size()),
                                                derive_seed(config.seed, kSplitStream));
  const auto& split = model.log.split;

  const bool audio = manifest.kind == DataKind::audio;
  std::optional<EmbeddingExtractor> pretrained;
  if (audio) {
    // Step 1: pre-train on the pseudo-base classes only.
    EEConfig ee_cfg = config.extractor;
    ee_cfg.mel_bins = config.dsp.mel_bins;
    ee_cfg.num_classes = split.pseudo_base.size();
    pretrained = EmbeddingExtractor::build(ee_cfg, derive_seed(config.seed, kPretrainInitStream));
    auto examples = training_examples(embedder, base.train, split.pseudo_base);
    auto tc = config.ee_pretrain;
    tc.seed = derive_seed(config.seed, kPretrainStream);
    model.log.ee_pretrain = train_ee(*pretrained, examples, tc);
  }

  // Step 2: episodic PAN training on the split, using the pre-trained embeddings.
  if (config.mode == ExpansionMode::pan) {
    std::optional<EmbeddingExtractor> frozen_pre;
    if (pretrained) {
      frozen_pre = *pretrained;
      frozen_pre->freeze();
    }
    const auto all = embedder.embed_all(base.train, frozen_pre ? &*frozen_pre : nullptr);
    const auto d01 = filter_labels(all, split.pseudo_base);
    const auto d02 = filter_labels(all, split.pseudo_novel);
    const auto dim = all.front().vector.size();
    const auto initial = PanParams::init(dim, derive_seed(config.seed, kPanInitStream), config.pan_bias,
                                         config.temperature);
    auto trained = train_pan(initial, d01, d02, config.episode, derive_seed(config.seed, kPanTrainStream));
    model.log.pan_epoch_losses = trained.epoch_mean_losses;
    model.log.pan_episodes = trained.episodes;
    model.pan = std::move(trained.params);
  }

  // Step 3: continue training on every base class, then freeze.
  if (audio) {
    EmbeddingExtractor ee = *pretrained;
    ee.reset_head(base.labels.size(), derive_seed(config.seed, kHeadStream));
    auto examples = training_examples(embedder, base.train, base.labels);
    auto tc = config.ee_train;
    tc.seed = derive_seed(config.seed, kTrainStream);
    model.log.ee_train = train_ee(ee, examples, tc);
    ee.freeze();
    model.extractor = std::move(ee);
  }

  // Step 4: base prototypes from the frozen embeddings.
  const auto embedded = embedder.embed_all(base.train, model.extractor ? &*model.extractor : nullptr);
  model.store = build_base(embedded);
  return model;
}

std::vector<std::optional<Real>> SessionReport::accuracy_row(Partition p) const {
  std::vector<std::optional<Real>> row;
  for (const auto& s : sessions) {
    const auto it = s.accuracy.find(p);
    row.push_back(it == s.accuracy.end() ? std::nullopt : it->second);
  }
  return row;
}

void SessionReport::compute_summary() {
  aa.clear();
  pd.clear();
  for (auto p : {Partition::base, Partition::novel, Partition::both}) {
    const auto row = accuracy_row(p);
    const bool any = std::any_of(row.begin(), row.end(), [](const auto& v) { return v.has_value(); });
    aa[p] = any ? std::optional<Real>(average_accuracy(row)) : std::nullopt;
    try {
      pd[p] = performance_drop(row, p);
    } catch (const InvalidInput&) {
      pd[p] = std::nullopt;
    }
  }
}

std::vector<Prediction> evaluate_store(const PrototypeStore& store, std::span<const Embedding> clips,
                                       EvalMode mode, const PanParams* pan, std::size_t workers) {
  std::vector<Prediction> out(clips.size());
  parallel_for(clips.size(), workers, [&](std::size_t i) { out[i] = predict(store, clips[i], mode, pan); });
  return out;
}

IncrementalResult run_incremental(const BaseModel& base, const Manifest& manifest,
                                  const ProtocolConfig& config) {
  const bool use_pan = config.mode == ExpansionMode::pan;
  if (use_pan && !base.pan) throw StateError("PAN mode needs a trained PAN");
  const EvalMode eval_mode = use_pan ? config.eval_mode : EvalMode::plain;
  const EmbeddingExtractor* ee = base.extractor ? &*base.extractor : nullptr;
  const PanParams* pan = base.pan ? &*base.pan : nullptr;
  ClipEmbedder embedder(manifest, config);

  IncrementalResult result{base.store, {}};
  auto& report = result.report;
  report.mode = to_string(config.mode);
  report.eval_mode = to_string(eval_mode);
  const EvalMode alt_mode = eval_mode == EvalMode::pqam ? EvalMode::plain : EvalMode::pqam;
  if (use_pan) report.alternate_eval_mode = to_string(alt_mode);
  report.seed = config.seed;
  report.dim = base.store.dim();
  report.hardware_note = hardware_note();

  const std::set<ClassId> base_labels(manifest.sessions.front().labels.begin(),
                                      manifest.sessions.front().labels.end());
  std::vector<Embedding> eval_pool;
  std::vector<double> update_seconds;
  std::vector<ClassId> last_pred;
  std::vector<ClassId> last_truth;

  for (std::size_t i = 0; i < manifest.sessions.size(); ++i) {
    const auto& session = manifest.sessions[i];
    SessionResult sr;
    sr.index = i;
    try {
      if (i > 0) {
        // Seeded per-class draw: K supports, then up to K_q of the remaining clips as queries.
        std::mt19937_64 rng(derive_seed(config.seed, kSessionStream + i));
        std::map<ClassId, std::vector<const ClipRef*>> pools;
        for (const auto& clip : session.train) pools[clip.label].push_back(&clip);
        std::vector<ClipRef> support_refs;
        std::vector<ClipRef> query_refs;
        for (auto& [label, pool] : pools) {
          std::shuffle(pool.begin(), pool.end(), rng);
          const auto k = manifest.shots;
          if (pool.size() < k) throw ProtocolError("class " + std::to_string(label) + " has fewer than K clips");
          for (std::size_t j = 0; j < k; ++j) support_refs.push_back(*pool[j]);
          const auto q_end = std::min(pool.size(), k + config.episode.queries_per_class);
          for (std::size_t j = k; j < q_end; ++j) query_refs.push_back(*pool[j]);
        }
        const auto support = embedder.embed_all(support_refs, ee);
        const auto queries = query_refs.empty() ? support : embedder.embed_all(query_refs, ee);
        sr.support_count = support.size();
        sr.query_count = queries.size();

        const auto t0 = std::chrono::steady_clock::now();
        result.store = use_pan ? expand_session(result.store, *pan, support, queries, config.consolidation)
                               : naive_expand(result.store, support);
        const auto t1 = std::chrono::steady_clock::now();
        sr.update_seconds = std::chrono::duration<double>(t1 - t0).count();
        update_seconds.push_back(sr.update_seconds);
        report.incremental_classes += pools.size();
      }

      const auto session_eval = embedder.embed_all(session.eval, ee);
      eval_pool.insert(eval_pool.end(), session_eval.begin(), session_eval.end());
      const auto predict_all = [&](EvalMode m) {
        const auto preds = evaluate_store(result.store, eval_pool, m, pan, config.workers);
        std::vector<ClassId> ids;
        for (const auto& p : preds) ids.push_back(p.class_id);
        return ids;
      };
      auto predicted = predict_all(eval_mode);
      std::vector<ClassId> alt_predicted;
      if (use_pan) alt_predicted = predict_all(alt_mode);
      std::vector<ClassId> truth;
      for (const auto& e : eval_pool) truth.push_back(*e.class_id);
      const auto seen = label_set(std::span(manifest.sessions).first(i + 1));
      std::set<ClassId> novel;
      for (auto l : seen) {
        if (!base_labels.count(l)) novel.insert(l);
      }
      for (const auto& [p, classes] : {std::pair{Partition::base, base_labels}, std::pair{Partition::novel, novel},
                                       std::pair{Partition::both, seen}}) {
        sr.accuracy[p] = accuracy(predicted, truth, classes);
        if (use_pan) sr.alternate_accuracy[p] = accuracy(alt_predicted, truth, classes);
        sr.samples[p] = static_cast<std::size_t>(
            std::count_if(truth.begin(), truth.end(), [&](ClassId t) { return classes.count(t) != 0; }));
      }
      sr.store_size = result.store.size();
      last_pred = std::move(predicted);
      last_truth = std::move(truth);
      report.sessions.push_back(std::move(sr));
    } catch (const std::exception& e) {
      report.failure = "session " + std::to_string(i) + ": " + e.what();
      break;
    }
  }

  report.compute_summary();
  if (!last_truth.empty()) {
    const auto order = result.store.class_ids();
    report.final_confusion = confusion_matrix(last_pred, last_truth, order);
  }
  if (!update_seconds.empty()) {
    const auto att_ss = measure_att_ss(update_seconds, report.incremental_classes, report.dim);
    report.att_seconds = att_ss.att_seconds;
    report.ss_elements = att_ss.ss_elements;
  }
  return result;
}

ProtocolResult run_protocol(const Manifest& manifest, const ProtocolConfig& config) {
  ProtocolResult out;
  out.base = train_base(manifest, config);
  auto inc = run_incremental(out.base, manifest, config);
  out.final_store = std::move(inc.store);
  out.report = std::move(inc.report);
  return out;
}

}  // namespace fcac
