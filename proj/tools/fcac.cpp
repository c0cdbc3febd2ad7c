// fcac: few-shot class-incremental audio classification harness.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "fcac/checkpoint.hpp"
#include "fcac/error.hpp"
#include "fcac/manifest.hpp"
#include "fcac/protocol.hpp"
#include "fcac/report.hpp"
#include "fcac/synth.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace fcac;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct GlobalOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string mode;
  std::string eval_mode;
  std::string out = ".";
};

ProtocolConfig resolve_config(const GlobalOptions& g) {
  ProtocolConfig c = g.config_path.empty() ? ProtocolConfig{} : load_config(g.config_path);
  if (g.seed) c.seed = *g.seed;
  if (!g.mode.empty()) c.mode = expansion_mode_from_string(g.mode);
  if (!g.eval_mode.empty()) {
    try {
      c.eval_mode = eval_mode_from_string(g.eval_mode);
    } catch (const InvalidInput& e) {
      throw ConfigError(e.what());
    }
  }
  return c;
}

void write_json(const fs::path& path, const json& doc) {
  std::ofstream out(path);
  out << doc.dump(2) << "\n";
  if (!out) throw Error("cannot write " + path.string());
}

json training_log_json(const BaseTrainingLog& log) {
  const auto epochs = [](const EETrainingLog& l) {
    json rows = json::array();
    for (const auto& e : l.epochs) rows.push_back({{"loss", e.mean_loss}, {"accuracy", e.accuracy}});
    return rows;
  };
  return {{"split", {{"pseudo_base", log.split.pseudo_base}, {"pseudo_novel", log.split.pseudo_novel}}},
          {"ee_pretrain", epochs(log.ee_pretrain)},
          {"ee_train", epochs(log.ee_train)},
          {"pan_epoch_losses", log.pan_epoch_losses},
          {"pan_episodes", log.pan_episodes}};
}

BaseModel base_from_checkpoint(const fs::path& path) {
  auto ck = load_checkpoint(path);
  BaseModel base;
  base.extractor = std::move(ck.extractor);
  base.pan = std::move(ck.pan);
  base.store = std::move(ck.store);
  return base;
}

// Up to `per_class` eval embeddings per class from every session, for external t-SNE plots.
void dump_eval_embeddings(const fs::path& path, const Manifest& manifest, const ProtocolConfig& config,
                          const EmbeddingExtractor* ee, std::size_t per_class) {
  if (per_class == 0) return;
  std::vector<ClipRef> picked;
  std::map<ClassId, std::size_t> taken;
  for (const auto& s : manifest.sessions) {
    for (const auto& clip : s.eval) {
      if (taken[clip.label]++ < per_class) picked.push_back(clip);
    }
  }
  ClipEmbedder embedder(manifest, config);
  const auto rows = embedder.embed_all(picked, ee);
  if (!rows.empty()) save_embeddings_text(path, rows, rows.front().vector.size());
}

void write_outputs(const fs::path& out, const SessionReport& report, const PrototypeStore& store,
                   const Manifest& manifest, const ProtocolConfig& config, const EmbeddingExtractor* ee,
                   std::size_t dump_per_class) {
  emit_report(report, out);
  dump_prototypes(out / "prototypes.txt", store);
  dump_eval_embeddings(out / "eval_embeddings.txt", manifest, config, ee, dump_per_class);
}

void print_summary(const SessionReport& report) {
  std::cout << report_to_markdown(report);
  if (report.failure) std::cerr << "failed: " << *report.failure << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-shot class-incremental audio classification harness"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOptions g;
  app.add_option("--config", g.config_path, "Protocol config (JSON)");
  app.add_option("--seed", g.seed, "Seed for every random stream");
  app.add_option("--mode", g.mode, "Session expansion: pan or naive")->check(CLI::IsMember({"pan", "naive"}));
  app.add_option("--eval-mode", g.eval_mode, "Prediction rule: plain or pqam")
      ->check(CLI::IsMember({"plain", "pqam"}));
  app.add_option("--out", g.out, "Output directory");

  // gen-synth
  auto* gen = app.add_subcommand("gen-synth", "Write a synthetic dataset and manifest");
  SynthSpec spec;
  std::string kind = "embeddings";
  gen->add_option("--kind", kind, "audio or embeddings")->check(CLI::IsMember({"audio", "embeddings"}));
  gen->add_option("--base-classes", spec.base_classes);
  gen->add_option("--sessions", spec.incremental_sessions, "Incremental sessions");
  gen->add_option("--ways", spec.ways);
  gen->add_option("--shots", spec.shots);
  gen->add_option("--base-train", spec.base_train_per_class, "Base training clips per class");
  gen->add_option("--eval", spec.eval_per_class, "Eval clips per class");
  gen->add_option("--incremental-train", spec.incremental_train_per_class,
                  "Training pool per incremental class (0 = shots)");
  gen->add_option("--dim", spec.dim, "Embedding dimension");
  gen->add_option("--radius", spec.radius, "Class-mean radius");
  gen->add_option("--sigma", spec.sigma, "Per-class standard deviation");
  gen->add_option("--snr", spec.snr_db, "Tone SNR in dB");

  // featurize
  auto* feat = app.add_subcommand("featurize", "Compute the log-mel feature cache for every clip");
  std::string manifest_path;
  feat->add_option("--manifest", manifest_path)->required();

  // train-base
  auto* train = app.add_subcommand("train-base", "Base session: pre-train EE, train PAN, train EE, build prototypes");
  train->add_option("--manifest", manifest_path)->required();

  // run-incremental
  auto* inc = app.add_subcommand("run-incremental", "Expand a base checkpoint through the incremental sessions");
  std::string checkpoint_path;
  std::size_t dump_per_class = 10;
  inc->add_option("--manifest", manifest_path)->required();
  inc->add_option("--checkpoint", checkpoint_path, "Base checkpoint from train-base")->required();
  inc->add_option("--dump-per-class", dump_per_class, "Eval embeddings per class to dump");

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "Predict eval clips against a checkpoint");
  std::optional<std::size_t> eval_session;
  eval->add_option("--manifest", manifest_path)->required();
  eval->add_option("--checkpoint", checkpoint_path)->required();
  eval->add_option("--session", eval_session, "Last session whose eval clips are included (default: all)");

  // report
  auto* rep = app.add_subcommand("report", "Re-render CSV/Markdown from a report.json");
  std::string report_path;
  rep->add_option("--input", report_path)->required();

  // run-protocol
  auto* run = app.add_subcommand("run-protocol", "train-base followed by run-incremental");
  run->add_option("--manifest", manifest_path)->required();
  run->add_option("--dump-per-class", dump_per_class, "Eval embeddings per class to dump");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    const fs::path out = g.out;
    fs::create_directories(out);

    if (gen->parsed()) {
      spec.kind = kind == "audio" ? SynthKind::audio_tones : SynthKind::gaussian_embeddings;
      const auto seed = g.seed.value_or(0);
      const auto m = gen_synthetic(spec, seed, out);
      std::cout << "wrote " << m.sessions.size() << " sessions to " << (out / "manifest.json").string() << "\n";
      return kExitOk;
    }

    if (rep->parsed()) {
      std::ifstream in(report_path);
      if (!in) throw ConfigError("cannot open " + report_path);
      auto report = report_from_json(json::parse(in));
      emit_report(report, out);
      std::cout << report_to_markdown(report);
      return kExitOk;
    }

    const auto config = resolve_config(g);
    const auto manifest = load_manifest(manifest_path);

    if (feat->parsed()) {
      if (manifest.kind != DataKind::audio) throw ConfigError("featurize needs an audio manifest");
      auto c = config;
      if (c.feature_cache_dir.empty()) c.feature_cache_dir = (out / "features").string();
      ClipEmbedder embedder(manifest, c);
      std::size_t n = 0;
      for (const auto& s : manifest.sessions) {
        for (const auto* clips : {&s.train, &s.eval}) {
          for (const auto& clip : *clips) {
            embedder.spectrogram(clip);
            ++n;
          }
        }
      }
      std::cout << "cached " << n << " spectrograms in " << c.feature_cache_dir << "\n";
      return kExitOk;
    }

    if (train->parsed()) {
      const auto base = train_base(manifest, config);
      const auto layout = save_checkpoint(out / "base.ckpt", base.store, base.extractor ? &*base.extractor : nullptr,
                                          base.pan ? &*base.pan : nullptr);
      write_json(out / "train_log.json", training_log_json(base.log));
      write_json(out / "config.json", config_to_json(config));
      std::cout << "base store: " << base.store.size() << " classes, checkpoint " << layout.total_bytes
                << " bytes\n";
      return kExitOk;
    }

    if (inc->parsed()) {
      const auto base = base_from_checkpoint(checkpoint_path);
      const auto result = run_incremental(base, manifest, config);
      save_checkpoint(out / "final.ckpt", result.store, base.extractor ? &*base.extractor : nullptr,
                      base.pan ? &*base.pan : nullptr);
      write_outputs(out, result.report, result.store, manifest, config,
                    base.extractor ? &*base.extractor : nullptr, dump_per_class);
      print_summary(result.report);
      return result.report.failure ? kExitRuntime : kExitOk;
    }

    if (eval->parsed()) {
      const auto ck = load_checkpoint(checkpoint_path);
      const EmbeddingExtractor* ee = ck.extractor ? &*ck.extractor : nullptr;
      const PanParams* pan = ck.pan ? &*ck.pan : nullptr;
      const auto mode = pan ? config.eval_mode : EvalMode::plain;
      const auto last = std::min(eval_session.value_or(manifest.sessions.size() - 1), manifest.sessions.size() - 1);
      std::vector<ClipRef> clips;
      for (std::size_t i = 0; i <= last; ++i) {
        clips.insert(clips.end(), manifest.sessions[i].eval.begin(), manifest.sessions[i].eval.end());
      }
      ClipEmbedder embedder(manifest, config);
      const auto embedded = embedder.embed_all(clips, ee);
      const auto preds = evaluate_store(ck.store, embedded, mode, pan, config.workers);
      std::ofstream csv(out / "predictions.csv");
      csv << "clip_id,label,predicted\n";
      std::size_t correct = 0;
      for (std::size_t i = 0; i < preds.size(); ++i) {
        csv << clips[i].id << ',' << clips[i].label << ',' << preds[i].class_id << '\n';
        correct += preds[i].class_id == clips[i].label;
      }
      const double acc = preds.empty() ? 0.0 : double(correct) / double(preds.size());
      write_json(out / "evaluation.json",
                 {{"samples", preds.size()}, {"correct", correct}, {"accuracy", acc}, {"eval_mode", to_string(mode)}});
      std::printf("accuracy %.4f over %zu clips\n", acc, preds.size());
      return kExitOk;
    }

    if (run->parsed()) {
      const auto result = run_protocol(manifest, config);
      save_checkpoint(out / "final.ckpt", result.final_store,
                      result.base.extractor ? &*result.base.extractor : nullptr,
                      result.base.pan ? &*result.base.pan : nullptr);
      write_json(out / "train_log.json", training_log_json(result.base.log));
      write_json(out / "config.json", config_to_json(config));
      write_outputs(out, result.report, result.final_store, manifest, config,
                    result.base.extractor ? &*result.base.extractor : nullptr, dump_per_class);
      print_summary(result.report);
      return result.report.failure ? kExitRuntime : kExitOk;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitRuntime;
}
