#include "fcac/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "fcac/wav.hpp"

namespace fcac {

namespace fs = std::filesystem;

const char* to_string(SynthKind kind) {
  return kind == SynthKind::audio_tones ? "audio_tones" : "gaussian_embeddings";
}

SynthKind synth_kind_from_string(const std::string& name) {
  if (name == "audio_tones") return SynthKind::audio_tones;
  if (name == "gaussian_embeddings") return SynthKind::gaussian_embeddings;
  throw ConfigError("unknown synthetic data kind '" + name + "'");
}

void SynthSpec::validate() const {
  if (base_classes < 2) throw ConfigError("synthetic data needs at least 2 base classes");
  if (ways < 1 || shots < 1) throw ConfigError("ways and shots must be positive");
  if (base_train_per_class < 1) throw ConfigError("base_train_per_class must be positive");
  if (incremental_train_per_class != 0 && incremental_train_per_class < shots) {
    throw ConfigError("incremental_train_per_class must be 0 or >= shots");
  }
  if (kind == SynthKind::gaussian_embeddings) {
    if (dim < 2) throw ConfigError("embedding dim must be >= 2");
    if (!(radius > 0) || !(sigma >= 0)) throw ConfigError("need radius > 0 and sigma >= 0");
  } else {
    if (sample_rate == 0 || !(duration_s > 0)) throw ConfigError("invalid clip duration or sample rate");
    if (!(min_f0_hz > 0) || !(max_f0_hz >= min_f0_hz) || 5 * max_f0_hz > sample_rate / 2.0) {
      throw ConfigError("fundamentals must be positive and their harmonics below Nyquist");
    }
  }
}

GaussianClasses::GaussianClasses(std::size_t classes, std::size_t dim, double radius, double sigma,
                                 std::uint64_t seed)
    : dim_(dim), sigma_(sigma) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t c = 0; c < classes; ++c) {
    std::vector<double> dir(dim);
    double norm = 0;
    for (auto& v : dir) {
      v = normal(rng);
      norm += v * v;
    }
    norm = std::sqrt(norm);
    std::vector<Real> mean(dim);
    for (std::size_t j = 0; j < dim; ++j) mean[j] = static_cast<Real>(radius * dir[j] / norm);
    means_.push_back(std::move(mean));
  }
}

std::vector<Embedding> GaussianClasses::sample(ClassId c, std::size_t count, std::mt19937_64& rng,
                                               const std::string& id_prefix) const {
  std::normal_distribution<double> normal(0.0, sigma_);
  const auto& mu = means_.at(c);
  std::vector<Embedding> out;
  for (std::size_t i = 0; i < count; ++i) {
    Embedding e;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%04zu", i);
    e.clip_id = id_prefix + buf;
    e.class_id = c;
    e.vector.resize(dim_);
    for (std::size_t j = 0; j < dim_; ++j) e.vector[j] = mu[j] + static_cast<Real>(normal(rng));
    out.push_back(std::move(e));
  }
  return out;
}

double tone_fundamental(ClassId c, std::size_t n_classes, const SynthSpec& spec) {
  if (n_classes <= 1) return spec.min_f0_hz;
  const double t = static_cast<double>(c) / static_cast<double>(n_classes - 1);
  return spec.min_f0_hz * std::pow(spec.max_f0_hz / spec.min_f0_hz, t);
}

AudioClip synth_tone_clip(ClassId c, std::size_t n_classes, const SynthSpec& spec, std::mt19937_64& rng) {
  constexpr double kHarmonics[] = {1.0, 0.5, 1.0 / 3.0, 0.25};
  std::uniform_real_distribution<double> jitter(-0.01, 0.01);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  const double f0 = tone_fundamental(c, n_classes, spec) * (1.0 + jitter(rng));
  double phases[4];
  for (auto& p : phases) p = phase(rng);

  const auto n = static_cast<std::size_t>(std::llround(spec.duration_s * spec.sample_rate));
  std::vector<double> signal(n, 0.0);
  double power = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / spec.sample_rate;
    for (std::size_t h = 0; h < 4; ++h) {
      signal[i] += kHarmonics[h] * std::sin(2.0 * std::numbers::pi * f0 * static_cast<double>(h + 1) * t + phases[h]);
    }
    power += signal[i] * signal[i];
  }
  power /= static_cast<double>(n);
  std::normal_distribution<double> noise(0.0, std::sqrt(power / std::pow(10.0, spec.snr_db / 10.0)));
  double peak = 0;
  for (auto& s : signal) {
    s += noise(rng);
    peak = std::max(peak, std::abs(s));
  }
  AudioClip clip;
  clip.sample_rate = spec.sample_rate;
  clip.class_id = c;
  clip.samples.resize(n);
  const double gain = peak > 0 ? 0.8 / peak : 0.0;
  for (std::size_t i = 0; i < n; ++i) clip.samples[i] = static_cast<Real>(signal[i] * gain);
  return clip;
}

namespace {

std::string clip_prefix(ClassId c, const char* role) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "c%03u_%s_", static_cast<unsigned>(c), role);
  return buf;
}

}  // namespace

Manifest gen_synthetic(const SynthSpec& spec, std::uint64_t seed, const fs::path& out_dir) {
  spec.validate();
  fs::create_directories(out_dir);
  const auto n_classes = spec.total_classes();
  const auto inc_train = spec.incremental_train_per_class ? spec.incremental_train_per_class : spec.shots;

  Manifest m;
  m.kind = spec.kind == SynthKind::audio_tones ? DataKind::audio : DataKind::embeddings;
  m.base_dir = out_dir;
  m.ways = spec.ways;
  m.shots = spec.shots;

  std::mt19937_64 rng(seed);
  std::vector<Embedding> embeddings;
  std::optional<GaussianClasses> world;
  if (spec.kind == SynthKind::gaussian_embeddings) {
    world.emplace(n_classes, spec.dim, spec.radius, spec.sigma, rng());
    m.embedding_file = "embeddings.txt";
  } else {
    fs::create_directories(out_dir / "audio");
  }

  auto emit = [&](ClassId c, std::size_t count, const char* role, std::vector<ClipRef>& clips) {
    if (world) {
      auto samples = world->sample(c, count, rng, clip_prefix(c, role));
      for (auto& e : samples) {
        clips.push_back({e.clip_id, c, {}});
        embeddings.push_back(std::move(e));
      }
    } else {
      for (std::size_t i = 0; i < count; ++i) {
        char index[24];
        std::snprintf(index, sizeof(index), "%04zu", i);
        const auto name = clip_prefix(c, role) + index;
        const auto rel = "audio/" + name + ".wav";
        const auto clip = synth_tone_clip(c, n_classes, spec, rng);
        write_wav_pcm16(out_dir / rel, clip.samples, clip.sample_rate);
        clips.push_back({name, c, rel});
      }
    }
  };

  ClassId next = 0;
  for (std::size_t s = 0; s <= spec.incremental_sessions; ++s) {
    SessionDataset ds;
    ds.index = s;
    const auto count = s == 0 ? spec.base_classes : spec.ways;
    for (std::size_t k = 0; k < count; ++k) ds.labels.push_back(next++);
    for (auto c : ds.labels) emit(c, s == 0 ? spec.base_train_per_class : inc_train, "tr", ds.train);
    for (auto c : ds.labels) emit(c, spec.eval_per_class, "ev", ds.eval);
    m.sessions.push_back(std::move(ds));
  }
  if (world) save_embeddings_text(out_dir / m.embedding_file, embeddings, spec.dim);
  validate_manifest(m, true);
  save_manifest(out_dir / "manifest.json", m);
  return m;
}

}  // namespace fcac
