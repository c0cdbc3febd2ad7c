#pragma once

// Desk-scale synthetic datasets.
//
// audio_tones: each class is a harmonic tone (fixed 1/h amplitude profile over
// four harmonics) at its own fundamental, with per-clip pitch jitter, random
// phases and white noise at the requested SNR; 16-bit WAV clips plus a manifest.
// gaussian_embeddings: class means drawn uniformly on a sphere of radius r,
// isotropic noise sigma; one embedding file plus a manifest.

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <vector>

#include "fcac/dsp.hpp"
#include "fcac/embedding.hpp"
#include "fcac/manifest.hpp"

namespace fcac {

enum class SynthKind { audio_tones, gaussian_embeddings };
const char* to_string(SynthKind kind);
SynthKind synth_kind_from_string(const std::string& name);

struct SynthSpec {
  SynthKind kind = SynthKind::gaussian_embeddings;
  std::size_t base_classes = 10;
  std::size_t incremental_sessions = 2;
  std::size_t ways = 5;
  std::size_t shots = 5;
  std::size_t base_train_per_class = 40;
  std::size_t eval_per_class = 20;
  /// Training pool per incremental class; 0 means exactly `shots`.
  std::size_t incremental_train_per_class = 0;

  // gaussian_embeddings
  std::size_t dim = 16;
  double radius = 10.0;
  double sigma = 1.0;

  // audio_tones
  double snr_db = 20.0;
  double duration_s = 1.0;
  std::uint32_t sample_rate = 16000;
  double min_f0_hz = 200.0;
  double max_f0_hz = 1600.0;

  std::size_t total_classes() const { return base_classes + incremental_sessions * ways; }
  void validate() const;
};

/// Class means on a sphere, sampled with isotropic Gaussian noise.
class GaussianClasses {
 public:
  GaussianClasses(std::size_t classes, std::size_t dim, double radius, double sigma, std::uint64_t seed);

  std::size_t dim() const { return dim_; }
  const std::vector<Real>& mean(ClassId c) const { return means_.at(c); }
  std::vector<Embedding> sample(ClassId c, std::size_t count, std::mt19937_64& rng,
                                const std::string& id_prefix) const;

 private:
  std::size_t dim_;
  double sigma_;
  std::vector<std::vector<Real>> means_;
};

/// Fundamental of class c among n, log-spaced between the spec's limits.
double tone_fundamental(ClassId c, std::size_t n_classes, const SynthSpec& spec);
AudioClip synth_tone_clip(ClassId c, std::size_t n_classes, const SynthSpec& spec, std::mt19937_64& rng);

/// Writes the dataset and its manifest.json under out_dir; returns the manifest.
Manifest gen_synthetic(const SynthSpec& spec, std::uint64_t seed, const std::filesystem::path& out_dir);

}  // namespace fcac
