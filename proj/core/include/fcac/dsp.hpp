#pragma once

// Log mel-spectrogram front end: framing, Hamming window, radix-2 FFT power
// spectrum, triangular mel filterbank (HTK mel scale) and natural log.

#include <complex>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fcac/real.hpp"

namespace fcac {

struct AudioClip {
  std::vector<Real> samples;  // mono PCM in [-1, 1]
  std::uint32_t sample_rate = 16000;
  std::optional<ClassId> class_id;
  std::string clip_id;
};

/// Dense row-major matrix of reals.
struct RealMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<Real> values;

  RealMatrix() = default;
  RealMatrix(std::size_t r, std::size_t c, Real fill = Real(0))
      : rows(r), cols(c), values(r * c, fill) {}

  Real& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  Real operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  std::span<const Real> row(std::size_t r) const { return {values.data() + r * cols, cols}; }
};

struct DspConfig {
  double frame_ms = 25.0;
  double hop_ms = 10.0;
  std::size_t mel_bins = 128;
  double fmin_hz = 0.0;
  /// 0 selects sample_rate / 2.
  double fmax_hz = 0.0;
  Real log_floor = Real(1e-10);
};

struct LogMelSpectrogram {
  RealMatrix values;  // frames x mel bins
  double frame_ms = 0;
  double hop_ms = 0;

  std::size_t frames() const { return values.rows; }
  std::size_t mel_bins() const { return values.cols; }
};

std::vector<Real> hamming_window(std::size_t n);

std::size_t ms_to_samples(double ms, std::uint32_t sample_rate);
/// 1 + floor((num_samples - frame_len) / hop_len); 0 when the signal is shorter than a frame.
std::size_t frame_count(std::size_t num_samples, std::size_t frame_len, std::size_t hop_len);

/// Views into clip.samples at offsets k * hop. Tail samples that do not fill a frame are dropped.
std::vector<std::span<const Real>> frame_signal(const AudioClip& clip, double frame_ms,
                                                double hop_ms);

std::size_t next_power_of_two(std::size_t n);

/// In-place iterative radix-2 FFT; size must be a power of two.
void fft_inplace(std::vector<std::complex<Real>>& data);

/// |DFT|^2 at bins 0..nfft/2 of the zero-padded frame. nfft == 0 selects
/// the next power of two >= frame.size().
std::vector<Real> power_spectrum(std::span<const Real> frame, std::size_t nfft = 0);

Real hz_to_mel(Real hz);
Real mel_to_hz(Real mel);

/// M x (nfft/2 + 1) triangular filters whose centers are equally spaced on
/// the mel scale between fmin and fmax. Each non-empty row is scaled so its
/// largest weight is exactly 1.
RealMatrix mel_filterbank(std::size_t nfft, std::size_t mel_bins, double sample_rate,
                          double fmin_hz, double fmax_hz);

LogMelSpectrogram log_mel(const AudioClip& clip, const DspConfig& config = {});

// Feature cache: little-endian u32 T, u32 M, then T*M float32 values row-major.
void write_feature_cache(const std::filesystem::path& path, const LogMelSpectrogram& spect);
LogMelSpectrogram read_feature_cache(const std::filesystem::path& path);

}  // namespace fcac
