#include "fcac/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "fcac/binary_io.hpp"
#include "fcac/error.hpp"

namespace fcac {

std::vector<Real> hamming_window(std::size_t n) {
  if (n < 2) throw InvalidInput("hamming_window: length must be >= 2");
  std::vector<Real> w(n);
  const double denom = static_cast<double>(n - 1);
  for (std::size_t k = 0; k < n; ++k) {
    w[k] = static_cast<Real>(0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * k / denom));
  }
  return w;
}

std::size_t ms_to_samples(double ms, std::uint32_t sample_rate) {
  return static_cast<std::size_t>(std::llround(ms * sample_rate / 1000.0));
}

std::size_t frame_count(std::size_t num_samples, std::size_t frame_len, std::size_t hop_len) {
  if (frame_len == 0 || hop_len == 0) throw InvalidInput("frame and hop lengths must be positive");
  if (num_samples < frame_len) return 0;
  return 1 + (num_samples - frame_len) / hop_len;
}

std::vector<std::span<const Real>> frame_signal(const AudioClip& clip, double frame_ms,
                                                double hop_ms) {
  if (clip.sample_rate == 0) throw InvalidInput("sample rate must be positive");
  const auto frame_len = ms_to_samples(frame_ms, clip.sample_rate);
  const auto hop_len = ms_to_samples(hop_ms, clip.sample_rate);
  const auto n = frame_count(clip.samples.size(), frame_len, hop_len);
  if (n == 0) {
    throw InvalidInput("clip '" + clip.clip_id + "' has " + std::to_string(clip.samples.size()) +
                       " samples, shorter than one frame of " + std::to_string(frame_len));
  }
  std::vector<std::span<const Real>> frames;
  frames.reserve(n);
  const std::span<const Real> all(clip.samples);
  for (std::size_t k = 0; k < n; ++k) frames.push_back(all.subspan(k * hop_len, frame_len));
  return frames;
}

std::size_t next_power_of_two(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

void fft_inplace(std::vector<std::complex<Real>>& a) {
  const auto n = a.size();
  if (n == 0 || (n & (n - 1)) != 0) throw InvalidInput("fft size must be a power of two");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double angle = -2.0 * std::numbers::pi / static_cast<double>(len);
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < len / 2; ++k) {
        // Twiddles from the angle directly; a running product drifts past 1e-9 at n = 1024.
        const std::complex<Real> w(static_cast<Real>(std::cos(angle * k)),
                                   static_cast<Real>(std::sin(angle * k)));
        const auto u = a[i + k];
        const auto v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
      }
    }
  }
}

std::vector<Real> power_spectrum(std::span<const Real> frame, std::size_t nfft) {
  if (nfft == 0) nfft = next_power_of_two(frame.size());
  if (nfft < frame.size() || (nfft & (nfft - 1)) != 0) {
    throw InvalidInput("power_spectrum: nfft must be a power of two >= frame length");
  }
  std::vector<std::complex<Real>> buf(nfft);
  for (std::size_t i = 0; i < frame.size(); ++i) buf[i] = frame[i];
  fft_inplace(buf);
  std::vector<Real> out(nfft / 2 + 1);
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = std::norm(buf[k]);
  return out;
}

Real hz_to_mel(Real hz) { return Real(2595) * std::log10(Real(1) + hz / Real(700)); }

Real mel_to_hz(Real mel) { return Real(700) * (std::pow(Real(10), mel / Real(2595)) - Real(1)); }

RealMatrix mel_filterbank(std::size_t nfft, std::size_t mel_bins, double sample_rate,
                          double fmin_hz, double fmax_hz) {
  if (mel_bins < 1) throw InvalidInput("mel_filterbank: need at least one filter");
  if (nfft < 2) throw InvalidInput("mel_filterbank: nfft must be >= 2");
  if (!(sample_rate > 0) || !(fmin_hz >= 0) || !(fmin_hz < fmax_hz) ||
      fmax_hz > sample_rate / 2.0) {
    throw InvalidInput("mel_filterbank: need 0 <= fmin < fmax <= sample_rate / 2");
  }
  const auto bins = nfft / 2 + 1;
  const double mel_lo = hz_to_mel(static_cast<Real>(fmin_hz));
  const double mel_hi = hz_to_mel(static_cast<Real>(fmax_hz));
  std::vector<double> edges(mel_bins + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    const double mel = mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) /
                                    static_cast<double>(mel_bins + 1);
    edges[i] = mel_to_hz(static_cast<Real>(mel));
  }

  RealMatrix fb(mel_bins, bins);
  for (std::size_t m = 0; m < mel_bins; ++m) {
    const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
    Real peak = 0;
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / static_cast<double>(nfft);
      double w = 0;
      if (f > left && f <= center) {
        w = (f - left) / (center - left);
      } else if (f > center && f < right) {
        w = (right - f) / (right - center);
      }
      fb(m, k) = static_cast<Real>(w);
      peak = std::max(peak, fb(m, k));
    }
    // Filters narrower than one FFT bin can come out empty; they stay all-zero.
    if (peak > Real(0)) {
      for (std::size_t k = 0; k < bins; ++k) fb(m, k) /= peak;
    }
  }
  return fb;
}

LogMelSpectrogram log_mel(const AudioClip& clip, const DspConfig& config) {
  const auto frames = frame_signal(clip, config.frame_ms, config.hop_ms);
  const auto frame_len = frames.front().size();
  const auto nfft = next_power_of_two(frame_len);
  const double fmax = config.fmax_hz > 0 ? config.fmax_hz : clip.sample_rate / 2.0;
  const auto fb = mel_filterbank(nfft, config.mel_bins, clip.sample_rate, config.fmin_hz, fmax);
  const auto window = hamming_window(frame_len);

  LogMelSpectrogram out;
  out.frame_ms = config.frame_ms;
  out.hop_ms = config.hop_ms;
  out.values = RealMatrix(frames.size(), config.mel_bins);
  std::vector<Real> windowed(frame_len);
  for (std::size_t t = 0; t < frames.size(); ++t) {
    for (std::size_t i = 0; i < frame_len; ++i) windowed[i] = frames[t][i] * window[i];
    const auto ps = power_spectrum(windowed, nfft);
    for (std::size_t m = 0; m < config.mel_bins; ++m) {
      const auto filt = fb.row(m);
      Real energy = 0;
      for (std::size_t k = 0; k < ps.size(); ++k) energy += filt[k] * ps[k];
      out.values(t, m) = std::log(std::max(energy, config.log_floor));
    }
  }
  return out;
}

void write_feature_cache(const std::filesystem::path& path, const LogMelSpectrogram& spect) {
  BinaryWriter w;
  w.u32(static_cast<std::uint32_t>(spect.frames()));
  w.u32(static_cast<std::uint32_t>(spect.mel_bins()));
  for (auto v : spect.values.values) w.f32(static_cast<float>(v));
  write_file_bytes(path, w.bytes());
}

LogMelSpectrogram read_feature_cache(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  BinaryReader r(bytes);
  const auto frames = r.u32();
  const auto bins = r.u32();
  if (frames == 0 || bins == 0) throw FormatError("feature cache with empty shape: " + path.string());
  if (r.remaining() != static_cast<std::size_t>(frames) * bins * 4) {
    throw FormatError("feature cache size does not match header: " + path.string());
  }
  LogMelSpectrogram out;
  out.values = RealMatrix(frames, bins);
  for (auto& v : out.values.values) v = static_cast<Real>(r.f32());
  return out;
}

}  // namespace fcac
