#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "fcac/dsp.hpp"
#include "fcac/error.hpp"
#include "fcac/wav.hpp"
#include "oracles.hpp"

using namespace fcac;

namespace {

std::vector<Real> noise(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<Real> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

AudioClip sine_clip(double hz, double seconds, std::uint32_t sr = 16000) {
  AudioClip clip;
  clip.sample_rate = sr;
  clip.samples.resize(static_cast<std::size_t>(seconds * sr));
  for (std::size_t i = 0; i < clip.samples.size(); ++i) {
    clip.samples[i] = 0.5 * std::sin(2 * std::numbers::pi * hz * double(i) / sr);
  }
  return clip;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("fcac_dsp_" + name);
}

}  // namespace

TEST(Dsp, PowerSpectrumMatchesDirectDft) {
  for (std::size_t n = 2; n <= 1024; n *= 2) {
    const auto frame = noise(n, n);
    const auto got = power_spectrum(frame, n);
    const auto want = oracle::dft_power(std::vector<double>(frame.begin(), frame.end()), n);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t k = 0; k < got.size(); ++k) EXPECT_NEAR(got[k], want[k], 1e-9) << "n=" << n << " k=" << k;
  }
}

TEST(Dsp, ZeroPaddedFrameMatchesDft) {
  const auto frame = noise(400, 7);
  const auto got = power_spectrum(frame);
  EXPECT_EQ(got.size(), 257u);
  const auto want = oracle::dft_power(std::vector<double>(frame.begin(), frame.end()), 512);
  for (std::size_t k = 0; k < got.size(); ++k) EXPECT_NEAR(got[k], want[k], 1e-9);
}

TEST(Dsp, ParsevalHolds) {
  for (std::size_t n = 4; n <= 1024; n *= 2) {
    const auto frame = noise(n, 100 + n);
    double time_energy = 0;
    for (auto v : frame) time_energy += v * v;
    const auto p = power_spectrum(frame, n);
    double freq_energy = p.front() + p.back();
    for (std::size_t k = 1; k + 1 < p.size(); ++k) freq_energy += 2 * p[k];
    EXPECT_NEAR(time_energy, freq_energy / double(n), 1e-9);
  }
}

TEST(Dsp, FftRejectsNonPowerOfTwo) {
  std::vector<std::complex<Real>> buf(6);
  EXPECT_THROW(fft_inplace(buf), InvalidInput);
  EXPECT_THROW(power_spectrum(noise(10, 1), 8), InvalidInput);
}

TEST(Dsp, OneSecondGivesNinetyEightFrames) {
  const auto spect = log_mel(sine_clip(440, 1.0), {});
  EXPECT_EQ(spect.frames(), 98u);
  EXPECT_EQ(spect.mel_bins(), 128u);
  EXPECT_EQ(ms_to_samples(25, 16000), 400u);
  EXPECT_EQ(ms_to_samples(10, 16000), 160u);
  EXPECT_EQ(frame_count(16000, 400, 160), 98u);
  EXPECT_EQ(next_power_of_two(400), 512u);
}

TEST(Dsp, ShortClipIsRejected) {
  auto clip = sine_clip(440, 0.01);
  EXPECT_THROW(log_mel(clip, {}), InvalidInput);
}

TEST(Dsp, HammingWindowEndpointsAndPeak) {
  const auto w = hamming_window(401);
  EXPECT_NEAR(w.front(), 0.08, 1e-12);
  EXPECT_NEAR(w.back(), 0.08, 1e-12);
  EXPECT_NEAR(w[200], 1.0, 1e-12);
}

TEST(Dsp, MelScaleRoundTrip) {
  EXPECT_NEAR(hz_to_mel(0), 0.0, 1e-12);
  EXPECT_NEAR(hz_to_mel(700), 2595 * std::log10(2.0), 1e-9);
  for (double hz : {50.0, 440.0, 1000.0, 7999.0}) EXPECT_NEAR(mel_to_hz(hz_to_mel(hz)), hz, 1e-9);
}

TEST(Dsp, FilterbankRowsPeakAtOne) {
  const auto fb = mel_filterbank(512, 40, 16000, 0, 8000);
  EXPECT_EQ(fb.rows, 40u);
  EXPECT_EQ(fb.cols, 257u);
  for (std::size_t m = 0; m < fb.rows; ++m) {
    double mx = 0;
    for (auto v : fb.row(m)) {
      EXPECT_GE(v, 0.0);
      mx = std::max(mx, double(v));
    }
    EXPECT_NEAR(mx, 1.0, 1e-12);
  }
  EXPECT_THROW(mel_filterbank(512, 40, 16000, 100, 9000), InvalidInput);
}

TEST(Dsp, ToneEnergyLandsInItsMelBand) {
  const auto spect = log_mel(sine_clip(1000, 1.0), {});
  const auto fb_center = [](std::size_t m) {
    const double lo = hz_to_mel(0), hi = hz_to_mel(8000);
    return mel_to_hz(lo + (hi - lo) * double(m + 1) / 129.0);
  };
  std::size_t best = 0;
  const auto row = spect.values.row(50);
  for (std::size_t m = 1; m < row.size(); ++m) {
    if (row[m] > row[best]) best = m;
  }
  EXPECT_NEAR(fb_center(best), 1000.0, 60.0);
}

TEST(Dsp, SilenceHitsTheLogFloor) {
  AudioClip clip;
  clip.samples.assign(16000, 0.0);
  const auto spect = log_mel(clip, {});
  EXPECT_NEAR(spect.values(0, 0), std::log(1e-10), 1e-12);
}

TEST(Dsp, FeatureCacheRoundTripsAtFloatPrecision) {
  const auto spect = log_mel(sine_clip(300, 0.5), {});
  const auto path = temp_path("cache.lms");
  write_feature_cache(path, spect);
  const auto back = read_feature_cache(path);
  ASSERT_EQ(back.frames(), spect.frames());
  ASSERT_EQ(back.mel_bins(), spect.mel_bins());
  for (std::size_t i = 0; i < spect.values.values.size(); ++i) {
    EXPECT_EQ(back.values.values[i], Real(static_cast<float>(spect.values.values[i])));
  }
  std::filesystem::remove(path);
}

TEST(Wav, Pcm16RoundTrip) {
  const auto clip = sine_clip(440, 0.1);
  const auto path = temp_path("tone.wav");
  write_wav_pcm16(path, clip.samples, clip.sample_rate);
  const auto back = read_wav(path);
  EXPECT_EQ(back.sample_rate, 16000u);
  ASSERT_EQ(back.samples.size(), clip.samples.size());
  for (std::size_t i = 0; i < clip.samples.size(); ++i) EXPECT_NEAR(back.samples[i], clip.samples[i], 1.0 / 32767);
  std::filesystem::remove(path);
}

TEST(Wav, GarbageIsAFormatError) {
  const auto path = temp_path("junk.wav");
  {
    std::ofstream out(path, std::ios::binary);
    out << "not a wav file at all";
  }
  EXPECT_THROW(read_wav(path), FormatError);
  std::filesystem::remove(path);
  EXPECT_THROW(read_wav(temp_path("missing.wav")), NotFound);
}
