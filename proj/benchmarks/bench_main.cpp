#include <benchmark/benchmark.h>

#include <cmath>
#include <random>

#include "fcac/classifier.hpp"
#include "fcac/dsp.hpp"
#include "fcac/embedding_extractor.hpp"
#include "fcac/pan.hpp"
#include "fcac/synth.hpp"

using namespace fcac;

namespace {

AudioClip tone_clip(double seconds) {
  AudioClip clip;
  clip.samples.resize(static_cast<std::size_t>(seconds * 16000));
  for (std::size_t i = 0; i < clip.samples.size(); ++i) {
    clip.samples[i] = 0.5 * std::sin(2 * M_PI * 440.0 * double(i) / 16000);
  }
  return clip;
}

Tensor random_tensor(std::size_t rows, std::size_t cols, std::uint64_t seed, bool grad = false) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<Real> v(rows * cols);
  for (auto& x : v) x = n(rng);
  return Tensor::from({rows, cols}, std::move(v), grad);
}

}  // namespace

static void BM_PowerSpectrum(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::vector<Real> frame(n);
  for (std::size_t i = 0; i < n; ++i) frame[i] = std::sin(0.01 * double(i));
  for (auto _ : state) benchmark::DoNotOptimize(power_spectrum(frame, n));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_PowerSpectrum)->RangeMultiplier(4)->Range(64, 4096)->Complexity(benchmark::oNLogN);

static void BM_LogMelOneSecond(benchmark::State& state) {
  const auto clip = tone_clip(1.0);
  DspConfig cfg;
  cfg.mel_bins = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(log_mel(clip, cfg));
}
BENCHMARK(BM_LogMelOneSecond)->Arg(32)->Arg(128)->Unit(benchmark::kMillisecond);

static void BM_AttentionForward(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  const auto params = AttentionParams::init(d, 1);
  const auto x = random_tensor(31, d, 2);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(attention_block(params, x));
}
BENCHMARK(BM_AttentionForward)->Arg(16)->Arg(64)->Arg(512)->Unit(benchmark::kMicrosecond);

static void BM_AttentionBackward(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  auto params = AttentionParams::init(d, 1);
  params.set_trainable(true);
  const auto x = random_tensor(31, d, 2);
  for (auto _ : state) {
    auto loss = sum(attention_block(params, x));
    loss.backward();
    for (auto& p : params.parameters()) p.zero_grad();
  }
}
BENCHMARK(BM_AttentionBackward)->Arg(16)->Arg(64)->Unit(benchmark::kMicrosecond);

static void BM_PqamPredict(benchmark::State& state) {
  const std::size_t d = 16;
  const auto classes = static_cast<std::size_t>(state.range(0));
  const GaussianClasses world(classes, d, 10.0, 1.0, 3);
  std::mt19937_64 rng(4);
  std::vector<Embedding> train;
  for (ClassId c = 0; c < classes; ++c) {
    auto v = world.sample(c, 5, rng, "c" + std::to_string(c) + "_");
    train.insert(train.end(), v.begin(), v.end());
  }
  const auto store = build_base(train);
  const auto pan = PanParams::init(d, 5);
  const auto probe = world.sample(0, 1, rng, "p").front();
  for (auto _ : state) benchmark::DoNotOptimize(predict(store, probe, EvalMode::pqam, &pan));
}
BENCHMARK(BM_PqamPredict)->Arg(10)->Arg(60)->Unit(benchmark::kMicrosecond);

static void BM_DeskExtractorEmbed(benchmark::State& state) {
  auto ee = EmbeddingExtractor::build(EEConfig::desk_scale(10), 6);
  ee.freeze();
  DspConfig cfg;
  cfg.mel_bins = 32;
  const auto spect = log_mel(tone_clip(1.0), cfg);
  for (auto _ : state) benchmark::DoNotOptimize(ee.embed(spect));
}
BENCHMARK(BM_DeskExtractorEmbed)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
