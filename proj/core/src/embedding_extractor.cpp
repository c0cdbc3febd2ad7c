#include "fcac/embedding_extractor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <random>

#include "fcac/error.hpp"

namespace fcac {

namespace {

Tensor uniform_param(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<Real> values(shape_numel(shape));
  for (auto& v : values) v = static_cast<Real>(dist(rng));
  return Tensor::from(std::move(shape), std::move(values), true);
}

Tensor zero_param(Shape shape) { return Tensor::zeros(std::move(shape), true); }

Tensor conv(const Tensor& x, const Tensor& w, const Tensor& b, Conv2dOptions opt) {
  return add_channel_bias(conv2d(x, w, opt), b);
}

std::size_t argmax(std::span<const Real> v) {
  return static_cast<std::size_t>(std::distance(v.begin(), std::max_element(v.begin(), v.end())));
}

}  // namespace

std::array<std::size_t, 4> EEConfig::stage_widths() const {
  std::array<std::size_t, 4> out{};
  for (std::size_t i = 0; i < 4; ++i) {
    out[i] = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(base_widths[i] * width_scale)));
  }
  return out;
}

void EEConfig::validate() const {
  if (blocks_per_stage != 2) throw ConfigError("the extractor has 4 stages of exactly 2 residual blocks");
  if (!(width_scale > 0)) throw ConfigError("width_scale must be positive");
  if (embedding_dim < 2) throw ConfigError("embedding_dim must be >= 2");
  if (num_classes < 1) throw ConfigError("num_classes must be >= 1");
  if (mel_bins < 1) throw ConfigError("mel_bins must be >= 1");
  for (auto w : base_widths) {
    if (w == 0) throw ConfigError("stage widths must be positive");
  }
}

EEConfig EEConfig::desk_scale(std::size_t num_classes) {
  EEConfig c;
  c.width_scale = 0.125;
  c.embedding_dim = 16;
  c.mel_bins = 32;
  c.num_classes = num_classes;
  return c;
}

EmbeddingExtractor EmbeddingExtractor::build(const EEConfig& config, std::uint64_t seed) {
  config.validate();
  EmbeddingExtractor ee;
  ee.config_ = config;
  std::mt19937_64 rng(seed);
  const auto widths = config.stage_widths();

  ee.params_.push_back(uniform_param({widths[0], 1, 3, 3}, 9, rng));
  ee.params_.push_back(zero_param({widths[0]}));
  std::size_t in = widths[0];
  for (std::size_t s = 0; s < 4; ++s) {
    const auto out = widths[s];
    for (std::size_t b = 0; b < config.blocks_per_stage; ++b) {
      const auto cin = b == 0 ? in : out;
      ee.params_.push_back(uniform_param({out, cin, 3, 3}, cin * 9, rng));
      ee.params_.push_back(zero_param({out}));
      ee.params_.push_back(uniform_param({out, out, 3, 3}, out * 9, rng));
      ee.params_.push_back(zero_param({out}));
      if (b == 0) {
        ee.params_.push_back(uniform_param({out, cin, 1, 1}, cin, rng));
        ee.params_.push_back(zero_param({out}));
      }
    }
    in = out;
  }
  ee.params_.push_back(uniform_param({in, config.embedding_dim}, in, rng));
  ee.params_.push_back(zero_param({config.embedding_dim}));
  ee.params_.push_back(uniform_param({config.embedding_dim, config.num_classes}, config.embedding_dim, rng));
  ee.params_.push_back(zero_param({config.num_classes}));
  ee.layout();
  return ee;
}

void EmbeddingExtractor::layout() {
  blocks_.clear();
  std::size_t idx = 2;
  for (std::size_t s = 0; s < 4; ++s) {
    for (std::size_t b = 0; b < config_.blocks_per_stage; ++b) {
      BlockLayout blk;
      blk.conv1 = idx;
      blk.conv2 = idx + 2;
      idx += 4;
      if (b == 0) {
        blk.proj = idx;
        blk.stride = 2;
        idx += 2;
      }
      blocks_.push_back(blk);
    }
  }
  fc_ = idx;
  head_ = idx + 2;
  if (params_.size() != head_ + 2) throw FormatError("extractor parameter count does not match config");
}

EmbeddingExtractor::EmbeddingExtractor(const EmbeddingExtractor& other)
    : config_(other.config_),
      frozen_(other.frozen_),
      blocks_(other.blocks_),
      fc_(other.fc_),
      head_(other.head_) {
  params_.reserve(other.params_.size());
  for (const auto& p : other.params_) {
    params_.push_back(Tensor::from(p.shape(), {p.data().begin(), p.data().end()}, p.requires_grad()));
  }
}

EmbeddingExtractor& EmbeddingExtractor::operator=(const EmbeddingExtractor& other) {
  if (this != &other) *this = EmbeddingExtractor(other);
  return *this;
}

void EmbeddingExtractor::freeze() {
  frozen_ = true;
  for (auto& p : params_) {
    p.set_requires_grad(false);
    p.zero_grad();
  }
}

std::span<Tensor> EmbeddingExtractor::mutable_parameters() {
  if (frozen_) throw StateError("embedding extractor is frozen");
  return params_;
}

Tensor EmbeddingExtractor::trunk(const LogMelSpectrogram& spect) const {
  if (spect.mel_bins() != config_.mel_bins) {
    throw ShapeError("spectrogram has " + std::to_string(spect.mel_bins()) +
                     " mel bins, extractor expects " + std::to_string(config_.mel_bins));
  }
  if (spect.frames() == 0) throw ShapeError("empty spectrogram");
  const auto& P = params_;
  Tensor x = Tensor::from({1, spect.frames(), spect.mel_bins()}, spect.values.values);
  x = relu(conv(x, P[0], P[1], same_padding(3)));
  for (const auto& blk : blocks_) {
    Tensor h = relu(conv(x, P[blk.conv1], P[blk.conv1 + 1], same_padding(3, blk.stride)));
    h = conv(h, P[blk.conv2], P[blk.conv2 + 1], same_padding(3));
    const Tensor shortcut =
        blk.proj ? conv(x, P[blk.proj], P[blk.proj + 1], Conv2dOptions{blk.stride, 0}) : x;
    x = relu(add(h, shortcut));
  }
  const auto channels = x.dim(0);
  Tensor pooled = reshape(global_avg_pool(x), {1, channels});
  return add_bias(matmul(pooled, P[fc_]), P[fc_ + 1]);
}

Tensor EmbeddingExtractor::forward_embedding(const LogMelSpectrogram& spect) const {
  return trunk(spect);
}

Tensor EmbeddingExtractor::forward_logits(const LogMelSpectrogram& spect) const {
  if (frozen_) throw StateError("the softmax head is removed once the extractor is frozen");
  return add_bias(matmul(trunk(spect), params_[head_]), params_[head_ + 1]);
}

Embedding EmbeddingExtractor::embed(const LogMelSpectrogram& spect, std::string clip_id) const {
  NoGradGuard no_grad;
  const Tensor e = trunk(spect);
  return Embedding{std::move(clip_id), std::nullopt, {e.data().begin(), e.data().end()}};
}

void EmbeddingExtractor::reset_head(std::size_t num_classes, std::uint64_t seed) {
  if (frozen_) throw StateError("embedding extractor is frozen");
  if (num_classes < 1) throw ConfigError("num_classes must be >= 1");
  std::mt19937_64 rng(seed);
  config_.num_classes = num_classes;
  params_[head_] = uniform_param({config_.embedding_dim, num_classes}, config_.embedding_dim, rng);
  params_[head_ + 1] = zero_param({num_classes});
}

std::uint64_t EmbeddingExtractor::parameter_hash() const {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& p : params_) {
    for (auto v : p.data()) {
      const auto bits = std::bit_cast<std::array<unsigned char, sizeof(Real)>>(v);
      for (auto b : bits) {
        h ^= b;
        h *= 1099511628211ull;
      }
    }
  }
  return h;
}

EmbeddingExtractor EmbeddingExtractor::from_parameters(const EEConfig& config,
                                                       std::vector<std::vector<Real>> values,
                                                       bool frozen) {
  auto ee = build(config, 0);
  if (values.size() != ee.params_.size()) {
    throw FormatError("extractor checkpoint has " + std::to_string(values.size()) +
                      " tensors, expected " + std::to_string(ee.params_.size()));
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i].size() != ee.params_[i].numel()) {
      throw FormatError("extractor tensor " + std::to_string(i) + " has the wrong size");
    }
    ee.params_[i] = Tensor::from(ee.params_[i].shape(), std::move(values[i]), true);
  }
  if (frozen) ee.freeze();
  return ee;
}

EETrainingLog train_ee(EmbeddingExtractor& ee, std::span<const TrainingExample> dataset,
                       const EETrainConfig& config) {
  if (ee.frozen()) throw StateError("cannot train a frozen embedding extractor");
  if (config.batch_size == 0) throw ConfigError("batch_size must be positive");
  for (const auto& ex : dataset) {
    if (ex.label >= ee.config().num_classes) {
      throw InvalidInput("training label " + std::to_string(ex.label) + " out of range");
    }
  }
  EETrainingLog log;
  if (config.epochs == 0 || dataset.empty()) return log;

  auto params = ee.mutable_parameters();
  auto opt = make_optimizer(OptimizerKind::adam, config.learning_rate, params);
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    Real loss_total = 0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const auto stop = std::min(order.size(), start + config.batch_size);
      const Real weight = Real(1) / Real(stop - start);
      zero_grads(params);
      for (std::size_t i = start; i < stop; ++i) {
        const auto& ex = dataset[order[i]];
        const Tensor logits = ee.forward_logits(ex.spect);
        const std::size_t label[] = {ex.label};
        const Tensor loss = cross_entropy(logits, label);
        scale(loss, weight).backward();
        loss_total += loss.item();
        if (argmax(logits.data()) == ex.label) ++correct;
      }
      adam_step(params, opt);
    }
    log.epochs.push_back({loss_total / Real(dataset.size()), Real(correct) / Real(dataset.size())});
    if (config.on_epoch && !config.on_epoch(epoch, log.epochs.back())) break;
  }
  return log;
}

Real evaluate_accuracy(const EmbeddingExtractor& ee, std::span<const TrainingExample> dataset) {
  if (dataset.empty()) throw InvalidInput("evaluate_accuracy: empty dataset");
  NoGradGuard no_grad;
  std::size_t correct = 0;
  for (const auto& ex : dataset) {
    if (argmax(ee.forward_logits(ex.spect).data()) == ex.label) ++correct;
  }
  return Real(correct) / Real(dataset.size());
}

}  // namespace fcac
