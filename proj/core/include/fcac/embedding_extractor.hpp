#pragma once

// Residual convolutional embedding extractor.
//
// stem 3x3 conv + ReLU
//   -> 4 stages x 2 residual blocks, widths (w, 2w, 4w, 8w); the first block
//      of every stage downsamples by 2 and projects the shortcut with a 1x1 conv
//   -> global average pool -> FC(D) = embedding
//   -> linear softmax head (training only)

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "fcac/dsp.hpp"
#include "fcac/embedding.hpp"
#include "fcac/optim.hpp"
#include "fcac/tensor.hpp"

namespace fcac {

struct EEConfig {
  std::array<std::size_t, 4> base_widths{64, 128, 256, 512};
  double width_scale = 1.0;
  std::size_t blocks_per_stage = 2;
  std::size_t embedding_dim = 512;
  std::size_t num_classes = 2;
  std::size_t mel_bins = 128;

  /// Channel counts after width scaling (each at least 1).
  std::array<std::size_t, 4> stage_widths() const;
  void validate() const;

  /// width_scale 0.125, D = 16, M = 32.
  static EEConfig desk_scale(std::size_t num_classes);
};

struct TrainingExample {
  LogMelSpectrogram spect;
  std::size_t label = 0;
};

struct EpochStats {
  Real mean_loss = 0;
  Real accuracy = 0;  // running accuracy over the epoch's mini-batches
};

struct EETrainConfig {
  std::size_t epochs = 10;
  Real learning_rate = Real(1e-3);
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
  /// Called after every epoch with its index; returning false stops training.
  std::function<bool(std::size_t, const EpochStats&)> on_epoch;
};

struct EETrainingLog {
  std::vector<EpochStats> epochs;
};

class EmbeddingExtractor {
 public:
  /// Seeded fan-in scaled uniform init; biases start at zero.
  static EmbeddingExtractor build(const EEConfig& config, std::uint64_t seed);

  EmbeddingExtractor(const EmbeddingExtractor& other);
  EmbeddingExtractor& operator=(const EmbeddingExtractor& other);
  EmbeddingExtractor(EmbeddingExtractor&&) noexcept = default;
  EmbeddingExtractor& operator=(EmbeddingExtractor&&) noexcept = default;

  const EEConfig& config() const { return config_; }
  bool frozen() const { return frozen_; }
  /// Idempotent. Detaches the parameters from differentiation and drops the head
  /// from the inference path.
  void freeze();

  /// [1 x D] FC output. Records a graph when grad mode is on and the model is trainable.
  Tensor forward_embedding(const LogMelSpectrogram& spect) const;
  /// [1 x num_classes] head logits. StateError once frozen.
  Tensor forward_logits(const LogMelSpectrogram& spect) const;

  Embedding embed(const LogMelSpectrogram& spect, std::string clip_id = {}) const;

  /// Replaces the softmax head with a freshly initialized one for `num_classes` outputs.
  void reset_head(std::size_t num_classes, std::uint64_t seed);

  std::span<const Tensor> parameters() const { return params_; }
  std::span<Tensor> mutable_parameters();

  /// FNV-1a over the raw parameter bytes.
  std::uint64_t parameter_hash() const;

  /// Rebuilds a model from a config and parameter values in parameters() order.
  static EmbeddingExtractor from_parameters(const EEConfig& config,
                                            std::vector<std::vector<Real>> values, bool frozen);

 private:
  EmbeddingExtractor() = default;

  struct BlockLayout {
    std::size_t conv1 = 0;  // weight index; bias at +1
    std::size_t conv2 = 0;
    std::size_t proj = 0;   // 0 when the shortcut is the identity
    std::size_t stride = 1;
  };

  Tensor trunk(const LogMelSpectrogram& spect) const;
  void layout();

  EEConfig config_;
  bool frozen_ = false;
  std::vector<Tensor> params_;
  std::vector<BlockLayout> blocks_;
  std::size_t fc_ = 0;
  std::size_t head_ = 0;
};

/// Adam on mean cross-entropy over shuffled mini-batches.
EETrainingLog train_ee(EmbeddingExtractor& ee, std::span<const TrainingExample> dataset,
                       const EETrainConfig& config);

/// Fraction of examples whose head argmax equals the label.
Real evaluate_accuracy(const EmbeddingExtractor& ee, std::span<const TrainingExample> dataset);

}  // namespace fcac
