#pragma once

// Pseudo-incremental episodic training of the PAN on the base training set.
//
// The base classes are split into pseudo-base (D01) and pseudo-novel (D02)
// groups. Each episode draws N classes from each group with K support and
// K_q query samples per class. A pass keeps drawing until no pseudo-novel
// class has K + K_q unused samples left, so no sample is drawn twice in a pass.

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "fcac/embedding.hpp"
#include "fcac/optim.hpp"
#include "fcac/pan.hpp"

namespace fcac {

struct EpisodeConfig {
  std::size_t ways = 5;
  std::size_t shots = 5;
  std::size_t queries_per_class = 15;
  std::size_t epochs = 20;
  Real learning_rate = Real(2e-4);
  OptimizerKind optimizer = OptimizerKind::sgd;
  /// Stops training after this many episodes; 0 = no cap.
  std::size_t max_episodes = 0;

  void validate() const;
};

/// Indices refer to the pseudo-base / pseudo-novel embedding arrays the planner was built from.
/// Support and query indices are grouped by class in the order of the class lists.
struct EpisodeBatch {
  std::vector<ClassId> pseudo_base_classes;
  std::vector<ClassId> pseudo_novel_classes;
  std::vector<std::size_t> base_support;
  std::vector<std::size_t> base_query;
  std::vector<std::size_t> novel_support;
  std::vector<std::size_t> novel_query;
  std::size_t shots = 0;
  std::size_t queries_per_class = 0;
};

class EpisodePlanner {
 public:
  /// Throws InvalidInput if a class has fewer than K + K_q samples or the two groups share a class.
  EpisodePlanner(std::span<const Embedding> pseudo_base, std::span<const Embedding> pseudo_novel,
                 const EpisodeConfig& config);

  /// Next episode of the current pass, or nullopt when the pass is exhausted.
  std::optional<EpisodeBatch> next(std::mt19937_64& rng);
  /// Starts a new pass with freshly shuffled sample orders.
  void reset(std::mt19937_64& rng);

  /// All episodes of one fresh pass.
  std::vector<EpisodeBatch> plan_pass(std::mt19937_64& rng);

 private:
  struct ClassPool {
    std::vector<std::size_t> indices;
    std::size_t cursor = 0;
  };
  using Pools = std::map<ClassId, ClassPool>;

  static Pools group(std::span<const Embedding> items);
  std::vector<ClassId> draw_classes(Pools& pools, std::mt19937_64& rng) const;

  EpisodeConfig config_;
  Pools base_;
  Pools novel_;
  bool started_ = false;
};

EpisodeBatch build_pseudo_episode(std::span<const Embedding> pseudo_base,
                                  std::span<const Embedding> pseudo_novel,
                                  const EpisodeConfig& config, std::mt19937_64& rng);

/// Cross-entropy of the adaptation scores against the query labels. Query
/// labels index pseudo-base classes first, then pseudo-novel classes.
/// Pseudo-base prototypes are per-class means of the base support rows.
Tensor episode_loss(const PanParams& pan, std::span<const Embedding> pseudo_base,
                    std::span<const Embedding> pseudo_novel, const EpisodeBatch& episode);

struct PanTrainResult {
  PanParams params;
  std::vector<Real> episode_losses;
  std::vector<Real> epoch_mean_losses;
  std::size_t episodes = 0;
};

/// Returns the trained (and frozen) parameters; `initial` is not modified.
PanTrainResult train_pan(const PanParams& initial, std::span<const Embedding> pseudo_base,
                         std::span<const Embedding> pseudo_novel, const EpisodeConfig& config,
                         std::uint64_t seed);

/// Stacks embedding vectors into a rows x D tensor.
Tensor stack_embeddings(std::span<const Embedding> items, std::span<const std::size_t> indices);

}  // namespace fcac
