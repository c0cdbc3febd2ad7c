#include "fcac/episode.hpp"

#include <algorithm>
#include <numeric>

#include "fcac/error.hpp"

namespace fcac {

void EpisodeConfig::validate() const {
  if (ways < 1 || shots < 1 || queries_per_class < 1) {
    throw ConfigError("episode config needs N >= 1, K >= 1 and K_q >= 1");
  }
  if (!(learning_rate >= 0)) throw ConfigError("PAN learning rate must be non-negative");
}

EpisodePlanner::Pools EpisodePlanner::group(std::span<const Embedding> items) {
  Pools pools;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (!items[i].class_id) {
      throw InvalidInput("episode sample '" + items[i].clip_id + "' has no class label");
    }
    pools[*items[i].class_id].indices.push_back(i);
  }
  return pools;
}

EpisodePlanner::EpisodePlanner(std::span<const Embedding> pseudo_base,
                               std::span<const Embedding> pseudo_novel,
                               const EpisodeConfig& config)
    : config_(config), base_(group(pseudo_base)), novel_(group(pseudo_novel)) {
  config_.validate();
  if (novel_.empty()) throw InvalidInput("episodes need at least one pseudo-novel class");
  const auto need = config_.shots + config_.queries_per_class;
  for (const auto* pools : {&base_, &novel_}) {
    for (const auto& [cls, pool] : *pools) {
      if (pool.indices.size() < need) {
        throw InvalidInput("class " + std::to_string(cls) + " has " +
                           std::to_string(pool.indices.size()) + " samples, episodes need " +
                           std::to_string(need));
      }
    }
  }
  for (const auto& [cls, pool] : base_) {
    if (novel_.count(cls)) {
      throw InvalidInput("class " + std::to_string(cls) + " is both pseudo-base and pseudo-novel");
    }
  }
}

void EpisodePlanner::reset(std::mt19937_64& rng) {
  for (auto* pools : {&base_, &novel_}) {
    for (auto& [cls, pool] : *pools) {
      std::sort(pool.indices.begin(), pool.indices.end());
      std::shuffle(pool.indices.begin(), pool.indices.end(), rng);
      pool.cursor = 0;
    }
  }
  started_ = true;
}

std::vector<ClassId> EpisodePlanner::draw_classes(Pools& pools, std::mt19937_64& rng) const {
  const auto need = config_.shots + config_.queries_per_class;
  std::vector<ClassId> eligible;
  for (const auto& [cls, pool] : pools) {
    if (pool.indices.size() - pool.cursor >= need) eligible.push_back(cls);
  }
  std::shuffle(eligible.begin(), eligible.end(), rng);
  eligible.resize(std::min(eligible.size(), config_.ways));
  std::sort(eligible.begin(), eligible.end());
  return eligible;
}

std::optional<EpisodeBatch> EpisodePlanner::next(std::mt19937_64& rng) {
  if (!started_) reset(rng);
  auto novel_classes = draw_classes(novel_, rng);
  if (novel_classes.empty()) return std::nullopt;
  auto base_classes = draw_classes(base_, rng);

  EpisodeBatch ep;
  ep.shots = config_.shots;
  ep.queries_per_class = config_.queries_per_class;
  auto take = [&](Pools& pools, const std::vector<ClassId>& classes, std::vector<std::size_t>& support,
                  std::vector<std::size_t>& query) {
    for (auto cls : classes) {
      auto& pool = pools.at(cls);
      for (std::size_t i = 0; i < config_.shots; ++i) support.push_back(pool.indices[pool.cursor++]);
    }
    for (auto cls : classes) {
      auto& pool = pools.at(cls);
      for (std::size_t i = 0; i < config_.queries_per_class; ++i) query.push_back(pool.indices[pool.cursor++]);
    }
  };
  take(base_, base_classes, ep.base_support, ep.base_query);
  take(novel_, novel_classes, ep.novel_support, ep.novel_query);
  ep.pseudo_base_classes = std::move(base_classes);
  ep.pseudo_novel_classes = std::move(novel_classes);
  return ep;
}

std::vector<EpisodeBatch> EpisodePlanner::plan_pass(std::mt19937_64& rng) {
  reset(rng);
  std::vector<EpisodeBatch> out;
  while (auto ep = next(rng)) out.push_back(std::move(*ep));
  return out;
}

EpisodeBatch build_pseudo_episode(std::span<const Embedding> pseudo_base,
                                  std::span<const Embedding> pseudo_novel,
                                  const EpisodeConfig& config, std::mt19937_64& rng) {
  EpisodePlanner planner(pseudo_base, pseudo_novel, config);
  return *planner.next(rng);
}

Tensor stack_embeddings(std::span<const Embedding> items, std::span<const std::size_t> indices) {
  if (indices.empty()) throw InvalidInput("stack_embeddings: no rows");
  const auto d = items[indices.front()].vector.size();
  std::vector<Real> values;
  values.reserve(indices.size() * d);
  for (auto i : indices) {
    if (items[i].vector.size() != d) throw ShapeError("embeddings differ in dimension");
    values.insert(values.end(), items[i].vector.begin(), items[i].vector.end());
  }
  return Tensor::from({indices.size(), d}, std::move(values));
}

Tensor episode_loss(const PanParams& pan, std::span<const Embedding> pseudo_base,
                    std::span<const Embedding> pseudo_novel, const EpisodeBatch& ep) {
  const auto n_base = ep.pseudo_base_classes.size();
  const auto n_novel = ep.pseudo_novel_classes.size();
  Tensor base_protos;
  if (n_base > 0) {
    base_protos = group_mean_rows(stack_embeddings(pseudo_base, ep.base_support), ep.shots);
  }
  const Tensor novel_protos =
      apgm_forward(pan.apgm, stack_embeddings(pseudo_novel, ep.novel_support), ep.shots);

  std::vector<Tensor> query_blocks;
  std::vector<std::size_t> labels;
  if (n_base > 0) query_blocks.push_back(stack_embeddings(pseudo_base, ep.base_query));
  query_blocks.push_back(stack_embeddings(pseudo_novel, ep.novel_query));
  for (std::size_t c = 0; c < n_base + n_novel; ++c) {
    for (std::size_t q = 0; q < ep.queries_per_class; ++q) labels.push_back(c);
  }
  const Tensor queries = query_blocks.size() == 1 ? query_blocks.front() : concat_rows(query_blocks);
  const auto out = pqam_forward(pan.pqam, base_protos, novel_protos, queries, pan.temperature);
  return cross_entropy(out.scores, labels);
}

PanTrainResult train_pan(const PanParams& initial, std::span<const Embedding> pseudo_base,
                         std::span<const Embedding> pseudo_novel, const EpisodeConfig& config,
                         std::uint64_t seed) {
  PanTrainResult result{initial, {}, {}, 0};
  result.params.set_trainable(true);
  auto params = result.params.parameters();
  auto opt = make_optimizer(config.optimizer, config.learning_rate, params);
  EpisodePlanner planner(pseudo_base, pseudo_novel, config);
  std::mt19937_64 rng(seed);

  bool capped = false;
  for (std::size_t epoch = 0; epoch < config.epochs && !capped; ++epoch) {
    Real epoch_total = 0;
    std::size_t epoch_count = 0;
    for (const auto& ep : planner.plan_pass(rng)) {
      zero_grads(params);
      const Tensor loss = episode_loss(result.params, pseudo_base, pseudo_novel, ep);
      loss.backward();
      optimizer_step(params, opt);
      result.episode_losses.push_back(loss.item());
      epoch_total += loss.item();
      ++epoch_count;
      if (config.max_episodes && ++result.episodes >= config.max_episodes) {
        capped = true;
        break;
      }
      if (!config.max_episodes) ++result.episodes;
    }
    if (epoch_count) result.epoch_mean_losses.push_back(epoch_total / Real(epoch_count));
  }
  zero_grads(params);
  result.params.set_trainable(false);
  return result;
}

}  // namespace fcac
