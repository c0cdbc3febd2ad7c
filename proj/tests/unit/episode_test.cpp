#include <gtest/gtest.h>

#include <map>
#include <numeric>
#include <random>
#include <set>

#include "fcac/episode.hpp"
#include "fcac/error.hpp"
#include "fcac/synth.hpp"

using namespace fcac;

namespace {

std::vector<Embedding> gaussian_set(const GaussianClasses& world, std::vector<ClassId> classes, std::size_t per_class,
                                    std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Embedding> out;
  for (auto c : classes) {
    auto v = world.sample(c, per_class, rng, "c" + std::to_string(c) + "_");
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

EpisodeConfig config(std::size_t n, std::size_t k, std::size_t q) {
  EpisodeConfig c;
  c.ways = n;
  c.shots = k;
  c.queries_per_class = q;
  return c;
}

}  // namespace

TEST(EpisodePlanner, PassUsesEverySampleOnce) {
  const GaussianClasses world(10, 8, 5.0, 1.0, 1);
  const auto base = gaussian_set(world, {0, 1, 2, 3, 4}, 20, 2);
  const auto novel = gaussian_set(world, {5, 6, 7, 8, 9}, 20, 3);
  EpisodePlanner planner(base, novel, config(5, 5, 15));
  std::mt19937_64 rng(4);
  for (int pass = 0; pass < 3; ++pass) {
    std::multiset<std::size_t> seen_base, seen_novel;
    const auto episodes = planner.plan_pass(rng);
    EXPECT_EQ(episodes.size(), 1u);
    for (const auto& ep : episodes) {
      seen_base.insert(ep.base_support.begin(), ep.base_support.end());
      seen_base.insert(ep.base_query.begin(), ep.base_query.end());
      seen_novel.insert(ep.novel_support.begin(), ep.novel_support.end());
      seen_novel.insert(ep.novel_query.begin(), ep.novel_query.end());
    }
    EXPECT_EQ(seen_base.size(), base.size());
    EXPECT_EQ(std::set<std::size_t>(seen_base.begin(), seen_base.end()).size(), base.size());
    EXPECT_EQ(std::set<std::size_t>(seen_novel.begin(), seen_novel.end()).size(), novel.size());
  }
}

TEST(EpisodePlanner, EpisodesRespectCountsAndSources) {
  const GaussianClasses world(12, 8, 5.0, 1.0, 5);
  const auto base = gaussian_set(world, {0, 1, 2, 3, 4, 5, 6}, 23, 6);
  const auto novel = gaussian_set(world, {7, 8, 9, 10, 11}, 41, 7);
  EpisodePlanner planner(base, novel, config(3, 2, 4));
  std::mt19937_64 rng(8);
  const auto episodes = planner.plan_pass(rng);
  ASSERT_FALSE(episodes.empty());
  std::set<std::size_t> used_base, used_novel;
  for (const auto& ep : episodes) {
    EXPECT_EQ(ep.novel_support.size(), ep.pseudo_novel_classes.size() * 2);
    EXPECT_EQ(ep.novel_query.size(), ep.pseudo_novel_classes.size() * 4);
    EXPECT_EQ(ep.base_support.size(), ep.pseudo_base_classes.size() * 2);
    for (std::size_t i = 0; i < ep.novel_support.size(); ++i) {
      EXPECT_EQ(*novel[ep.novel_support[i]].class_id, ep.pseudo_novel_classes[i / 2]);
    }
    for (std::size_t i = 0; i < ep.base_query.size(); ++i) {
      EXPECT_EQ(*base[ep.base_query[i]].class_id, ep.pseudo_base_classes[i / 4]);
    }
    for (auto c : ep.pseudo_base_classes) EXPECT_LT(c, 7u);
    for (auto c : ep.pseudo_novel_classes) EXPECT_GE(c, 7u);
    for (auto i : ep.base_support) EXPECT_TRUE(used_base.insert(i).second);
    for (auto i : ep.base_query) EXPECT_TRUE(used_base.insert(i).second);
    for (auto i : ep.novel_support) EXPECT_TRUE(used_novel.insert(i).second);
    for (auto i : ep.novel_query) EXPECT_TRUE(used_novel.insert(i).second);
  }
  // The pass ends only once no pseudo-novel class has 6 unused samples left.
  std::map<ClassId, std::size_t> left;
  for (std::size_t i = 0; i < novel.size(); ++i) {
    if (!used_novel.count(i)) ++left[*novel[i].class_id];
  }
  for (const auto& [c, n] : left) EXPECT_LT(n, 6u);
}

TEST(EpisodePlanner, SeedReproducesEpisodes) {
  const GaussianClasses world(6, 4, 5.0, 1.0, 9);
  const auto base = gaussian_set(world, {0, 1, 2}, 10, 1);
  const auto novel = gaussian_set(world, {3, 4, 5}, 10, 2);
  std::mt19937_64 r1(3), r2(3);
  const auto a = build_pseudo_episode(base, novel, config(2, 2, 3), r1);
  const auto b = build_pseudo_episode(base, novel, config(2, 2, 3), r2);
  EXPECT_EQ(a.novel_support, b.novel_support);
  EXPECT_EQ(a.base_query, b.base_query);
  EXPECT_EQ(a.pseudo_novel_classes, b.pseudo_novel_classes);
}

TEST(EpisodePlanner, RejectsSmallOrOverlappingClasses) {
  const GaussianClasses world(4, 4, 5.0, 1.0, 9);
  const auto base = gaussian_set(world, {0, 1}, 10, 1);
  const auto novel = gaussian_set(world, {2, 3}, 4, 2);
  EXPECT_THROW(EpisodePlanner(base, novel, config(2, 2, 3)), InvalidInput);
  const auto overlap = gaussian_set(world, {1, 2}, 10, 3);
  EXPECT_THROW(EpisodePlanner(base, overlap, config(2, 2, 3)), InvalidInput);
}

TEST(TrainPan, ZeroLearningRateKeepsParameters) {
  const GaussianClasses world(6, 4, 5.0, 1.0, 10);
  const auto base = gaussian_set(world, {0, 1, 2}, 10, 1);
  const auto novel = gaussian_set(world, {3, 4, 5}, 10, 2);
  auto cfg = config(2, 2, 3);
  cfg.learning_rate = 0;
  cfg.epochs = 3;
  const auto init = PanParams::init(4, 3);
  const auto result = train_pan(init, base, novel, cfg, 4);
  EXPECT_GT(result.episodes, 0u);
  const auto before = init.parameters();
  const auto after = result.params.parameters();
  for (std::size_t i = 0; i < before.size(); ++i) {
    EXPECT_TRUE(std::equal(before[i].data().begin(), before[i].data().end(), after[i].data().begin()));
    EXPECT_FALSE(after[i].requires_grad());
  }
}

TEST(TrainPan, MaxEpisodesCapsTraining) {
  const GaussianClasses world(6, 4, 5.0, 1.0, 10);
  const auto base = gaussian_set(world, {0, 1, 2}, 20, 1);
  const auto novel = gaussian_set(world, {3, 4, 5}, 20, 2);
  auto cfg = config(2, 2, 3);
  cfg.epochs = 50;
  cfg.max_episodes = 7;
  EXPECT_EQ(train_pan(PanParams::init(4, 3), base, novel, cfg, 4).episodes, 7u);
}

TEST(TrainPan, LowersHeldOutEpisodeLoss) {
  // 8 pseudo-base + 4 pseudo-novel Gaussian classes, D = 16, 200 episodes.
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const GaussianClasses world(12, 16, 3.0, 1.0, seed);
    std::vector<ClassId> b{0, 1, 2, 3, 4, 5, 6, 7}, n{8, 9, 10, 11};
    const auto base = gaussian_set(world, b, 40, seed + 10);
    const auto novel = gaussian_set(world, n, 40, seed + 20);
    const auto held_base = gaussian_set(world, b, 20, seed + 30);
    const auto held_novel = gaussian_set(world, n, 20, seed + 40);
    auto cfg = config(5, 5, 15);
    cfg.optimizer = OptimizerKind::adam;
    cfg.learning_rate = 1e-3;
    cfg.epochs = 100;
    cfg.max_episodes = 200;
    const auto init = PanParams::init(16, seed);
    const auto trained = train_pan(init, base, novel, cfg, seed).params;
    EXPECT_EQ(train_pan(init, base, novel, cfg, seed).episodes, 200u);

    std::mt19937_64 rng(seed + 50);
    EpisodePlanner planner(held_base, held_novel, cfg);
    Real before = 0, after = 0;
    const auto episodes = planner.plan_pass(rng);
    NoGradGuard guard;
    for (const auto& ep : episodes) {
      before += episode_loss(init, held_base, held_novel, ep).item();
      after += episode_loss(trained, held_base, held_novel, ep).item();
    }
    EXPECT_LT(after, before) << "seed " << seed;
  }
}
