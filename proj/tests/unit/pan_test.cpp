#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "convert.hpp"
#include "fcac/episode.hpp"
#include "fcac/error.hpp"
#include "fcac/gradcheck.hpp"
#include "fcac/pan.hpp"
#include "oracles.hpp"

using namespace fcac;
using testing_support::max_abs_diff;
using testing_support::to_mat;
using testing_support::to_tensor;
using testing_support::weight_mat;

namespace {

struct Weights {
  oracle::Mat w[4];
};

Weights weights_of(const AttentionParams& p) {
  Weights w;
  for (std::size_t i = 0; i < 4; ++i) w.w[i] = weight_mat(p, i);
  return w;
}

AttentionParams params_from(const Weights& w) {
  std::vector<std::vector<Real>> values;
  for (const auto& m : w.w) {
    const auto flat = oracle::flatten(m);
    values.emplace_back(flat.begin(), flat.end());
  }
  return AttentionParams::from_values(w.w[0].size(), false, values);
}

std::vector<Embedding> cluster(ClassId c, std::size_t n, std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> noise(0.0, 0.3);
  std::vector<Embedding> out;
  for (std::size_t i = 0; i < n; ++i) {
    Embedding e{"c" + std::to_string(c) + "_" + std::to_string(i), c, std::vector<Real>(d)};
    for (std::size_t j = 0; j < d; ++j) e.vector[j] = (j % 4 == c % 4 ? 2.0 : 0.0) + noise(rng);
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace

TEST(Attention, MatchesScalarOracle) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t d = 2 + trial % 3, n = 1 + trial % 6;
    const auto p = AttentionParams::init(d, 100 + trial);
    const auto w = weights_of(p);
    const auto x = oracle::random_matrix(n, d, rng);
    const auto got = to_mat(attention_block(p, to_tensor(x)));
    EXPECT_LT(max_abs_diff(got, oracle::attention(x, w.w[0], w.w[1], w.w[2], w.w[3])), 1e-10);
  }
}

TEST(Attention, SingleRowIdentityIsLayerNormOfResidual) {
  // One row attends only to itself, so the block is LN(x + x).
  const auto p = AttentionParams::identity(3);
  const auto x = Tensor::matrix({{1.0, 2.0, 4.0}});
  EXPECT_LT(max_abs_diff(to_mat(attention_block(p, x)), to_mat(layer_norm(Tensor::matrix({{2.0, 4.0, 8.0}})))),
            1e-12);
}

TEST(Attention, OrthogonalRowsHandComputed) {
  // Identity maps, rows e1 and e2: weights softmax([1, 0] / sqrt 2).
  const auto p = AttentionParams::identity(2);
  const auto out = attention_block(p, Tensor::matrix({{1, 0}, {0, 1}}));
  const double a = std::exp(1 / std::sqrt(2.0)) / (std::exp(1 / std::sqrt(2.0)) + 1);
  const oracle::Mat mixed{{1 + a, 1 - a}, {1 - a, 1 + a}};
  EXPECT_LT(max_abs_diff(to_mat(out), oracle::layer_norm_rows(mixed)), 1e-12);
}

TEST(Attention, ZeroOutputMapLeavesLayerNormOfInput) {
  auto w = weights_of(AttentionParams::init(4, 5));
  w.w[3] = oracle::Mat(4, std::vector<double>(4, 0.0));
  std::mt19937_64 rng(2);
  const auto x = oracle::random_matrix(3, 4, rng);
  const auto got = to_mat(attention_block(params_from(w), to_tensor(x)));
  EXPECT_LT(max_abs_diff(got, oracle::layer_norm_rows(x)), 1e-12);
}

TEST(Attention, WeightsAreRowStochastic) {
  std::mt19937_64 rng(3);
  const auto p = AttentionParams::init(4, 6);
  const auto a = attention_weights(p, to_tensor(oracle::random_matrix(5, 4, rng)));
  for (std::size_t r = 0; r < 5; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 5; ++c) s += a.at(r, c);
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Attention, RowsAreStandardized) {
  std::mt19937_64 rng(4);
  const auto out = attention_block(AttentionParams::init(6, 7), to_tensor(oracle::random_matrix(4, 6, rng)));
  for (std::size_t r = 0; r < 4; ++r) {
    double mu = 0;
    for (std::size_t c = 0; c < 6; ++c) mu += out.at(r, c);
    EXPECT_NEAR(mu / 6, 0.0, 1e-12);
  }
}

TEST(Attention, DimensionMismatchIsRejected) {
  EXPECT_THROW(attention_block(AttentionParams::init(3, 1), Tensor::zeros({2, 4})), ShapeError);
}

TEST(Apgm, MatchesScalarOracle) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t d = 2 + trial % 3, shots = 1 + trial % 3, classes = 1 + trial % 2;
    const auto p = AttentionParams::init(d, 200 + trial);
    const auto w = weights_of(p);
    const auto s = oracle::random_matrix(shots * classes, d, rng);
    const auto got = to_mat(apgm_forward(p, to_tensor(s), shots));
    EXPECT_LT(max_abs_diff(got, oracle::apgm(s, shots, w.w[0], w.w[1], w.w[2], w.w[3])), 1e-10);
  }
}

TEST(Apgm, SingleShotEqualsAttentionRows) {
  std::mt19937_64 rng(6);
  const auto p = AttentionParams::init(3, 8);
  const auto s = to_tensor(oracle::random_matrix(4, 3, rng));
  EXPECT_LT(max_abs_diff(to_mat(apgm_forward(p, s, 1)), to_mat(attention_block(p, s))), 1e-15);
}

TEST(Apgm, IdenticalShotsOfOneClassGiveLayerNorm) {
  const auto p = AttentionParams::identity(3);
  const auto s = Tensor::matrix({{1, 2, 4}, {1, 2, 4}, {1, 2, 4}});
  const auto proto = apgm_forward(p, s, 3);
  EXPECT_LT(max_abs_diff(to_mat(proto), to_mat(layer_norm(Tensor::matrix({{2, 4, 8}})))), 1e-12);
}

TEST(Apgm, SwappingClassBlocksPermutesPrototypes) {
  std::mt19937_64 rng(7);
  const auto p = AttentionParams::init(4, 9);
  const auto a = oracle::random_matrix(2, 4, rng), b = oracle::random_matrix(2, 4, rng);
  oracle::Mat ab = a, ba = b;
  ab.insert(ab.end(), b.begin(), b.end());
  ba.insert(ba.end(), a.begin(), a.end());
  const auto pab = to_mat(apgm_forward(p, to_tensor(ab), 2));
  const auto pba = to_mat(apgm_forward(p, to_tensor(ba), 2));
  EXPECT_LT(max_abs_diff({pab[0]}, {pba[1]}), 1e-12);
  EXPECT_LT(max_abs_diff({pab[1]}, {pba[0]}), 1e-12);
}

TEST(Apgm, RejectsIndivisibleSupport) {
  EXPECT_THROW(apgm_forward(AttentionParams::init(3, 1), Tensor::zeros({5, 3}), 2), InvalidInput);
}

TEST(Pqam, MatchesScalarOracle) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t d = 2 + trial % 3, n_old = trial % 3, n_nov = 1 + trial % 2, nq = 1 + trial % 3;
    const auto p = AttentionParams::init(d, 300 + trial);
    const auto w = weights_of(p);
    const auto old = oracle::random_matrix(n_old, d, rng);
    const auto nov = oracle::random_matrix(n_nov, d, rng);
    const auto q = oracle::random_matrix(nq, d, rng);
    const auto got = pqam_forward(p, n_old ? to_tensor(old) : Tensor{}, to_tensor(nov), to_tensor(q), 10.0);
    const auto want = oracle::pqam(old, nov, q, 10.0, w.w[0], w.w[1], w.w[2], w.w[3]);
    EXPECT_LT(max_abs_diff(to_mat(got.scores), want.scores), 1e-10);
    EXPECT_LT(max_abs_diff(to_mat(got.queries), want.queries), 1e-10);
    ASSERT_EQ(got.prototypes.size(), nq);
    for (std::size_t k = 0; k < nq; ++k) EXPECT_LT(max_abs_diff(to_mat(got.prototypes[k]), want.prototypes[k]), 1e-10);
  }
}

TEST(Pqam, ScoreShapeAndTemperature) {
  std::mt19937_64 rng(9);
  const auto p = AttentionParams::identity(2);
  const auto out = pqam_forward(p, to_tensor(oracle::random_matrix(3, 2, rng)),
                                to_tensor(oracle::random_matrix(2, 2, rng)),
                                to_tensor(oracle::random_matrix(4, 2, rng)), 10.0);
  EXPECT_EQ(out.scores.shape(), (Shape{4, 5}));
  // With D = 2 every layer-normed row is +-(1, -1)/..., so cosines are exactly +-1.
  for (auto v : out.scores.data()) EXPECT_NEAR(std::abs(v), 10.0, 1e-4);
}

TEST(Pqam, NeedsSomePrototypes) {
  EXPECT_THROW(pqam_forward(AttentionParams::identity(2), Tensor{}, Tensor{}, Tensor::zeros({1, 2}), 1.0),
               InvalidInput);
}

TEST(Consolidate, MeanAndLast) {
  const auto a = Tensor::matrix({{1, 2}, {3, 4}});
  const auto b = Tensor::matrix({{3, 2}, {1, 0}});
  const std::vector<Tensor> one{a};
  EXPECT_LT(max_abs_diff(to_mat(consolidate_prototypes(one)), to_mat(a)), 0.0 + 1e-15);
  const std::vector<Tensor> two{a, b};
  EXPECT_LT(max_abs_diff(to_mat(consolidate_prototypes(two)), {{2, 2}, {2, 2}}), 1e-15);
  EXPECT_LT(max_abs_diff(to_mat(consolidate_prototypes(two, ConsolidationMode::last)), to_mat(b)), 1e-15);
  EXPECT_THROW(consolidate_prototypes(std::vector<Tensor>{}), InvalidInput);
  EXPECT_EQ(consolidation_mode_from_string("last"), ConsolidationMode::last);
}

TEST(PanParams, SeededInitAndTrainableFlag) {
  auto a = PanParams::init(4, 1);
  const auto b = PanParams::init(4, 1);
  EXPECT_EQ(to_mat(a.apgm.weight(0)), to_mat(b.apgm.weight(0)));
  EXPECT_NE(to_mat(a.apgm.weight(0)), to_mat(a.pqam.weight(0)));
  EXPECT_EQ(a.parameters().size(), 8u);
  a.set_trainable(false);
  for (const auto& t : a.parameters()) EXPECT_FALSE(t.requires_grad());
  EXPECT_EQ(PanParams::init(4, 1, true).parameters().size(), 16u);
}

TEST(PanGrad, FullEpisodeLossMatchesFiniteDifferences) {
  std::mt19937_64 rng(10);
  std::vector<Embedding> base, novel;
  for (ClassId c : {0u, 1u}) {
    auto v = cluster(c, 4, 4, rng);
    base.insert(base.end(), v.begin(), v.end());
  }
  for (ClassId c : {2u, 3u}) {
    auto v = cluster(c, 4, 4, rng);
    novel.insert(novel.end(), v.begin(), v.end());
  }
  EpisodeConfig cfg;
  cfg.ways = 2;
  cfg.shots = 2;
  cfg.queries_per_class = 2;
  std::mt19937_64 erng(11);
  const auto episode = build_pseudo_episode(base, novel, cfg, erng);
  for (bool bias : {false, true}) {
    const auto pan = PanParams::init(4, 12, bias);
    auto params = pan.parameters();
    const auto r = finite_diff_check([&] { return episode_loss(pan, base, novel, episode); }, params);
    EXPECT_EQ(r.coordinates_checked, bias ? 160u : 128u);
    EXPECT_LT(r.max_relative_error, 1e-4);
  }
}
