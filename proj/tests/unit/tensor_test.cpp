#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "convert.hpp"
#include "fcac/error.hpp"
#include "fcac/gradcheck.hpp"
#include "fcac/tensor.hpp"
#include "oracles.hpp"

using namespace fcac;
using testing_support::to_mat;
using testing_support::to_tensor;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, bool grad = true) {
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<Real> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor::from(std::move(shape), std::move(v), grad);
}

void expect_grads_match(const std::function<Tensor()>& f, std::vector<Tensor> params, double tol = 1e-6) {
  const auto r = finite_diff_check(f, params);
  EXPECT_GT(r.coordinates_checked, 0u);
  EXPECT_LT(r.max_relative_error, tol);
}

}  // namespace

TEST(Tensor, FactoriesAndShapes) {
  const auto z = Tensor::zeros({2, 3});
  EXPECT_EQ(z.numel(), 6u);
  EXPECT_EQ(z.rank(), 2u);
  const auto m = Tensor::matrix({{1, 2}, {3, 4}});
  EXPECT_EQ(m.at(1, 0), 3);
  const auto id = Tensor::identity(3);
  EXPECT_EQ(id.at(2, 2), 1);
  EXPECT_EQ(id.at(0, 2), 0);
  EXPECT_THROW(Tensor::from({2, 2}, {1, 2, 3}), ShapeError);
  EXPECT_THROW(Tensor::matrix({{1, 2}, {3}}), ShapeError);
}

TEST(Tensor, MatmulMatchesNaiveOracle) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = oracle::random_matrix(1 + trial % 4, 2 + trial % 3, rng);
    const auto b = oracle::random_matrix(a[0].size(), 1 + trial % 5, rng);
    const auto got = to_mat(matmul(to_tensor(a), to_tensor(b)));
    EXPECT_LT(testing_support::max_abs_diff(got, oracle::matmul(a, b)), 1e-12);
  }
  EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
}

TEST(Tensor, SoftmaxRowsSumToOne) {
  const auto s = softmax_rows(Tensor::matrix({{1000, 1000, 999}, {-5, 0, 5}}));
  for (std::size_t r = 0; r < 2; ++r) {
    double total = 0;
    for (std::size_t c = 0; c < 3; ++c) total += s.at(r, c);
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
  EXPECT_TRUE(std::isfinite(s.at(0, 0)));
}

TEST(Tensor, LayerNormRowsAreStandardized) {
  std::mt19937_64 rng(2);
  const auto x = random_tensor({4, 6}, rng, false);
  const auto y = layer_norm(x);
  for (std::size_t r = 0; r < 4; ++r) {
    double mu = 0, var = 0;
    for (std::size_t c = 0; c < 6; ++c) mu += y.at(r, c) / 6;
    for (std::size_t c = 0; c < 6; ++c) var += (y.at(r, c) - mu) * (y.at(r, c) - mu) / 6;
    EXPECT_NEAR(mu, 0.0, 1e-12);
    EXPECT_NEAR(var, 1.0, 1e-3);
  }
  EXPECT_LT(testing_support::max_abs_diff(to_mat(y), oracle::layer_norm_rows(to_mat(x))), 1e-12);
}

TEST(Tensor, CosineSimilarityMatchesOracle) {
  std::mt19937_64 rng(3);
  const auto a = oracle::random_matrix(3, 4, rng);
  const auto b = oracle::random_matrix(2, 4, rng);
  const auto c = cosine_similarity(to_tensor(a), to_tensor(b));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(c.at(i, j), oracle::cosine(a[i], b[j]), 1e-12);
}

TEST(Tensor, Conv2dMatchesSlidingWindowOracle) {
  std::mt19937_64 rng(4);
  for (std::size_t stride : {1u, 2u}) {
    for (std::size_t pad : {0u, 1u}) {
      const std::size_t ci = 2, co = 3, h = 7, w = 5, k = 3;
      const auto x = random_tensor({ci, h, w}, rng, false);
      const auto kern = random_tensor({co, ci, k, k}, rng, false);
      oracle::Vol xv(ci, oracle::Mat(h, std::vector<double>(w)));
      for (std::size_t c = 0; c < ci; ++c)
        for (std::size_t i = 0; i < h; ++i)
          for (std::size_t j = 0; j < w; ++j) xv[c][i][j] = x.at((c * h + i) * w + j);
      std::vector<oracle::Vol> kv(co, oracle::Vol(ci, oracle::Mat(k, std::vector<double>(k))));
      for (std::size_t o = 0; o < co; ++o)
        for (std::size_t c = 0; c < ci; ++c)
          for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = 0; j < k; ++j) kv[o][c][i][j] = kern.at(((o * ci + c) * k + i) * k + j);
      const auto want = oracle::conv2d(xv, kv, stride, pad);
      const auto got = conv2d(x, kern, {stride, pad});
      ASSERT_EQ(got.dim(1), want[0].size());
      ASSERT_EQ(got.dim(2), want[0][0].size());
      for (std::size_t o = 0; o < co; ++o)
        for (std::size_t i = 0; i < got.dim(1); ++i)
          for (std::size_t j = 0; j < got.dim(2); ++j)
            EXPECT_NEAR(got.at((o * got.dim(1) + i) * got.dim(2) + j), want[o][i][j], 1e-12);
    }
  }
}

TEST(TensorGrad, ElementwiseAndReductions) {
  std::mt19937_64 rng(5);
  auto a = random_tensor({3, 4}, rng);
  auto b = random_tensor({3, 4}, rng);
  expect_grads_match([&] { return sum(mul(add(a, b), sub(a, scale(b, 0.5)))); }, {a, b});
  expect_grads_match([&] { return mean(mul(a, a)); }, {a});
}

TEST(TensorGrad, MatmulTransposeBias) {
  std::mt19937_64 rng(6);
  auto x = random_tensor({3, 4}, rng);
  auto w = random_tensor({4, 2}, rng);
  auto bias = random_tensor({2}, rng);
  expect_grads_match([&] { return sum(mul(add_bias(matmul(x, w), bias), add_bias(matmul(x, w), bias))); },
                     {x, w, bias});
  expect_grads_match([&] { return sum(matmul(transpose(x), x)); }, {x});
}

TEST(TensorGrad, SoftmaxLayerNormNormalize) {
  std::mt19937_64 rng(7);
  auto x = random_tensor({3, 5}, rng);
  auto target = random_tensor({3, 5}, rng, false);
  expect_grads_match([&] { return sum(mul(softmax_rows(x), target)); }, {x});
  expect_grads_match([&] { return sum(mul(layer_norm(x), target)); }, {x});
  expect_grads_match([&] { return sum(mul(l2_normalize_rows(x), target)); }, {x});
}

TEST(TensorGrad, CosineConcatSliceGroupMean) {
  std::mt19937_64 rng(8);
  auto a = random_tensor({4, 3}, rng);
  auto b = random_tensor({2, 3}, rng);
  auto weights = random_tensor({4, 2}, rng, false);
  expect_grads_match([&] { return sum(mul(cosine_similarity(a, b), weights)); }, {a, b});
  expect_grads_match(
      [&] {
        const auto stacked = concat_rows({a, b});
        return sum(mul(group_mean_rows(stacked, 3), group_mean_rows(slice_rows(stacked, 0, 6), 3)));
      },
      {a, b});
}

TEST(TensorGrad, ReluConvPoolCrossEntropy) {
  std::mt19937_64 rng(9);
  auto x = random_tensor({2, 6, 5}, rng);
  auto k = random_tensor({3, 2, 3, 3}, rng);
  auto cb = random_tensor({3}, rng);
  auto w = random_tensor({3, 4}, rng);
  const std::vector<std::size_t> label{2};
  expect_grads_match(
      [&] {
        const auto h = relu(add_channel_bias(conv2d(x, k, same_padding(3, 2)), cb));
        const auto pooled = reshape(global_avg_pool(h), {1, 3});
        return cross_entropy(matmul(pooled, w), label);
      },
      {x, k, cb, w});
  expect_grads_match([&] { return sum(mul(avg_pool2d(x, 2), avg_pool2d(x, 2))); }, {x});
}

TEST(TensorGrad, LeafGradsAccumulateUntilZeroed) {
  auto x = Tensor::from({2}, {1, 2}, true);
  sum(mul(x, x)).backward();
  sum(mul(x, x)).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 4.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 8.0);
  x.zero_grad();
  EXPECT_DOUBLE_EQ(x.grad()[1], 0.0);
}

TEST(TensorGrad, NoGradGuardSkipsRecording) {
  auto x = Tensor::from({2}, {1, 2}, true);
  Tensor y;
  {
    NoGradGuard guard;
    y = sum(mul(x, x));
  }
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(sum(mul(x, x)).requires_grad());
}

TEST(TensorGrad, NonLeafIsReadOnly) {
  auto x = Tensor::from({2}, {1, 2}, true);
  auto y = scale(x, 2.0);
  EXPECT_THROW(y.mutable_data(), StateError);
  EXPECT_THROW(y.backward(), ShapeError);
}

TEST(TensorGrad, CrossEntropyRejectsBadLabels) {
  const std::vector<std::size_t> labels{3};
  EXPECT_THROW(cross_entropy(Tensor::zeros({1, 3}), labels), InvalidInput);
}
