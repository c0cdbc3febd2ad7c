#include "fcac/pan.hpp"

#include <cmath>
#include <random>
#include <string>

#include "fcac/error.hpp"

namespace fcac {

namespace {

Tensor deep_copy(const Tensor& t) {
  if (!t.defined()) return {};
  return Tensor::from(t.shape(), {t.data().begin(), t.data().end()}, t.requires_grad());
}

void require_width(const Tensor& t, std::size_t dim, const char* what) {
  if (t.rank() != 2 || t.dim(1) != dim) {
    throw ShapeError(std::string(what) + " " + shape_to_string(t.shape()) +
                     " does not match attention dimension " + std::to_string(dim));
  }
}

// Everything after the three input projections; split out so the
// adaptation module can reuse prototype projections across queries.
Tensor attend(const AttentionParams& params, const Tensor& x, const Tensor& x1,
              const Tensor& x2, const Tensor& x3) {
  const Real inv_sqrt_d = Real(1) / std::sqrt(static_cast<Real>(params.dim()));
  const Tensor weights = softmax_rows(scale(matmul(x1, transpose(x2)), inv_sqrt_d));
  const Tensor mixed = linear_map(matmul(weights, x3), params.weight(3), params.bias(3));
  return layer_norm(add(mixed, x));
}

}  // namespace

AttentionParams AttentionParams::init(std::size_t dim, std::uint64_t seed, bool use_bias) {
  if (dim < 2) throw InvalidInput("attention dimension must be >= 2");
  AttentionParams p;
  p.dim_ = dim;
  p.use_bias_ = use_bias;
  std::mt19937_64 rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (std::size_t i = 0; i < 4; ++i) {
    std::vector<Real> w(dim * dim);
    for (auto& v : w) v = static_cast<Real>(dist(rng));
    p.weights_[i] = Tensor::from({dim, dim}, std::move(w), true);
    if (use_bias) p.biases_[i] = Tensor::zeros({dim}, true);
  }
  return p;
}

AttentionParams AttentionParams::identity(std::size_t dim) {
  AttentionParams p;
  p.dim_ = dim;
  for (auto& w : p.weights_) w = Tensor::identity(dim, true);
  return p;
}

AttentionParams AttentionParams::from_values(std::size_t dim, bool use_bias,
                                             std::vector<std::vector<Real>> values) {
  const std::size_t expected = use_bias ? 8 : 4;
  if (values.size() != expected) throw FormatError("attention parameter count mismatch");
  AttentionParams p;
  p.dim_ = dim;
  p.use_bias_ = use_bias;
  for (std::size_t i = 0; i < 4; ++i) {
    if (values[i].size() != dim * dim) throw FormatError("attention weight size mismatch");
    p.weights_[i] = Tensor::from({dim, dim}, std::move(values[i]), true);
    if (use_bias) {
      if (values[4 + i].size() != dim) throw FormatError("attention bias size mismatch");
      p.biases_[i] = Tensor::from({dim}, std::move(values[4 + i]), true);
    }
  }
  return p;
}

AttentionParams::AttentionParams(const AttentionParams& other)
    : dim_(other.dim_), use_bias_(other.use_bias_) {
  for (std::size_t i = 0; i < 4; ++i) {
    weights_[i] = deep_copy(other.weights_[i]);
    biases_[i] = deep_copy(other.biases_[i]);
  }
}

AttentionParams& AttentionParams::operator=(const AttentionParams& other) {
  if (this != &other) *this = AttentionParams(other);
  return *this;
}

std::vector<Tensor> AttentionParams::parameters() const {
  std::vector<Tensor> out(weights_.begin(), weights_.end());
  if (use_bias_) out.insert(out.end(), biases_.begin(), biases_.end());
  return out;
}

void AttentionParams::set_trainable(bool flag) {
  for (auto& w : weights_) w.set_requires_grad(flag);
  if (use_bias_) {
    for (auto& b : biases_) b.set_requires_grad(flag);
  }
}

PanParams PanParams::init(std::size_t dim, std::uint64_t seed, bool use_bias, Real temperature) {
  if (!(temperature > 0)) throw InvalidInput("cosine temperature must be positive");
  std::seed_seq seq{seed, std::uint64_t{0x9e3779b97f4a7c15ull}};
  std::array<std::uint64_t, 2> seeds{};
  seq.generate(seeds.begin(), seeds.end());
  return PanParams{AttentionParams::init(dim, seeds[0], use_bias),
                   AttentionParams::init(dim, seeds[1], use_bias), temperature};
}

std::vector<Tensor> PanParams::parameters() const {
  auto out = apgm.parameters();
  auto rest = pqam.parameters();
  out.insert(out.end(), rest.begin(), rest.end());
  return out;
}

void PanParams::set_trainable(bool flag) {
  apgm.set_trainable(flag);
  pqam.set_trainable(flag);
}

Tensor linear_map(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  Tensor y = matmul(x, weight);
  return bias.defined() ? add_bias(y, bias) : y;
}

Tensor attention_weights(const AttentionParams& params, const Tensor& x) {
  require_width(x, params.dim(), "attention input");
  const Real inv_sqrt_d = Real(1) / std::sqrt(static_cast<Real>(params.dim()));
  const Tensor x1 = linear_map(x, params.weight(0), params.bias(0));
  const Tensor x2 = linear_map(x, params.weight(1), params.bias(1));
  return softmax_rows(scale(matmul(x1, transpose(x2)), inv_sqrt_d));
}

Tensor attention_block(const AttentionParams& params, const Tensor& x) {
  require_width(x, params.dim(), "attention input");
  return attend(params, x, linear_map(x, params.weight(0), params.bias(0)),
                linear_map(x, params.weight(1), params.bias(1)),
                linear_map(x, params.weight(2), params.bias(2)));
}

Tensor apgm_forward(const AttentionParams& params, const Tensor& support, std::size_t shots) {
  require_width(support, params.dim(), "support embeddings");
  if (shots == 0 || support.dim(0) % shots != 0) {
    throw InvalidInput("support rows (" + std::to_string(support.dim(0)) +
                       ") are not a whole number of " + std::to_string(shots) + "-shot classes");
  }
  return group_mean_rows(attention_block(params, support), shots);
}

PqamOutput pqam_forward(const AttentionParams& params, const Tensor& old_prototypes,
                        const Tensor& novel_prototypes, const Tensor& queries, Real temperature) {
  require_width(queries, params.dim(), "query embeddings");
  std::vector<Tensor> blocks;
  if (old_prototypes.defined()) {
    require_width(old_prototypes, params.dim(), "old prototypes");
    blocks.push_back(old_prototypes);
  }
  if (novel_prototypes.defined()) {
    require_width(novel_prototypes, params.dim(), "novel prototypes");
    blocks.push_back(novel_prototypes);
  }
  if (blocks.empty()) throw InvalidInput("pqam_forward needs at least one prototype");
  const Tensor protos = blocks.size() == 1 ? blocks.front() : concat_rows(blocks);
  const auto n_protos = protos.dim(0);

  // Prototype rows are identical in every query's stack, so project them once.
  std::array<Tensor, 3> proto_proj, query_proj;
  for (std::size_t i = 0; i < 3; ++i) {
    proto_proj[i] = linear_map(protos, params.weight(i), params.bias(i));
    query_proj[i] = linear_map(queries, params.weight(i), params.bias(i));
  }

  PqamOutput out;
  std::vector<Tensor> updated_queries, score_rows;
  for (std::size_t k = 0; k < queries.dim(0); ++k) {
    const Tensor stack = concat_rows({protos, slice_rows(queries, k, 1)});
    std::array<Tensor, 3> proj;
    for (std::size_t i = 0; i < 3; ++i) {
      proj[i] = concat_rows({proto_proj[i], slice_rows(query_proj[i], k, 1)});
    }
    const Tensor y = attend(params, stack, proj[0], proj[1], proj[2]);
    Tensor p = slice_rows(y, 0, n_protos);
    Tensor e = slice_rows(y, n_protos, 1);
    score_rows.push_back(scale(cosine_similarity(e, p), temperature));
    updated_queries.push_back(std::move(e));
    out.prototypes.push_back(std::move(p));
  }
  out.queries = concat_rows(updated_queries);
  out.scores = concat_rows(score_rows);
  return out;
}

Tensor consolidate_prototypes(std::span<const Tensor> stacks, ConsolidationMode mode) {
  if (stacks.empty()) throw InvalidInput("consolidate_prototypes: no query stacks");
  for (const auto& s : stacks) {
    if (s.shape() != stacks.front().shape()) throw ShapeError("prototype stacks differ in shape");
  }
  if (mode == ConsolidationMode::last) return stacks.back();
  Tensor acc = stacks.front();
  for (std::size_t i = 1; i < stacks.size(); ++i) acc = add(acc, stacks[i]);
  return scale(acc, Real(1) / Real(stacks.size()));
}

const char* to_string(ConsolidationMode mode) {
  return mode == ConsolidationMode::last ? "last" : "mean";
}

ConsolidationMode consolidation_mode_from_string(const std::string& name) {
  if (name == "mean") return ConsolidationMode::mean;
  if (name == "last") return ConsolidationMode::last;
  throw ConfigError("unknown consolidation mode '" + name + "'");
}

}  // namespace fcac
