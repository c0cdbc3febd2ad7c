#pragma once

// Prototype adaptation network.
//
// Both sub-modules share one single-head self-attention block over a row stack X [n x D]:
//   X1 = X W1, X2 = X W2, X3 = X W3
//   X'' = (softmax(X1 X2^T / sqrt(D)) X3) W4
//   out = layer_norm(X'' + X)            (per row, no affine)
// The prototype generation module runs it over all novel support embeddings
// and averages each class's K rows. The prototype/query adaptation module
// runs it once per query over [old prototypes; novel prototypes; query] and
// scores the updated query against the updated prototypes by scaled cosine.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fcac/tensor.hpp"

namespace fcac {

/// Four D x D linear maps, applied to row vectors as x W. Optional biases.
class AttentionParams {
 public:
  AttentionParams() = default;
  static AttentionParams init(std::size_t dim, std::uint64_t seed, bool use_bias = false);
  static AttentionParams identity(std::size_t dim);
  static AttentionParams from_values(std::size_t dim, bool use_bias,
                                     std::vector<std::vector<Real>> values);

  AttentionParams(const AttentionParams& other);
  AttentionParams& operator=(const AttentionParams& other);
  AttentionParams(AttentionParams&&) noexcept = default;
  AttentionParams& operator=(AttentionParams&&) noexcept = default;

  std::size_t dim() const { return dim_; }
  bool use_bias() const { return use_bias_; }
  const Tensor& weight(std::size_t i) const { return weights_.at(i); }
  Tensor& weight(std::size_t i) { return weights_.at(i); }
  /// Undefined tensor when biases are disabled.
  const Tensor& bias(std::size_t i) const { return biases_.at(i); }

  /// Weights first, then biases if enabled.
  std::vector<Tensor> parameters() const;
  void set_trainable(bool flag);

 private:
  std::size_t dim_ = 0;
  bool use_bias_ = false;
  std::array<Tensor, 4> weights_;
  std::array<Tensor, 4> biases_;
};

struct PanParams {
  AttentionParams apgm;
  AttentionParams pqam;
  Real temperature = Real(10);

  static PanParams init(std::size_t dim, std::uint64_t seed, bool use_bias = false,
                        Real temperature = Real(10));
  std::size_t dim() const { return apgm.dim(); }
  std::vector<Tensor> parameters() const;
  void set_trainable(bool flag);
};

/// Row-wise x W (+ b).
Tensor linear_map(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// softmax(X1 X2^T / sqrt(D)), the inner attention matrix.
Tensor attention_weights(const AttentionParams& params, const Tensor& x);
Tensor attention_block(const AttentionParams& params, const Tensor& x);

/// support: (N_nov * K) x D with each class's K rows contiguous -> N_nov x D prototypes.
Tensor apgm_forward(const AttentionParams& params, const Tensor& support, std::size_t shots);

struct PqamOutput {
  std::vector<Tensor> prototypes;  // per query: (N_old + N_nov) x D
  Tensor queries;                  // K_q_total x D
  Tensor scores;                   // K_q_total x (N_old + N_nov)
};

/// Either prototype block may be undefined (no old classes / no novel classes), not both.
PqamOutput pqam_forward(const AttentionParams& params, const Tensor& old_prototypes,
                        const Tensor& novel_prototypes, const Tensor& queries, Real temperature);

enum class ConsolidationMode { mean, last };

/// Collapses the per-query prototype stacks into the single set kept by the classifier.
Tensor consolidate_prototypes(std::span<const Tensor> stacks,
                              ConsolidationMode mode = ConsolidationMode::mean);

const char* to_string(ConsolidationMode mode);
ConsolidationMode consolidation_mode_from_string(const std::string& name);

}  // namespace fcac
