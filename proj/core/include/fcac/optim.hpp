#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fcac/tensor.hpp"

namespace fcac {

enum class OptimizerKind { sgd, adam };

struct OptimizerState {
  OptimizerKind kind = OptimizerKind::sgd;
  Real learning_rate = Real(1e-3);
  Real beta1 = Real(0.9);
  Real beta2 = Real(0.999);
  Real epsilon = Real(1e-8);
  std::uint64_t step_count = 0;
  // Adam moments, one buffer per parameter. Empty for SGD.
  std::vector<std::vector<Real>> first_moment;
  std::vector<std::vector<Real>> second_moment;
};

/// Fresh state for `params`; Adam moment buffers are allocated to match their shapes.
OptimizerState make_optimizer(OptimizerKind kind, Real learning_rate,
                              std::span<const Tensor> params);

/// p <- p - lr * g
void sgd_step(std::span<Tensor> params, OptimizerState& state);
/// Bias-corrected Adam update.
void adam_step(std::span<Tensor> params, OptimizerState& state);
/// Dispatches on state.kind.
void optimizer_step(std::span<Tensor> params, OptimizerState& state);

void zero_grads(std::span<Tensor> params);

const char* to_string(OptimizerKind kind);
OptimizerKind optimizer_kind_from_string(const std::string& name);

}  // namespace fcac
