#include "fcac/optim.hpp"

#include <cmath>
#include <string>

#include "fcac/error.hpp"

namespace fcac {

namespace {

void check_grads(std::span<Tensor> params) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].has_grad()) {
      throw StateError("optimizer step: parameter " + std::to_string(i) + " has no gradient");
    }
  }
}

}  // namespace

OptimizerState make_optimizer(OptimizerKind kind, Real learning_rate,
                              std::span<const Tensor> params) {
  if (!(learning_rate >= Real(0))) throw InvalidInput("learning rate must be non-negative");
  OptimizerState state;
  state.kind = kind;
  state.learning_rate = learning_rate;
  if (kind == OptimizerKind::adam) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.numel(), Real(0));
      state.second_moment.emplace_back(p.numel(), Real(0));
    }
  }
  return state;
}

void sgd_step(std::span<Tensor> params, OptimizerState& state) {
  check_grads(params);
  for (auto& p : params) {
    auto w = p.mutable_data();
    auto g = p.grad();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= state.learning_rate * g[i];
  }
  ++state.step_count;
}

void adam_step(std::span<Tensor> params, OptimizerState& state) {
  check_grads(params);
  if (state.first_moment.size() != params.size()) {
    throw StateError("adam_step: moment buffers do not match the parameter list");
  }
  ++state.step_count;
  const auto t = static_cast<Real>(state.step_count);
  const Real c1 = Real(1) - std::pow(state.beta1, t);
  const Real c2 = Real(1) - std::pow(state.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto w = params[k].mutable_data();
    auto g = params[k].grad();
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    if (m.size() != w.size()) throw StateError("adam_step: moment buffer shape mismatch");
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = state.beta1 * m[i] + (Real(1) - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (Real(1) - state.beta2) * g[i] * g[i];
      const Real m_hat = m[i] / c1;
      const Real v_hat = v[i] / c2;
      w[i] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
  }
}

void optimizer_step(std::span<Tensor> params, OptimizerState& state) {
  switch (state.kind) {
    case OptimizerKind::sgd:
      sgd_step(params, state);
      break;
    case OptimizerKind::adam:
      adam_step(params, state);
      break;
  }
}

void zero_grads(std::span<Tensor> params) {
  for (auto& p : params) p.zero_grad();
}

const char* to_string(OptimizerKind kind) {
  return kind == OptimizerKind::adam ? "adam" : "sgd";
}

OptimizerKind optimizer_kind_from_string(const std::string& name) {
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "adam") return OptimizerKind::adam;
  throw ConfigError("unknown optimizer '" + name + "'");
}

}  // namespace fcac
