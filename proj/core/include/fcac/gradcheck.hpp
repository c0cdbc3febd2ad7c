#pragma once

#include <cstdint>
#include <functional>
#include <span>

#include "fcac/tensor.hpp"

namespace fcac {

struct GradCheckOptions {
  Real step = Real(1e-5);
  /// 0 checks every coordinate; otherwise a seeded random subset of this size.
  std::size_t max_coordinates = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  Real max_relative_error = 0;
  std::size_t coordinates_checked = 0;
};

/// Compares reverse-mode gradients of the scalar returned by `loss_fn`
/// against central differences, coordinate by coordinate. The relative error
/// of one coordinate is |a - n| / max(1e-8, |a| + |n|). Existing gradients
/// of `params` are zeroed first.
GradCheckResult finite_diff_check(const std::function<Tensor()>& loss_fn,
                                  std::span<Tensor> params, GradCheckOptions options = {});

}  // namespace fcac
