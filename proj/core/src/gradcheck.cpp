#include "fcac/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <utility>
#include <vector>

namespace fcac {

GradCheckResult finite_diff_check(const std::function<Tensor()>& loss_fn,
                                  std::span<Tensor> params, GradCheckOptions options) {
  for (auto& p : params) p.zero_grad();
  loss_fn().backward();

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t k = 0; k < params.size(); ++k)
    for (std::size_t i = 0; i < params[k].numel(); ++i) coords.emplace_back(k, i);
  if (options.max_coordinates != 0 && options.max_coordinates < coords.size()) {
    std::mt19937_64 rng(options.seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(options.max_coordinates);
  }

  GradCheckResult result;
  NoGradGuard no_grad;
  for (const auto& [k, i] : coords) {
    const Real analytic = params[k].has_grad() ? params[k].grad()[i] : Real(0);
    auto w = params[k].mutable_data();
    const Real original = w[i];
    w[i] = original + options.step;
    const Real up = loss_fn().item();
    w[i] = original - options.step;
    const Real down = loss_fn().item();
    w[i] = original;
    const Real numeric = (up - down) / (Real(2) * options.step);
    const Real denom = std::max(Real(1e-8), std::abs(analytic) + std::abs(numeric));
    result.max_relative_error =
        std::max(result.max_relative_error, std::abs(analytic - numeric) / denom);
    ++result.coordinates_checked;
  }
  return result;
}

}  // namespace fcac
