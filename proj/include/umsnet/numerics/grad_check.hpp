#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "umsnet/numerics/autograd.hpp"

namespace umsnet {

struct GradCheckOptions {
  double epsilon = 1e-4;
  // Relative error is |analytic - numeric| / max(|analytic|, |numeric|, floor).
  double floor = 1e-3;
  // 0 checks every coordinate; otherwise at most this many per parameter,
  // evenly strided.
  std::size_t max_coords_per_param = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coords_checked = 0;
};

// Compares reverse-mode gradients of `fn` against central differences
// (f(x+e) - f(x-e)) / 2e for every coordinate of every parameter in `params`.
// `fn` must build a fresh graph on the tape it is given and return a scalar.
// Parameter values are restored before returning; gradients are left holding
// the analytic result.
template <typename T>
GradCheckResult grad_check(const std::function<Var<T>(Tape<T>&)>& fn,
                           const std::vector<Parameter<T>*>& params,
                           const GradCheckOptions& options = {}) {
  if (!(options.epsilon > 0.0)) throw ContractError("grad_check: epsilon must be positive");
  for (Parameter<T>* p : params) p->zero_grad();
  {
    Tape<T> tape;
    Var<T> loss = fn(tape);
    if (!loss.value().is_scalar()) {
      throw ContractError("grad_check: function output has shape " + shape_str(loss.shape()));
    }
    backward(loss);
  }
  auto evaluate = [&]() {
    Tape<T> tape(false);
    return static_cast<double>(fn(tape).value().item());
  };

  GradCheckResult result;
  const T eps = static_cast<T>(options.epsilon);
  for (Parameter<T>* p : params) {
    if (!p->trainable) continue;
    auto values = p->value.data();
    const std::size_t n = values.size();
    std::size_t stride = 1;
    if (options.max_coords_per_param > 0 && n > options.max_coords_per_param) {
      stride = (n + options.max_coords_per_param - 1) / options.max_coords_per_param;
    }
    for (std::size_t i = 0; i < n; i += stride) {
      const T saved = values[i];
      values[i] = saved + eps;
      const double up = evaluate();
      values[i] = saved - eps;
      const double down = evaluate();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * options.epsilon);
      const double analytic = static_cast<double>(p->grad[i]);
      const double denom = std::max({std::abs(analytic), std::abs(numeric), options.floor});
      const double rel = std::abs(analytic - numeric) / denom;
      ++result.coords_checked;
      if (rel >= result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_param = p->name;
        result.worst_index = i;
        result.analytic = analytic;
        result.numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace umsnet
