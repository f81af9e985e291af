#pragma once

#include <cstddef>
#include <optional>

#include "umsnet/numerics/autograd.hpp"
#include "umsnet/numerics/rng.hpp"

namespace umsnet {

struct Conv1dSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel_size = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;
  bool bias = true;

  // Throws ConfigError unless every field is positive and channels divide by groups.
  void validate() const;
  std::size_t weight_count() const { return out_channels * (in_channels / groups) * kernel_size; }
  std::size_t output_length(std::size_t input_length) const;
};

// Exact erf form: x * Phi(x).
double gelu_value(double x);

// x: (batch, C_in, T); weight: (C_out, C_in/groups, k); bias: (C_out).
template <typename T>
Var<T> conv1d(const Var<T>& x, const Var<T>& weight, const std::optional<Var<T>>& bias,
              const Conv1dSpec& spec);

template <typename T>
Var<T> gelu(const Var<T>& x);

// Max-subtracted softmax over the last axis.
template <typename T>
Var<T> softmax(const Var<T>& x);

// x: (..., in); weight: (out, in); bias: (out).
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const std::optional<Var<T>>& bias);

// Normalises over the last axis with biased variance.
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, double eps);

// x: (batch, C, T). In training mode uses batch statistics over (batch, T)
// and updates the running estimates in place (running_var receives the
// unbiased variance); otherwise normalises with the running estimates.
template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, Tensor<T>& running_mean,
                  Tensor<T>& running_var, double eps, double momentum, bool training);

// Inverted dropout: zeroes each element with probability `rate` and rescales
// survivors by 1/(1-rate).
template <typename T>
Var<T> dropout(const Var<T>& x, double rate, Rng& rng);

// tokens: (batch, K, D), cls: (1, D) -> (batch, K+1, D) with cls at index 0.
template <typename T>
Var<T> prepend_token(const Var<T>& tokens, const Var<T>& cls);

}  // namespace umsnet
