#pragma once

#include <array>
#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "umsnet/layers/modules.hpp"

namespace umsnet {

// How the stochastic-depth branch behaves outside training.
enum class EvalResidual {
  kKeep,             // x + residual
  kScaleBySurvival,  // x + survival_prob * residual (expectation matching)
};

struct LsrBlockConfig {
  std::size_t channels = 1;
  NormKind norm = NormKind::kBatch;
  double layer_scale_init = 1e-6;
  double survival_prob = 1.0;
  EvalResidual eval_residual = EvalResidual::kKeep;
  // Debug: replace the depthwise conv by a dense one of the same shape.
  bool dense_depthwise = false;
};

// Lightweight sensor residual block on (batch, C, T):
//
//   residual = pw2(gelu(pw1(norm(dw(x))))) * diag(lambda)
//   train:  out = x + b * residual,  b ~ Bernoulli(survival_prob) per sample
//   eval:   out = x + residual
//
// dw is a kernel-3 depthwise conv (groups = C), pw1 expands C -> 4C and pw2
// projects back; the block has exactly one norm and one activation.
template <typename T>
class LsrBlock {
 public:
  static constexpr std::size_t kExpansion = 4;

  LsrBlock(const std::string& name, const LsrBlockConfig& config, Rng& init);

  Var<T> forward(const Var<T>& x, Context<T>& ctx);
  // The scaled residual branch alone (no drop, no skip).
  Var<T> residual(const Var<T>& x, Context<T>& ctx);
  void collect(ParamList<T>& out);
  Shape trace(const Shape& in, CostTrace& trace) const;

  const LsrBlockConfig& config() const { return config_; }
  Conv1d<T>& dwconv() { return dwconv_; }
  Norm<T>& norm() { return norm_; }
  Conv1d<T>& pwconv1() { return pwconv1_; }
  Conv1d<T>& pwconv2() { return pwconv2_; }
  Parameter<T>& layer_scale() { return layer_scale_; }

 private:
  std::string name_;
  LsrBlockConfig config_;
  Conv1d<T> dwconv_;
  Norm<T> norm_;
  Conv1d<T> pwconv1_;
  Conv1d<T> pwconv2_;
  Parameter<T> layer_scale_;
};

// Batch norm followed by a kernel-2 stride-2 conv: (batch, C_in, T) -> (batch, C_out, T/2).
template <typename T>
class Downsample {
 public:
  Downsample(const std::string& name, std::size_t in_channels, std::size_t out_channels, Rng& init);

  Var<T> forward(const Var<T>& x, Context<T>& ctx);
  void collect(ParamList<T>& out);
  Shape trace(const Shape& in, CostTrace& trace) const;

  Norm<T>& norm() { return norm_; }
  Conv1d<T>& conv() { return conv_; }

 private:
  std::string name_;
  Norm<T> norm_;
  Conv1d<T> conv_;
};

struct StageConfig {
  std::array<std::size_t, 4> depths{2, 2, 2, 2};
  std::array<std::size_t, 4> widths{32, 64, 128, 256};
  std::size_t input_channels = 3;

  std::size_t total_blocks() const { return depths[0] + depths[1] + depths[2] + depths[3]; }
  void validate() const;
};

struct StackOptions {
  NormKind norm = NormKind::kBatch;
  double layer_scale_init = 1e-6;
  // Survival probability decays linearly from 1.0 on the first block to
  // this value on the last block of the stack.
  double min_survival = 0.5;
  EvalResidual eval_residual = EvalResidual::kKeep;
  bool dense_depthwise = false;
};

// Survival probability of block `index` out of `total` under the linear schedule.
double survival_probability(std::size_t index, std::size_t total, double min_survival);

// kernel-1 stem -> stage 1 -> downsample -> stage 2 -> downsample -> stage 3
// -> downsample -> stage 4: (batch, input_channels, T) -> (batch, widths[3], T/8).
template <typename T>
class LsrStack {
 public:
  static constexpr std::size_t kReduction = 8;

  // `input_length` is the T the stack will be fed; it must survive three
  // halvings (a multiple of 8).
  LsrStack(const std::string& name, const StageConfig& config, std::size_t input_length,
           const StackOptions& options, Rng& init);

  Var<T> forward(const Var<T>& x, Context<T>& ctx);
  void collect(ParamList<T>& out);
  Shape trace(const Shape& in, CostTrace& trace) const;

  const StageConfig& config() const { return config_; }
  std::size_t input_length() const { return input_length_; }
  Conv1d<T>& stem() { return *stem_; }
  std::vector<std::unique_ptr<LsrBlock<T>>>& stage(std::size_t s) { return stages_.at(s); }
  std::vector<std::unique_ptr<Downsample<T>>>& downsamples() { return downsamples_; }
  std::size_t block_count() const;

 private:
  std::string name_;
  StageConfig config_;
  std::size_t input_length_;
  std::unique_ptr<Conv1d<T>> stem_;
  std::array<std::vector<std::unique_ptr<LsrBlock<T>>>, 4> stages_;
  std::vector<std::unique_ptr<Downsample<T>>> downsamples_;
};

}  // namespace umsnet
