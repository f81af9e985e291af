#pragma once

#include <cstddef>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include "umsnet/layers/cost_trace.hpp"
#include "umsnet/layers/functional.hpp"
#include "umsnet/numerics/autograd.hpp"
#include "umsnet/numerics/rng.hpp"

namespace umsnet {

enum class Mode { kTrain, kEval };

// Everything a forward pass needs besides parameters and input.
template <typename T>
struct Context {
  Tape<T>& tape;
  Mode mode = Mode::kEval;
  Rng* rng = nullptr;

  bool training() const { return mode == Mode::kTrain; }
  Rng& require_rng() const {
    if (rng == nullptr) throw ContractError("training-mode forward needs an rng");
    return *rng;
  }
};

template <typename T>
using ParamList = std::vector<Parameter<T>*>;

// Fan-in normal N(0, gain^2 / fan_in); the default gain suits a rectifier
// that follows the layer.
template <typename T>
Tensor<T> kaiming_normal(const Shape& shape, std::size_t fan_in, Rng& rng, double gain = std::numbers::sqrt2);
template <typename T>
Tensor<T> truncated_normal(const Shape& shape, double stddev, Rng& rng);

template <typename T>
class Conv1d {
 public:
  Conv1d(const std::string& name, const Conv1dSpec& spec, Rng& init);

  Var<T> forward(const Var<T>& x, Context<T>& ctx);
  void collect(ParamList<T>& out);
  Shape trace(const Shape& in, CostTrace& trace) const;

  const Conv1dSpec& spec() const { return spec_; }
  Parameter<T>& weight() { return weight_; }
  Parameter<T>* bias() { return bias_.get(); }

 private:
  std::string name_;
  Conv1dSpec spec_;
  Parameter<T> weight_;
  std::unique_ptr<Parameter<T>> bias_;
};

enum class NormKind { kBatch, kLayer };

struct NormSpec {
  NormKind kind = NormKind::kBatch;
  std::size_t num_features = 1;
  double eps = 1e-5;
  double momentum = 0.1;  // batch-norm running-statistics update rate
};

// Batch norm over (batch, C, T) or layer norm over the last axis. When a
// layer norm is applied to a (batch, C, T) feature map it normalises each
// time step across channels.
template <typename T>
class Norm {
 public:
  Norm(const std::string& name, const NormSpec& spec);

  // `channels_first` selects the (batch, C, T) layout for layer norm.
  Var<T> forward(const Var<T>& x, Context<T>& ctx, bool channels_first = true);
  void collect(ParamList<T>& out);
  Shape trace(const Shape& in, CostTrace& trace) const;

  const NormSpec& spec() const { return spec_; }
  Parameter<T>& scale() { return gamma_; }
  Parameter<T>& shift() { return beta_; }
  Parameter<T>& running_mean() { return running_mean_; }
  Parameter<T>& running_var() { return running_var_; }

 private:
  std::string name_;
  NormSpec spec_;
  Parameter<T> gamma_;
  Parameter<T> beta_;
  Parameter<T> running_mean_;
  Parameter<T> running_var_;
};

template <typename T>
class Linear {
 public:
  // Weights are fan-in normal with `gain` (1 unless a rectifier follows).
  Linear(const std::string& name, std::size_t in, std::size_t out, Rng& init, bool bias = true, double gain = 1.0);

  Var<T> forward(const Var<T>& x, Context<T>& ctx);
  void collect(ParamList<T>& out);
  Shape trace(const Shape& in, CostTrace& trace) const;

  Parameter<T>& weight() { return weight_; }
  Parameter<T>* bias() { return bias_.get(); }
  std::size_t in_features() const { return weight_.value.extent(1); }
  std::size_t out_features() const { return weight_.value.extent(0); }

 private:
  std::string name_;
  Parameter<T> weight_;
  std::unique_ptr<Parameter<T>> bias_;
};

struct AttentionSpec {
  std::size_t model_dim = 128;
  std::size_t num_heads = 4;
  double dropout = 0.0;  // on attention weights, training mode only

  std::size_t head_dim() const { return model_dim / num_heads; }
  void validate() const;
};

// Full (unmasked) multi-head self-attention over (batch, L, D).
template <typename T>
class MultiHeadAttention {
 public:
  MultiHeadAttention(const std::string& name, const AttentionSpec& spec, Rng& init);

  // When `weights_out` is given it receives the (batch*heads, L, L) attention
  // probabilities (before dropout).
  Var<T> forward(const Var<T>& x, Context<T>& ctx, Tensor<T>* weights_out = nullptr);
  void collect(ParamList<T>& out);
  Shape trace(const Shape& in, CostTrace& trace) const;

  const AttentionSpec& spec() const { return spec_; }
  Linear<T>& query() { return q_; }
  Linear<T>& key() { return k_; }
  Linear<T>& value() { return v_; }
  Linear<T>& output() { return o_; }

 private:
  std::string name_;
  AttentionSpec spec_;
  Linear<T> q_;
  Linear<T> k_;
  Linear<T> v_;
  Linear<T> o_;
};

// tokens (batch, K, D) -> (batch, K+1, D): class token at index 0, then the
// learnable position table added to every row.
template <typename T>
Var<T> add_position_and_class(const Var<T>& tokens, const Var<T>& pos, const Var<T>& cls);

template <typename T>
class PositionAndClass {
 public:
  PositionAndClass(const std::string& name, std::size_t num_slices, std::size_t dim, Rng& init);

  Var<T> forward(const Var<T>& tokens, Context<T>& ctx);
  void collect(ParamList<T>& out);
  Shape trace(const Shape& in, CostTrace& trace) const;

  Parameter<T>& position() { return pos_; }
  Parameter<T>& class_token() { return cls_; }

 private:
  std::string name_;
  Parameter<T> pos_;
  Parameter<T> cls_;
};

// Pre-norm encoder layer: x + MHA(LN(x)), then x + MLP(LN(x)) with a 4x
// GELU hidden layer. Dropout (training only) on attention weights and on the
// MLP output.
template <typename T>
class TransformerEncoderLayer {
 public:
  TransformerEncoderLayer(const std::string& name, const AttentionSpec& spec, std::size_t mlp_ratio,
                          double dropout, Rng& init);

  Var<T> forward(const Var<T>& x, Context<T>& ctx);
  void collect(ParamList<T>& out);
  Shape trace(const Shape& in, CostTrace& trace) const;

  MultiHeadAttention<T>& attention() { return attn_; }

 private:
  std::string name_;
  double dropout_;
  Norm<T> norm1_;
  MultiHeadAttention<T> attn_;
  Norm<T> norm2_;
  Linear<T> fc1_;
  Linear<T> fc2_;
};

}  // namespace umsnet
