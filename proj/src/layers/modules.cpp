#include "umsnet/layers/modules.hpp"

#include <cmath>

#include "umsnet/numerics/ops.hpp"

namespace umsnet {

namespace {

std::int64_t as_i64(std::size_t v) { return static_cast<std::int64_t>(v); }

template <typename T>
std::optional<Var<T>> optional_param(Parameter<T>* p, Tape<T>& tape) {
  if (p == nullptr) return std::nullopt;
  return tape.parameter(*p);
}

}  // namespace

template <typename T>
Tensor<T> kaiming_normal(const Shape& shape, std::size_t fan_in, Rng& rng, double gain) {
  Tensor<T> t(shape);
  const double stddev = gain / std::sqrt(static_cast<double>(fan_in));
  for (T& v : t.data()) v = static_cast<T>(rng.normal() * stddev);
  return t;
}

template <typename T>
Tensor<T> truncated_normal(const Shape& shape, double stddev, Rng& rng) {
  Tensor<T> t(shape);
  for (T& v : t.data()) v = static_cast<T>(rng.truncated_normal(stddev));
  return t;
}

// ---------------------------------------------------------------- Conv1d

template <typename T>
Conv1d<T>::Conv1d(const std::string& name, const Conv1dSpec& spec, Rng& init)
    : name_(name),
      spec_((spec.validate(), spec)),
      weight_(name + ".weight",
              kaiming_normal<T>({spec.out_channels, spec.in_channels / spec.groups, spec.kernel_size},
                                spec.in_channels / spec.groups * spec.kernel_size, init)) {
  if (spec_.bias) bias_ = std::make_unique<Parameter<T>>(name + ".bias", Tensor<T>({spec.out_channels}));
}

template <typename T>
Var<T> Conv1d<T>::forward(const Var<T>& x, Context<T>& ctx) {
  return conv1d(x, ctx.tape.parameter(weight_), optional_param(bias_.get(), ctx.tape), spec_);
}

template <typename T>
void Conv1d<T>::collect(ParamList<T>& out) {
  out.push_back(&weight_);
  if (bias_) out.push_back(bias_.get());
}

template <typename T>
Shape Conv1d<T>::trace(const Shape& in, CostTrace& trace) const {
  if (in.size() != 3 || in[1] != spec_.in_channels) {
    throw DimensionError(name_ + ": expected (batch, " + std::to_string(spec_.in_channels) +
                         ", T), got " + shape_str(in));
  }
  const std::size_t out_len = spec_.output_length(in[2]);
  CostRow row;
  row.layer = name_;
  row.kind = spec_.groups == 1 ? "conv1d" : "conv1d_grouped";
  row.weights = as_i64(spec_.weight_count());
  row.dense_weights = as_i64(spec_.out_channels * spec_.in_channels * spec_.kernel_size);
  row.params = row.weights + (spec_.bias ? as_i64(spec_.out_channels) : 0);
  row.mult_adds = as_i64(in[0] * spec_.out_channels * out_len * (spec_.in_channels / spec_.groups) *
                         spec_.kernel_size);
  trace.add(std::move(row));
  return {in[0], spec_.out_channels, out_len};
}

// ---------------------------------------------------------------- Norm

template <typename T>
Norm<T>::Norm(const std::string& name, const NormSpec& spec)
    : name_(name),
      spec_(spec),
      gamma_(name + ".weight", Tensor<T>({spec.num_features}, T(1))),
      beta_(name + ".bias", Tensor<T>({spec.num_features})),
      running_mean_(name + ".running_mean", Tensor<T>({spec.num_features}), false),
      running_var_(name + ".running_var", Tensor<T>({spec.num_features}, T(1)), false) {
  if (!(spec.eps > 0.0)) throw ConfigError(name + ": eps must be positive");
}

template <typename T>
Var<T> Norm<T>::forward(const Var<T>& x, Context<T>& ctx, bool channels_first) {
  Var<T> g = ctx.tape.parameter(gamma_);
  Var<T> b = ctx.tape.parameter(beta_);
  if (spec_.kind == NormKind::kBatch) {
    return batch_norm(x, g, b, running_mean_.value, running_var_.value, spec_.eps, spec_.momentum,
                      ctx.training());
  }
  if (channels_first && x.shape().size() == 3) {
    Var<T> y = layer_norm(permute(x, {0, 2, 1}), g, b, spec_.eps);
    return permute(y, {0, 2, 1});
  }
  return layer_norm(x, g, b, spec_.eps);
}

template <typename T>
void Norm<T>::collect(ParamList<T>& out) {
  out.push_back(&gamma_);
  out.push_back(&beta_);
  if (spec_.kind == NormKind::kBatch) {
    out.push_back(&running_mean_);
    out.push_back(&running_var_);
  }
}

template <typename T>
Shape Norm<T>::trace(const Shape& in, CostTrace& trace) const {
  CostRow row;
  row.layer = name_;
  row.kind = spec_.kind == NormKind::kBatch ? "batch_norm" : "layer_norm";
  row.params = as_i64(2 * spec_.num_features);
  trace.add(std::move(row));
  return in;
}

// ---------------------------------------------------------------- Linear

template <typename T>
Linear<T>::Linear(const std::string& name, std::size_t in, std::size_t out, Rng& init, bool bias, double gain)
    : name_(name), weight_(name + ".weight", kaiming_normal<T>({out, in}, in, init, gain)) {
  if (bias) bias_ = std::make_unique<Parameter<T>>(name + ".bias", Tensor<T>({out}));
}

template <typename T>
Var<T> Linear<T>::forward(const Var<T>& x, Context<T>& ctx) {
  return linear(x, ctx.tape.parameter(weight_), optional_param(bias_.get(), ctx.tape));
}

template <typename T>
void Linear<T>::collect(ParamList<T>& out) {
  out.push_back(&weight_);
  if (bias_) out.push_back(bias_.get());
}

template <typename T>
Shape Linear<T>::trace(const Shape& in, CostTrace& trace) const {
  if (in.empty() || in.back() != in_features()) {
    throw DimensionError(name_ + ": expected trailing dimension " + std::to_string(in_features()) +
                         ", got " + shape_str(in));
  }
  const std::size_t positions = shape_numel(in) / in.back();
  CostRow row;
  row.layer = name_;
  row.kind = "linear";
  row.params = as_i64(weight_.value.size() + (bias_ ? bias_->value.size() : 0));
  row.mult_adds = as_i64(positions * in_features() * out_features());
  trace.add(std::move(row));
  Shape out = in;
  out.back() = out_features();
  return out;
}

// ---------------------------------------------------------------- Attention

void AttentionSpec::validate() const {
  if (model_dim == 0 || num_heads == 0 || model_dim % num_heads != 0) {
    throw ConfigError("attention: model_dim " + std::to_string(model_dim) +
                      " not divisible by num_heads " + std::to_string(num_heads));
  }
}

template <typename T>
MultiHeadAttention<T>::MultiHeadAttention(const std::string& name, const AttentionSpec& spec, Rng& init)
    : name_(name),
      spec_((spec.validate(), spec)),
      q_(name + ".query", spec.model_dim, spec.model_dim, init),
      k_(name + ".key", spec.model_dim, spec.model_dim, init),
      v_(name + ".value", spec.model_dim, spec.model_dim, init),
      o_(name + ".out", spec.model_dim, spec.model_dim, init) {}

template <typename T>
Var<T> MultiHeadAttention<T>::forward(const Var<T>& x, Context<T>& ctx, Tensor<T>* weights_out) {
  const Shape& s = x.shape();
  if (s.size() != 3 || s[2] != spec_.model_dim) {
    throw DimensionError(name_ + ": expected (batch, L, " + std::to_string(spec_.model_dim) +
                         "), got " + shape_str(s));
  }
  const std::size_t batch = s[0], len = s[1], heads = spec_.num_heads, hd = spec_.head_dim();
  auto split = [&](const Var<T>& t) {
    return reshape(permute(reshape(t, {batch, len, heads, hd}), {0, 2, 1, 3}), {batch * heads, len, hd});
  };
  Var<T> q = split(q_.forward(x, ctx));
  Var<T> k = split(k_.forward(x, ctx));
  Var<T> v = split(v_.forward(x, ctx));
  Var<T> scores = mul_scalar(bmm(q, k, true), static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd))));
  Var<T> attn = softmax(scores);
  if (weights_out != nullptr) *weights_out = attn.value();
  if (ctx.training() && spec_.dropout > 0.0) attn = dropout(attn, spec_.dropout, ctx.require_rng());
  Var<T> mixed = bmm(attn, v);
  Var<T> merged = reshape(permute(reshape(mixed, {batch, heads, len, hd}), {0, 2, 1, 3}),
                          {batch, len, spec_.model_dim});
  return o_.forward(merged, ctx);
}

template <typename T>
void MultiHeadAttention<T>::collect(ParamList<T>& out) {
  q_.collect(out);
  k_.collect(out);
  v_.collect(out);
  o_.collect(out);
}

template <typename T>
Shape MultiHeadAttention<T>::trace(const Shape& in, CostTrace& trace) const {
  if (in.size() != 3 || in[2] != spec_.model_dim) {
    throw DimensionError(name_ + ": expected (batch, L, D), got " + shape_str(in));
  }
  q_.trace(in, trace);
  k_.trace(in, trace);
  v_.trace(in, trace);
  const std::size_t batch = in[0], len = in[1];
  CostRow row;
  row.layer = name_ + ".scores";
  row.kind = "attention";
  // QK^T and weights*V: heads * L * L * head_dim each.
  row.mult_adds = as_i64(2 * batch * len * len * spec_.model_dim);
  trace.add(std::move(row));
  return o_.trace(in, trace);
}

// ---------------------------------------------------------------- Position + class

template <typename T>
Var<T> add_position_and_class(const Var<T>& tokens, const Var<T>& pos, const Var<T>& cls) {
  const Shape& s = tokens.shape();
  if (s.size() != 3 || pos.shape() != Shape{s[1] + 1, s[2]}) {
    throw DimensionError("position table " + shape_str(pos.shape()) + " does not match " +
                         std::to_string(s.size() == 3 ? s[1] : 0) + " slices + class token for tokens " +
                         shape_str(s));
  }
  return add(prepend_token(tokens, cls), pos);
}

template <typename T>
PositionAndClass<T>::PositionAndClass(const std::string& name, std::size_t num_slices, std::size_t dim,
                                      Rng& init)
    : name_(name),
      pos_(name + ".position", truncated_normal<T>({num_slices + 1, dim}, 0.02, init)),
      cls_(name + ".class_token", truncated_normal<T>({1, dim}, 0.02, init)) {}

template <typename T>
Var<T> PositionAndClass<T>::forward(const Var<T>& tokens, Context<T>& ctx) {
  return add_position_and_class(tokens, ctx.tape.parameter(pos_), ctx.tape.parameter(cls_));
}

template <typename T>
void PositionAndClass<T>::collect(ParamList<T>& out) {
  out.push_back(&pos_);
  out.push_back(&cls_);
}

template <typename T>
Shape PositionAndClass<T>::trace(const Shape& in, CostTrace& trace) const {
  if (in.size() != 3 || in[1] + 1 != pos_.value.extent(0) || in[2] != pos_.value.extent(1)) {
    throw DimensionError(name_ + ": tokens " + shape_str(in) + " vs position table " +
                         shape_str(pos_.value.shape()));
  }
  CostRow row;
  row.layer = name_;
  row.kind = "embedding";
  row.params = as_i64(pos_.value.size() + cls_.value.size());
  trace.add(std::move(row));
  return {in[0], in[1] + 1, in[2]};
}

// ---------------------------------------------------------------- Encoder layer

template <typename T>
TransformerEncoderLayer<T>::TransformerEncoderLayer(const std::string& name, const AttentionSpec& spec,
                                                    std::size_t mlp_ratio, double dropout, Rng& init)
    : name_(name),
      dropout_(dropout),
      norm1_(name + ".norm1", NormSpec{NormKind::kLayer, spec.model_dim, 1e-5, 0.0}),
      attn_(name + ".attn", spec, init),
      norm2_(name + ".norm2", NormSpec{NormKind::kLayer, spec.model_dim, 1e-5, 0.0}),
      fc1_(name + ".mlp.fc1", spec.model_dim, mlp_ratio * spec.model_dim, init, true, std::numbers::sqrt2),
      fc2_(name + ".mlp.fc2", mlp_ratio * spec.model_dim, spec.model_dim, init) {}

template <typename T>
Var<T> TransformerEncoderLayer<T>::forward(const Var<T>& x, Context<T>& ctx) {
  Var<T> h = add(x, attn_.forward(norm1_.forward(x, ctx, false), ctx));
  Var<T> m = fc2_.forward(gelu(fc1_.forward(norm2_.forward(h, ctx, false), ctx)), ctx);
  if (ctx.training() && dropout_ > 0.0) m = dropout(m, dropout_, ctx.require_rng());
  return add(h, m);
}

template <typename T>
void TransformerEncoderLayer<T>::collect(ParamList<T>& out) {
  norm1_.collect(out);
  attn_.collect(out);
  norm2_.collect(out);
  fc1_.collect(out);
  fc2_.collect(out);
}

template <typename T>
Shape TransformerEncoderLayer<T>::trace(const Shape& in, CostTrace& trace) const {
  Shape s = norm1_.trace(in, trace);
  s = attn_.trace(s, trace);
  s = norm2_.trace(s, trace);
  s = fc1_.trace(s, trace);
  return fc2_.trace(s, trace);
}

#define UMSNET_INSTANTIATE_MODULES(T)                                                          \
  template Tensor<T> kaiming_normal<T>(const Shape&, std::size_t, Rng&, double);                  \
  template Tensor<T> truncated_normal<T>(const Shape&, double, Rng&);                          \
  template Var<T> add_position_and_class(const Var<T>&, const Var<T>&, const Var<T>&);         \
  template class Conv1d<T>;                                                                    \
  template class Norm<T>;                                                                      \
  template class Linear<T>;                                                                    \
  template class MultiHeadAttention<T>;                                                        \
  template class PositionAndClass<T>;                                                          \
  template class TransformerEncoderLayer<T>;

UMSNET_INSTANTIATE_MODULES(float)
UMSNET_INSTANTIATE_MODULES(double)

}  // namespace umsnet
