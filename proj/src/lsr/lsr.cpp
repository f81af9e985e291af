#include "umsnet/lsr/lsr.hpp"

#include <string>

#include "umsnet/numerics/ops.hpp"

namespace umsnet {

namespace {

Conv1dSpec depthwise_spec(const LsrBlockConfig& c) {
  return Conv1dSpec{c.channels, c.channels, 3, 1, 1, c.dense_depthwise ? 1 : c.channels, true};
}

Conv1dSpec pointwise_spec(std::size_t in, std::size_t out) { return Conv1dSpec{in, out, 1, 1, 0, 1, true}; }

}  // namespace

// ---------------------------------------------------------------- LsrBlock

template <typename T>
LsrBlock<T>::LsrBlock(const std::string& name, const LsrBlockConfig& config, Rng& init)
    : name_(name),
      config_(config),
      dwconv_(name + ".dwconv", depthwise_spec(config), init),
      norm_(name + ".norm", NormSpec{config.norm, config.channels, 1e-5, 0.1}),
      pwconv1_(name + ".pwconv1", pointwise_spec(config.channels, kExpansion * config.channels), init),
      pwconv2_(name + ".pwconv2", pointwise_spec(kExpansion * config.channels, config.channels), init),
      layer_scale_(name + ".layer_scale",
                   Tensor<T>({config.channels}, static_cast<T>(config.layer_scale_init))) {
  if (!(config.survival_prob > 0.0 && config.survival_prob <= 1.0)) {
    throw ConfigError(name + ": survival probability must be in (0, 1], got " +
                      std::to_string(config.survival_prob));
  }
}

template <typename T>
Var<T> LsrBlock<T>::residual(const Var<T>& x, Context<T>& ctx) {
  const Shape& s = x.shape();
  if (s.size() != 3 || s[1] != config_.channels) {
    throw DimensionError(name_ + ": expected (batch, " + std::to_string(config_.channels) +
                         ", T), got " + shape_str(s));
  }
  Var<T> h = dwconv_.forward(x, ctx);
  h = norm_.forward(h, ctx);
  h = pwconv1_.forward(h, ctx);
  h = gelu(h);
  h = pwconv2_.forward(h, ctx);
  Var<T> lambda = reshape(ctx.tape.parameter(layer_scale_), {config_.channels, 1});
  return mul(h, lambda);
}

template <typename T>
Var<T> LsrBlock<T>::forward(const Var<T>& x, Context<T>& ctx) {
  Var<T> r = residual(x, ctx);
  if (ctx.training()) {
    if (config_.survival_prob < 1.0) {
      Rng& rng = ctx.require_rng();
      const std::size_t batch = x.shape()[0];
      Tensor<T> keep({batch, 1, 1});
      for (std::size_t b = 0; b < batch; ++b) keep[b] = rng.bernoulli(config_.survival_prob) ? T(1) : T(0);
      r = mul(r, ctx.tape.constant(std::move(keep)));
    }
  } else if (config_.eval_residual == EvalResidual::kScaleBySurvival && config_.survival_prob < 1.0) {
    r = mul_scalar(r, static_cast<T>(config_.survival_prob));
  }
  return add(x, r);
}

template <typename T>
void LsrBlock<T>::collect(ParamList<T>& out) {
  dwconv_.collect(out);
  norm_.collect(out);
  pwconv1_.collect(out);
  pwconv2_.collect(out);
  out.push_back(&layer_scale_);
}

template <typename T>
Shape LsrBlock<T>::trace(const Shape& in, CostTrace& trace) const {
  Shape s = dwconv_.trace(in, trace);
  s = norm_.trace(s, trace);
  s = pwconv1_.trace(s, trace);
  s = pwconv2_.trace(s, trace);
  CostRow row;
  row.layer = name_ + ".layer_scale";
  row.kind = "layer_scale";
  row.params = static_cast<std::int64_t>(config_.channels);
  trace.add(std::move(row));
  return s;
}

// ---------------------------------------------------------------- Downsample

template <typename T>
Downsample<T>::Downsample(const std::string& name, std::size_t in_channels, std::size_t out_channels,
                          Rng& init)
    : name_(name),
      norm_(name + ".norm", NormSpec{NormKind::kBatch, in_channels, 1e-5, 0.1}),
      conv_(name + ".conv", Conv1dSpec{in_channels, out_channels, 2, 2, 0, 1, true}, init) {}

template <typename T>
Var<T> Downsample<T>::forward(const Var<T>& x, Context<T>& ctx) {
  const Shape& s = x.shape();
  if (s.size() != 3 || s[2] % 2 != 0) {
    throw DimensionError(name_ + ": needs an even time axis, got " + shape_str(s));
  }
  return conv_.forward(norm_.forward(x, ctx), ctx);
}

template <typename T>
void Downsample<T>::collect(ParamList<T>& out) {
  norm_.collect(out);
  conv_.collect(out);
}

template <typename T>
Shape Downsample<T>::trace(const Shape& in, CostTrace& trace) const {
  if (in.size() != 3 || in[2] % 2 != 0) {
    throw DimensionError(name_ + ": needs an even time axis, got " + shape_str(in));
  }
  return conv_.trace(norm_.trace(in, trace), trace);
}

// ---------------------------------------------------------------- Stack

void StageConfig::validate() const {
  if (input_channels == 0) throw ConfigError("stage config: input_channels must be positive");
  for (std::size_t s = 0; s < 4; ++s) {
    if (depths[s] == 0) throw ConfigError("stage config: every stage needs at least one block");
    if (widths[s] == 0) throw ConfigError("stage config: widths must be positive");
  }
}

double survival_probability(std::size_t index, std::size_t total, double min_survival) {
  if (total <= 1) return 1.0;
  return 1.0 - (1.0 - min_survival) * static_cast<double>(index) / static_cast<double>(total - 1);
}

template <typename T>
LsrStack<T>::LsrStack(const std::string& name, const StageConfig& config, std::size_t input_length,
                      const StackOptions& options, Rng& init)
    : name_(name), config_(config), input_length_(input_length) {
  config_.validate();
  if (input_length < kReduction || input_length % kReduction != 0) {
    throw ConfigError(name + ": input length " + std::to_string(input_length) +
                      " cannot pass three stride-2 downsamples (needs a positive multiple of 8)");
  }
  if (!(options.min_survival > 0.0 && options.min_survival <= 1.0)) {
    throw ConfigError(name + ": min_survival must be in (0, 1]");
  }
  stem_ = std::make_unique<Conv1d<T>>(
      name + ".stem", Conv1dSpec{config.input_channels, config.widths[0], 1, 1, 0, 1, true}, init);
  const std::size_t total = config_.total_blocks();
  std::size_t index = 0;
  for (std::size_t s = 0; s < 4; ++s) {
    if (s > 0) {
      downsamples_.push_back(std::make_unique<Downsample<T>>(
          name + ".down" + std::to_string(s), config.widths[s - 1], config.widths[s], init));
    }
    for (std::size_t b = 0; b < config.depths[s]; ++b, ++index) {
      LsrBlockConfig bc;
      bc.channels = config.widths[s];
      bc.norm = options.norm;
      bc.layer_scale_init = options.layer_scale_init;
      bc.survival_prob = survival_probability(index, total, options.min_survival);
      bc.eval_residual = options.eval_residual;
      bc.dense_depthwise = options.dense_depthwise;
      stages_[s].push_back(std::make_unique<LsrBlock<T>>(
          name + ".stage" + std::to_string(s + 1) + ".block" + std::to_string(b), bc, init));
    }
  }
}

template <typename T>
Var<T> LsrStack<T>::forward(const Var<T>& x, Context<T>& ctx) {
  Var<T> h = stem_->forward(x, ctx);
  for (std::size_t s = 0; s < 4; ++s) {
    if (s > 0) h = downsamples_[s - 1]->forward(h, ctx);
    for (auto& block : stages_[s]) h = block->forward(h, ctx);
  }
  return h;
}

template <typename T>
void LsrStack<T>::collect(ParamList<T>& out) {
  stem_->collect(out);
  for (std::size_t s = 0; s < 4; ++s) {
    if (s > 0) downsamples_[s - 1]->collect(out);
    for (auto& block : stages_[s]) block->collect(out);
  }
}

template <typename T>
Shape LsrStack<T>::trace(const Shape& in, CostTrace& trace) const {
  Shape s = stem_->trace(in, trace);
  for (std::size_t st = 0; st < 4; ++st) {
    if (st > 0) s = downsamples_[st - 1]->trace(s, trace);
    for (const auto& block : stages_[st]) s = block->trace(s, trace);
  }
  return s;
}

template <typename T>
std::size_t LsrStack<T>::block_count() const {
  std::size_t n = 0;
  for (const auto& stage : stages_) n += stage.size();
  return n;
}

template class LsrBlock<float>;
template class LsrBlock<double>;
template class Downsample<float>;
template class Downsample<double>;
template class LsrStack<float>;
template class LsrStack<double>;

}  // namespace umsnet
