#include "umsnet/model/umsnet.hpp"

#include <set>

#include "umsnet/numerics/ops.hpp"

namespace umsnet {

template <typename T>
Var<T> fuse_sensors(const std::vector<Var<T>>& per_sensor) {
  if (per_sensor.empty()) throw DimensionError("fuse_sensors: no sensor features");
  const Shape& s = per_sensor.front().shape();
  if (s.size() != 3) throw DimensionError("fuse_sensors: expected (rows, C, L), got " + shape_str(s));
  std::vector<Var<T>> flat;
  flat.reserve(per_sensor.size());
  for (std::size_t i = 0; i < per_sensor.size(); ++i) {
    if (per_sensor[i].shape() != s) {
      throw DimensionError("fuse_sensors: sensor " + std::to_string(i) + " features " +
                           shape_str(per_sensor[i].shape()) + " differ from " + shape_str(s));
    }
    flat.push_back(reshape(per_sensor[i], {s[0], s[1] * s[2]}));
  }
  return stack(flat, 1);
}

template <typename T>
UmsNet<T>::UmsNet(const ModelConfig& config, std::uint64_t init_seed) : config_(config) {
  config_.validate();
  Rng init(init_seed);
  const std::size_t spl = config_.samples_per_slice();
  for (std::size_t i = 0; i < config_.sensors.size(); ++i) {
    StageConfig sc = config_.single_stage;
    sc.input_channels = config_.sensors[i].channels;
    sensor_stacks_.push_back(std::make_unique<LsrStack<T>>("sensor" + std::to_string(i), sc, spl,
                                                           config_.stack, init));
  }
  multi_stack_ = std::make_unique<LsrStack<T>>("fusion", config_.multi_stage, config_.fused_length(),
                                               config_.stack, init);
  projection_ = std::make_unique<Linear<T>>("fusion.proj", config_.multi_stage.widths[3], config_.model_dim, init);
  embedding_ = std::make_unique<PositionAndClass<T>>("transformer.embed", config_.num_slices,
                                                     config_.model_dim, init);
  const AttentionSpec attn{config_.model_dim, config_.num_heads, config_.dropout};
  for (std::size_t l = 0; l < config_.transformer_depth; ++l) {
    encoder_.push_back(std::make_unique<TransformerEncoderLayer<T>>(
        "transformer.layer" + std::to_string(l), attn, config_.mlp_ratio, config_.dropout, init));
  }
  head_ = std::make_unique<Linear<T>>("head", config_.model_dim, config_.num_classes, init);

  std::set<std::string> names;
  for (Parameter<T>* p : parameters()) {
    if (!names.insert(p->name).second) throw ConfigError("duplicate parameter name " + p->name);
  }
}

template <typename T>
LsrStack<T>& UmsNet<T>::sensor_stack(std::size_t i) {
  if (i >= sensor_stacks_.size()) {
    throw ConfigError("unknown sensor index " + std::to_string(i) + " (model has " +
                      std::to_string(sensor_stacks_.size()) + " sensors)");
  }
  return *sensor_stacks_[i];
}

template <typename T>
Var<T> UmsNet<T>::single_sensor_features(const Var<T>& slices, std::size_t sensor_index, Context<T>& ctx) {
  LsrStack<T>& stack = sensor_stack(sensor_index);
  const SensorSpec& spec = config_.sensors[sensor_index];
  const Shape& s = slices.shape();
  if (s.size() != 3 || s[1] != spec.channels || s[2] != spec.samples_per_slice) {
    throw DimensionError("sensor '" + spec.name + "': expected (rows, " + std::to_string(spec.channels) +
                         ", " + std::to_string(spec.samples_per_slice) + "), got " + shape_str(s));
  }
  return stack.forward(slices, ctx);
}

template <typename T>
Var<T> UmsNet<T>::multi_sensor_features(const Var<T>& fused, Context<T>& ctx) {
  const Shape& s = fused.shape();
  if (s.size() != 3 || s[1] != config_.sensors.size() || s[2] != config_.fused_length()) {
    throw DimensionError("fused features: expected (rows, " + std::to_string(config_.sensors.size()) + ", " +
                         std::to_string(config_.fused_length()) + "), got " + shape_str(s));
  }
  Var<T> h = multi_stack_->forward(fused, ctx);
  return projection_->forward(mean_last(h), ctx);
}

template <typename T>
Var<T> UmsNet<T>::classify_sequence(const Var<T>& slice_embeddings, Context<T>& ctx) {
  const Shape& s = slice_embeddings.shape();
  if (s.size() != 3 || s[1] != config_.num_slices || s[2] != config_.model_dim) {
    throw DimensionError("slice embeddings: expected (batch, " + std::to_string(config_.num_slices) + ", " +
                         std::to_string(config_.model_dim) + "), got " + shape_str(s));
  }
  Var<T> h = embedding_->forward(slice_embeddings, ctx);
  for (auto& layer : encoder_) h = layer->forward(h, ctx);
  Var<T> cls = reshape(slice(h, 1, 0, 1), {s[0], config_.model_dim});
  return head_->forward(cls, ctx);
}

template <typename T>
void UmsNet<T>::check_input(const ModelInput<T>& input) const {
  if (input.sensors.size() != config_.sensors.size()) {
    throw DimensionError("input has " + std::to_string(input.sensors.size()) + " sensors, model expects " +
                         std::to_string(config_.sensors.size()));
  }
  for (std::size_t i = 0; i < config_.sensors.size(); ++i) {
    const SensorSpec& spec = config_.sensors[i];
    const Shape want{input.batch * config_.num_slices, spec.channels, spec.samples_per_slice};
    if (input.sensors[i].shape() != want) {
      throw DimensionError("sensor '" + spec.name + "': input shape " + shape_str(input.sensors[i].shape()) +
                           ", expected " + shape_str(want));
    }
  }
}

template <typename T>
Var<T> UmsNet<T>::forward(const ModelInput<T>& input, Context<T>& ctx) {
  check_input(input);
  std::vector<Var<T>> features;
  for (std::size_t i = 0; i < input.sensors.size(); ++i) {
    features.push_back(single_sensor_features(ctx.tape.constant(input.sensors[i]), i, ctx));
  }
  Var<T> embeddings = multi_sensor_features(fuse_sensors(features), ctx);
  return classify_sequence(reshape(embeddings, {input.batch, config_.num_slices, config_.model_dim}), ctx);
}

template <typename T>
ParamList<T> UmsNet<T>::parameters() {
  ParamList<T> out;
  for (auto& s : sensor_stacks_) s->collect(out);
  multi_stack_->collect(out);
  projection_->collect(out);
  embedding_->collect(out);
  for (auto& layer : encoder_) layer->collect(out);
  head_->collect(out);
  return out;
}

template <typename T>
ParamList<T> UmsNet<T>::trainable_parameters() {
  ParamList<T> out;
  for (Parameter<T>* p : parameters()) {
    if (p->trainable) out.push_back(p);
  }
  return out;
}

template <typename T>
void UmsNet<T>::zero_grad() {
  for (Parameter<T>* p : parameters()) p->zero_grad();
}

template <typename T>
CostTrace UmsNet<T>::trace(std::size_t batch) const {
  CostTrace trace;
  const std::size_t rows = batch * config_.num_slices;
  Shape sensor_out;
  for (std::size_t i = 0; i < sensor_stacks_.size(); ++i) {
    const SensorSpec& spec = config_.sensors[i];
    sensor_out = sensor_stacks_[i]->trace({rows, spec.channels, spec.samples_per_slice}, trace);
  }
  const Shape fused{rows, config_.sensors.size(), sensor_out[1] * sensor_out[2]};
  const Shape multi_out = multi_stack_->trace(fused, trace);
  projection_->trace({rows, multi_out[1]}, trace);
  Shape seq = embedding_->trace({batch, config_.num_slices, config_.model_dim}, trace);
  for (const auto& layer : encoder_) seq = layer->trace(seq, trace);
  head_->trace({batch, config_.model_dim}, trace);
  return trace;
}

template Var<float> fuse_sensors(const std::vector<Var<float>>&);
template Var<double> fuse_sensors(const std::vector<Var<double>>&);
template class UmsNet<float>;
template class UmsNet<double>;

}  // namespace umsnet
