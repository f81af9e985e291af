#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "umsnet/layers/modules.hpp"
#include "umsnet/lsr/lsr.hpp"
#include "umsnet/model/config.hpp"

namespace umsnet {

// One batch of windows: sensors[i] is (batch * K, channels_i, samples_per_slice),
// slice-major within each window (row w*K + k is slice k of window w).
template <typename T>
struct ModelInput {
  std::size_t batch = 0;
  std::vector<Tensor<T>> sensors;
};

// Per-sensor feature maps SF_i, each (rows, C_s, L), flattened and stacked as
// N channels: (rows, N, C_s * L).
template <typename T>
Var<T> fuse_sensors(const std::vector<Var<T>>& per_sensor);

// The three-stage network:
//   1. one LSR stack per sensor, shared across slices
//   2. fusion + multi-sensor LSR stack, global average pool, projection to model_dim
//   3. class token + position embedding, pre-norm encoder, linear head on token 0
template <typename T>
class UmsNet {
 public:
  // Parameters are initialised from an Rng seeded with `init_seed`.
  UmsNet(const ModelConfig& config, std::uint64_t init_seed);
  UmsNet(const UmsNet&) = delete;
  UmsNet& operator=(const UmsNet&) = delete;

  const ModelConfig& config() const { return config_; }

  Var<T> single_sensor_features(const Var<T>& slices, std::size_t sensor_index, Context<T>& ctx);
  Var<T> multi_sensor_features(const Var<T>& fused, Context<T>& ctx);
  // slice_embeddings: (batch, K, model_dim) -> logits (batch, num_classes).
  Var<T> classify_sequence(const Var<T>& slice_embeddings, Context<T>& ctx);
  Var<T> forward(const ModelInput<T>& input, Context<T>& ctx);

  // Throws DimensionError naming the offending sensor.
  void check_input(const ModelInput<T>& input) const;

  // Every parameter and buffer, in construction order. Names are unique.
  ParamList<T> parameters();
  ParamList<T> trainable_parameters();
  void zero_grad();

  // Symbolic forward pass for `batch` windows.
  CostTrace trace(std::size_t batch = 1) const;

  LsrStack<T>& sensor_stack(std::size_t i);
  LsrStack<T>& multi_stack() { return *multi_stack_; }
  Linear<T>& projection() { return *projection_; }
  PositionAndClass<T>& embedding() { return *embedding_; }
  std::vector<std::unique_ptr<TransformerEncoderLayer<T>>>& encoder() { return encoder_; }
  Linear<T>& head() { return *head_; }

 private:
  ModelConfig config_;
  std::vector<std::unique_ptr<LsrStack<T>>> sensor_stacks_;
  std::unique_ptr<LsrStack<T>> multi_stack_;
  std::unique_ptr<Linear<T>> projection_;
  std::unique_ptr<PositionAndClass<T>> embedding_;
  std::vector<std::unique_ptr<TransformerEncoderLayer<T>>> encoder_;
  std::unique_ptr<Linear<T>> head_;
};

}  // namespace umsnet
