#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "umsnet/lsr/lsr.hpp"

namespace umsnet {

struct SensorSpec {
  std::string name;
  std::size_t channels = 3;
  std::size_t samples_per_slice = 8;

  friend bool operator==(const SensorSpec&, const SensorSpec&) = default;
};

enum class Variant { kA, kB, kC, kCustom };

std::string variant_name(Variant v);
// Accepts "A", "B", "C" (either case) and "custom"; anything else is a ConfigError.
Variant parse_variant(const std::string& name);

// Blocks per stage of both LSR stacks and the encoder depth for a variant.
struct VariantDepths {
  std::array<std::size_t, 4> single;
  std::array<std::size_t, 4> multi;
  std::size_t encoder;
};
VariantDepths variant_depths(Variant v);

struct ModelConfig {
  std::vector<SensorSpec> sensors;
  // input_channels of single_stage is ignored: each sensor stack takes its
  // own channel count. multi_stage.input_channels is the sensor count.
  StageConfig single_stage;
  StageConfig multi_stage;
  std::size_t transformer_depth = 3;
  std::size_t model_dim = 128;
  std::size_t num_heads = 4;
  std::size_t mlp_ratio = 4;
  double dropout = 0.1;
  std::size_t num_slices = 6;  // K
  std::size_t num_classes = 6;
  Variant variant = Variant::kA;
  StackOptions stack;

  std::size_t samples_per_slice() const { return sensors.empty() ? 0 : sensors.front().samples_per_slice; }
  // Length of the fused multi-sensor feature map.
  std::size_t fused_length() const { return single_stage.widths[3] * samples_per_slice() / 8; }
  void validate() const;
};

// Sensor layout and class count of a dataset.
struct DatasetProfile {
  std::string name;
  std::vector<SensorSpec> sensors;
  std::size_t num_classes = 0;
};

DatasetProfile hhar_profile(std::size_t samples_per_slice = 8);
DatasetProfile mhealth_profile(std::size_t samples_per_slice = 8);
// "HHAR" / "MHEALTH" (case-insensitive); anything else is a ConfigError.
DatasetProfile profile_by_name(const std::string& name, std::size_t samples_per_slice = 8);

inline constexpr std::array<std::size_t, 4> kDefaultSingleWidths{32, 64, 128, 256};
inline constexpr std::array<std::size_t, 4> kDefaultMultiWidths{64, 128, 256, 512};

// Table-1 depths for `variant`, default widths, and the profile's sensors.
ModelConfig make_model_config(Variant variant, const DatasetProfile& profile, std::size_t num_slices);

void to_json(nlohmann::json& j, const SensorSpec& s);
void from_json(const nlohmann::json& j, SensorSpec& s);
void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

}  // namespace umsnet
