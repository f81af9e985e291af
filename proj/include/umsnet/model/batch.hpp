#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "umsnet/data/dataset.hpp"
#include "umsnet/errors.hpp"
#include "umsnet/model/umsnet.hpp"

namespace umsnet {

// ConfigError unless every sample carries the sensors, K and slice length
// the model expects.
inline void check_geometry(const ModelConfig& config, const std::vector<SlicedSample>& samples) {
  for (const auto& s : samples) {
    if (s.sensors.size() != config.sensors.size()) {
      throw ConfigError("sample of user '" + s.user_id + "' has " + std::to_string(s.sensors.size()) +
                        " sensors, model expects " + std::to_string(config.sensors.size()));
    }
    for (std::size_t i = 0; i < config.sensors.size(); ++i) {
      const SensorSpec& spec = config.sensors[i];
      const std::size_t want = config.num_slices * spec.channels * spec.samples_per_slice;
      if (s.sensors[i].size() != want) {
        throw ConfigError("sensor '" + spec.name + "': sample of user '" + s.user_id + "' holds " +
                          std::to_string(s.sensors[i].size()) + " values, model expects K=" +
                          std::to_string(config.num_slices) + " x " + std::to_string(spec.channels) + " x " +
                          std::to_string(spec.samples_per_slice) + " = " + std::to_string(want));
      }
    }
    if (s.label < 0 || static_cast<std::size_t>(s.label) >= config.num_classes) {
      throw ConfigError("sample label " + std::to_string(s.label) + " outside the model's " +
                        std::to_string(config.num_classes) + " classes");
    }
  }
}

// Packs samples[indices[b]] into model input. A sample's [slice][channel][sample]
// block is exactly rows b*K .. b*K+K-1 of the (batch*K, channels, S) tensor.
template <typename T>
ModelInput<T> make_batch(const ModelConfig& config, const std::vector<SlicedSample>& samples,
                         const std::vector<std::size_t>& indices, std::vector<int>* labels = nullptr) {
  ModelInput<T> in;
  in.batch = indices.size();
  if (labels) labels->clear();
  for (std::size_t i = 0; i < config.sensors.size(); ++i) {
    const SensorSpec& spec = config.sensors[i];
    const std::size_t per = config.num_slices * spec.channels * spec.samples_per_slice;
    std::vector<T> values;
    values.reserve(per * indices.size());
    for (std::size_t idx : indices) {
      const auto& block = samples.at(idx).sensors.at(i);
      if (block.size() != per) check_geometry(config, {samples[idx]});
      values.insert(values.end(), block.begin(), block.end());
    }
    in.sensors.emplace_back(Shape{indices.size() * config.num_slices, spec.channels, spec.samples_per_slice},
                            std::move(values));
  }
  if (labels) {
    for (std::size_t idx : indices) labels->push_back(samples[idx].label);
  }
  return in;
}

}  // namespace umsnet
