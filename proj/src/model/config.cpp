#include "umsnet/model/config.hpp"

#include <algorithm>
#include <cctype>

namespace umsnet {

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

std::string norm_name(NormKind k) { return k == NormKind::kBatch ? "batch" : "layer"; }

NormKind parse_norm(const std::string& s) {
  if (s == "batch") return NormKind::kBatch;
  if (s == "layer") return NormKind::kLayer;
  throw ConfigError("unknown norm kind '" + s + "' (expected batch|layer)");
}

EvalResidual parse_eval_residual(const std::string& s) {
  if (s == "keep") return EvalResidual::kKeep;
  if (s == "scale") return EvalResidual::kScaleBySurvival;
  throw ConfigError("unknown eval_residual '" + s + "' (expected keep|scale)");
}

}  // namespace

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::kA: return "A";
    case Variant::kB: return "B";
    case Variant::kC: return "C";
    case Variant::kCustom: return "custom";
  }
  return "custom";
}

Variant parse_variant(const std::string& name) {
  const std::string n = lower(name);
  if (n == "a") return Variant::kA;
  if (n == "b") return Variant::kB;
  if (n == "c") return Variant::kC;
  if (n == "custom") return Variant::kCustom;
  throw ConfigError("unknown variant '" + name + "' (expected A, B, C or custom)");
}

VariantDepths variant_depths(Variant v) {
  switch (v) {
    case Variant::kA: return {{2, 2, 2, 2}, {2, 2, 2, 2}, 3};
    case Variant::kB: return {{2, 2, 6, 2}, {2, 2, 6, 2}, 6};
    case Variant::kC: return {{2, 2, 18, 2}, {2, 2, 18, 2}, 6};
    case Variant::kCustom: break;
  }
  throw ConfigError("custom variant has no fixed depths");
}

void ModelConfig::validate() const {
  if (sensors.empty()) throw ConfigError("model config: at least one sensor is required");
  for (const auto& s : sensors) {
    if (s.channels == 0) throw ConfigError("sensor '" + s.name + "': channels must be >= 1");
    if (s.samples_per_slice < 8 || s.samples_per_slice % 8 != 0) {
      throw ConfigError("sensor '" + s.name + "': samples_per_slice " +
                        std::to_string(s.samples_per_slice) + " must be a multiple of 8 (three downsamples)");
    }
    if (s.samples_per_slice != sensors.front().samples_per_slice) {
      throw ConfigError("sensor '" + s.name + "': all sensors must share samples_per_slice");
    }
  }
  for (std::size_t i = 0; i < sensors.size(); ++i) {
    for (std::size_t j = i + 1; j < sensors.size(); ++j) {
      if (sensors[i].name == sensors[j].name) throw ConfigError("duplicate sensor name '" + sensors[i].name + "'");
    }
  }
  single_stage.validate();
  multi_stage.validate();
  if (multi_stage.input_channels != sensors.size()) {
    throw ConfigError("model config: multi-sensor stack input_channels " +
                      std::to_string(multi_stage.input_channels) + " != sensor count " +
                      std::to_string(sensors.size()));
  }
  if (fused_length() < 8 || fused_length() % 8 != 0) {
    throw ConfigError("model config: fused feature length " + std::to_string(fused_length()) +
                      " must be a positive multiple of 8");
  }
  if (transformer_depth == 0) throw ConfigError("model config: transformer_depth must be positive");
  if (model_dim == 0 || num_heads == 0 || model_dim % num_heads != 0) {
    throw ConfigError("model config: model_dim " + std::to_string(model_dim) +
                      " not divisible by num_heads " + std::to_string(num_heads));
  }
  if (mlp_ratio == 0) throw ConfigError("model config: mlp_ratio must be positive");
  if (num_slices == 0) throw ConfigError("model config: K must be >= 1");
  if (num_classes < 2) throw ConfigError("model config: need at least two classes");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("model config: dropout must be in [0, 1)");
  if (variant != Variant::kCustom) {
    const VariantDepths d = variant_depths(variant);
    if (single_stage.depths != d.single || multi_stage.depths != d.multi || transformer_depth != d.encoder) {
      throw ConfigError("model config: depths do not match variant " + variant_name(variant));
    }
  }
}

DatasetProfile hhar_profile(std::size_t samples_per_slice) {
  return {"HHAR",
          {{"accelerometer", 3, samples_per_slice}, {"gyroscope", 3, samples_per_slice}},
          6};
}

DatasetProfile mhealth_profile(std::size_t samples_per_slice) {
  return {"MHEALTH",
          {{"accelerometer", 3, samples_per_slice},
           {"gyroscope", 3, samples_per_slice},
           {"magnetometer", 3, samples_per_slice},
           {"ecg", 2, samples_per_slice}},
          7};
}

DatasetProfile profile_by_name(const std::string& name, std::size_t samples_per_slice) {
  const std::string n = lower(name);
  if (n == "hhar") return hhar_profile(samples_per_slice);
  if (n == "mhealth") return mhealth_profile(samples_per_slice);
  throw ConfigError("unknown dataset profile '" + name + "' (expected HHAR or MHEALTH)");
}

ModelConfig make_model_config(Variant variant, const DatasetProfile& profile, std::size_t num_slices) {
  const VariantDepths d = variant_depths(variant);
  ModelConfig c;
  c.sensors = profile.sensors;
  c.single_stage.depths = d.single;
  c.single_stage.widths = kDefaultSingleWidths;
  c.single_stage.input_channels = profile.sensors.empty() ? 1 : profile.sensors.front().channels;
  c.multi_stage.depths = d.multi;
  c.multi_stage.widths = kDefaultMultiWidths;
  c.multi_stage.input_channels = profile.sensors.size();
  c.transformer_depth = d.encoder;
  c.num_slices = num_slices;
  c.num_classes = profile.num_classes;
  c.variant = variant;
  c.validate();
  return c;
}

void to_json(nlohmann::json& j, const SensorSpec& s) {
  j = {{"name", s.name}, {"channels", s.channels}, {"samples_per_slice", s.samples_per_slice}};
}

void from_json(const nlohmann::json& j, SensorSpec& s) {
  j.at("name").get_to(s.name);
  j.at("channels").get_to(s.channels);
  j.at("samples_per_slice").get_to(s.samples_per_slice);
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{
      {"sensors", c.sensors},
      {"single_stage", {{"depths", c.single_stage.depths}, {"widths", c.single_stage.widths}}},
      {"multi_stage", {{"depths", c.multi_stage.depths}, {"widths", c.multi_stage.widths}}},
      {"transformer_depth", c.transformer_depth},
      {"model_dim", c.model_dim},
      {"num_heads", c.num_heads},
      {"mlp_ratio", c.mlp_ratio},
      {"dropout", c.dropout},
      {"num_slices", c.num_slices},
      {"num_classes", c.num_classes},
      {"variant", variant_name(c.variant)},
      {"norm", norm_name(c.stack.norm)},
      {"layer_scale_init", c.stack.layer_scale_init},
      {"min_survival", c.stack.min_survival},
      {"eval_residual", c.stack.eval_residual == EvalResidual::kKeep ? "keep" : "scale"},
      {"dense_depthwise", c.stack.dense_depthwise},
  };
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("sensors").get_to(c.sensors);
  j.at("single_stage").at("depths").get_to(c.single_stage.depths);
  j.at("single_stage").at("widths").get_to(c.single_stage.widths);
  j.at("multi_stage").at("depths").get_to(c.multi_stage.depths);
  j.at("multi_stage").at("widths").get_to(c.multi_stage.widths);
  c.single_stage.input_channels = c.sensors.empty() ? 1 : c.sensors.front().channels;
  c.multi_stage.input_channels = c.sensors.size();
  j.at("transformer_depth").get_to(c.transformer_depth);
  j.at("model_dim").get_to(c.model_dim);
  j.at("num_heads").get_to(c.num_heads);
  j.at("mlp_ratio").get_to(c.mlp_ratio);
  j.at("dropout").get_to(c.dropout);
  j.at("num_slices").get_to(c.num_slices);
  j.at("num_classes").get_to(c.num_classes);
  c.variant = parse_variant(j.at("variant").get<std::string>());
  c.stack.norm = parse_norm(j.at("norm").get<std::string>());
  j.at("layer_scale_init").get_to(c.stack.layer_scale_init);
  j.at("min_survival").get_to(c.stack.min_survival);
  c.stack.eval_residual = parse_eval_residual(j.at("eval_residual").get<std::string>());
  j.at("dense_depthwise").get_to(c.stack.dense_depthwise);
}

}  // namespace umsnet
