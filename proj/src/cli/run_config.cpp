#include <cmath>
#include <fstream>
#include <set>

#include "umsnet/cli/cli.hpp"
#include "umsnet/data/container.hpp"
#include "umsnet/errors.hpp"

namespace umsnet::cli {

namespace {

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
  for (const auto& item : j.items()) {
    if (!allowed.count(item.key())) {
      std::string list;
      for (const auto& k : allowed) list += (list.empty() ? "" : ", ") + k;
      throw ConfigError(where + ": unknown key '" + item.key() + "' (allowed: " + list + ")");
    }
  }
}

const std::set<std::string> kTopKeys{"schema_version", "data", "out", "variant", "window_seconds",
                                     "holdout_user", "model", "train"};
const std::set<std::string> kModelKeys{"single_widths", "multi_widths",     "single_depths", "multi_depths",
                                       "transformer_depth", "model_dim",   "num_heads",     "mlp_ratio",
                                       "dropout",         "norm",            "layer_scale_init", "min_survival",
                                       "eval_residual",   "dense_depthwise"};

}  // namespace

void check_window(double seconds) {
  for (double w : kWindows) {
    if (std::abs(w - seconds) < 1e-9) return;
  }
  throw UsageError("window " + std::to_string(seconds) + " s not supported (expected 1.5, 3 or 6)");
}

RunConfig parse_run_config(const nlohmann::json& j) {
  reject_unknown(j, kTopKeys, "run config");
  if (!j.contains("schema_version")) throw ConfigError("run config: missing schema_version");
  if (!j.at("schema_version").is_number_integer() || j.at("schema_version").get<int>() != kRunConfigSchemaVersion) {
    throw ConfigError("run config: unsupported schema_version " + j.at("schema_version").dump() + " (expected " +
                      std::to_string(kRunConfigSchemaVersion) + ")");
  }
  RunConfig rc;
  try {
    if (j.contains("data")) j.at("data").get_to(rc.data);
    if (j.contains("out")) j.at("out").get_to(rc.out);
    if (j.contains("variant")) j.at("variant").get_to(rc.variant);
    if (j.contains("window_seconds")) j.at("window_seconds").get_to(rc.window_seconds);
    if (j.contains("holdout_user")) j.at("holdout_user").get_to(rc.holdout_user);
    if (j.contains("model")) {
      reject_unknown(j.at("model"), kModelKeys, "run config 'model'");
      rc.model = j.at("model");
    }
    if (j.contains("train")) {
      nlohmann::json merged = rc.train;
      std::set<std::string> train_keys;
      for (const auto& item : merged.items()) train_keys.insert(item.key());
      reject_unknown(j.at("train"), train_keys, "run config 'train'");
      merged.update(j.at("train"));
      rc.train = merged.get<TrainConfig>();
      rc.seed_set = j.at("train").contains("seed");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
  parse_variant(rc.variant);
  rc.train.validate();
  return rc;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open run config '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("run config '" + path + "': " + e.what());
  }
  return parse_run_config(j);
}

nlohmann::json run_config_json(const RunConfig& rc) {
  return {{"schema_version", kRunConfigSchemaVersion},
          {"data", rc.data},
          {"out", rc.out},
          {"variant", rc.variant},
          {"window_seconds", rc.window_seconds},
          {"holdout_user", rc.holdout_user},
          {"model", rc.model},
          {"train", rc.train}};
}

ModelConfig build_model_config(const std::string& variant_name_in, const std::vector<SensorSpec>& sensors,
                               std::size_t num_classes, std::size_t num_slices, const nlohmann::json& overrides) {
  reject_unknown(overrides, kModelKeys, "model overrides");
  const Variant variant = parse_variant(variant_name_in);
  const bool custom = variant == Variant::kCustom;
  DatasetProfile profile{"data", sensors, num_classes};
  ModelConfig base = make_model_config(custom ? Variant::kA : variant, profile, num_slices);
  nlohmann::json j = base;
  j["variant"] = variant_name(variant);
  const std::pair<const char*, nlohmann::json::json_pointer> paths[] = {
      {"single_widths", nlohmann::json::json_pointer("/single_stage/widths")},
      {"multi_widths", nlohmann::json::json_pointer("/multi_stage/widths")},
      {"single_depths", nlohmann::json::json_pointer("/single_stage/depths")},
      {"multi_depths", nlohmann::json::json_pointer("/multi_stage/depths")},
  };
  for (const auto& item : overrides.items()) {
    const std::string& key = item.key();
    const bool depth_key = key == "single_depths" || key == "multi_depths" || key == "transformer_depth";
    if (depth_key && !custom) {
      throw ConfigError("model override '" + key + "' is fixed by variant " + variant_name(variant) +
                        "; use variant custom");
    }
    bool mapped = false;
    for (const auto& [name, ptr] : paths) {
      if (key == name) {
        j[ptr] = item.value();
        mapped = true;
      }
    }
    if (!mapped) j[key] = item.value();
  }
  ModelConfig cfg;
  try {
    cfg = j.get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model overrides: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

SampleSet load_samples(const std::string& path, double window_seconds) {
  DatasetFile file = load_dataset(path);
  if (!file.recordings.empty()) {
    WindowOptions wo;
    wo.window_seconds = window_seconds;
    wo.slice_seconds = file.slice_seconds;
    wo.target_hz = file.target_hz;
    return build_sample_set(file.recordings, wo);
  }
  if (file.samples && std::abs(file.samples->window_seconds - window_seconds) < 1e-9) return *file.samples;
  throw ConfigError("dataset '" + path + "' holds no recordings and no samples cut with a " +
                    std::to_string(window_seconds) + " s window");
}

}  // namespace umsnet::cli
