#pragma once

#include <cstddef>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "umsnet/data/dataset.hpp"
#include "umsnet/model/config.hpp"
#include "umsnet/training/training.hpp"

namespace umsnet::cli {

// Bad flag value or combination.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum ExitCode : int { kOk = 0, kFailure = 1, kUsage = 2, kConfig = 3, kIntegrity = 4 };

inline constexpr int kRunConfigSchemaVersion = 1;

// Window lengths the train/eval/loocv commands accept (K = 6, 12, 24).
inline constexpr double kWindows[] = {1.5, 3.0, 6.0};
// UsageError unless `seconds` is one of kWindows.
void check_window(double seconds);

// Settings shared by train and loocv; flags override the file.
struct RunConfig {
  std::string data;
  std::string out;
  std::string variant = "A";
  double window_seconds = 6.0;
  std::string holdout_user;
  // Overrides applied on top of the variant defaults; see build_model_config.
  nlohmann::json model = nlohmann::json::object();
  TrainConfig train;
  bool seed_set = false;  // train.seed came from the file
};

// ConfigError on a missing or unsupported schema_version, unknown keys at
// any level, or values of the wrong type.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);
// Fully resolved document, including schema_version.
nlohmann::json run_config_json(const RunConfig& rc);

// Variant depths and default widths for the data geometry, then `overrides`:
// single_widths, multi_widths, model_dim, num_heads, mlp_ratio, dropout, norm,
// layer_scale_init, min_survival, eval_residual, dense_depthwise, and for the
// custom variant single_depths, multi_depths, transformer_depth.
ModelConfig build_model_config(const std::string& variant, const std::vector<SensorSpec>& sensors,
                               std::size_t num_classes, std::size_t num_slices, const nlohmann::json& overrides);

// Windows the dataset at `window_seconds`, from its recordings when present,
// otherwise from stored samples of the same window length (ConfigError if
// they differ).
SampleSet load_samples(const std::string& path, double window_seconds);

// Entry point: args excludes the program name. Returns an ExitCode.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace umsnet::cli
