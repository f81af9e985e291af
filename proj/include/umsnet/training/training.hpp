#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "umsnet/data/dataset.hpp"
#include "umsnet/model/umsnet.hpp"
#include "umsnet/numerics/rng.hpp"

namespace umsnet {

// Mean over the batch of -log softmax(logits)[label], fused with a
// log-sum-exp forward. ContractError on a label outside [0, C).
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, const std::vector<int>& labels);

enum class OptimizerKind { kAdamW, kSgd };
enum class LrSchedule { kConstant, kCosine };
enum class Precision { kF32, kF64 };

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  double weight_decay = 0.05;
  OptimizerKind optimizer = OptimizerKind::kAdamW;
  LrSchedule lr_schedule = LrSchedule::kCosine;
  std::uint64_t seed = 0;
  Precision precision = Precision::kF32;
  double momentum = 0.9;  // SGD only
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
std::string precision_name(Precision p);
Precision parse_precision(const std::string& s);

// base * 0.5 * (1 + cos(pi * step / total)) for cosine, base otherwise.
double scheduled_lr(const TrainConfig& config, std::uint64_t step, std::uint64_t total_steps);

// AdamW (decoupled weight decay) or SGD with momentum. Decay applies to
// weight matrices and kernels (rank >= 2), not to biases, norm affines or
// layer scales. Slots are keyed by parameter name.
template <typename T>
class Optimizer {
 public:
  explicit Optimizer(const TrainConfig& config) : config_(config) {}

  void step(const std::vector<Parameter<T>*>& params, double lr);

  std::uint64_t steps() const { return steps_; }
  void set_steps(std::uint64_t s) { steps_ = s; }
  // "m" / "v" for AdamW, "velocity" for SGD.
  std::map<std::string, std::map<std::string, std::vector<T>>>& slots() { return slots_; }
  const std::map<std::string, std::map<std::string, std::vector<T>>>& slots() const { return slots_; }

 private:
  TrainConfig config_;
  std::uint64_t steps_ = 0;
  std::map<std::string, std::map<std::string, std::vector<T>>> slots_;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double test_accuracy = 0.0;
  double test_macro_f1 = 0.0;
  double lr = 0.0;  // rate at the last step of the epoch

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};
void to_json(nlohmann::json& j, const EpochRecord& r);
void from_json(const nlohmann::json& j, EpochRecord& r);
// One JSON object per line, keys in a fixed order.
std::string history_line(const EpochRecord& r);

struct Blob {
  Shape shape;
  std::vector<double> values;
};

// Everything needed to rebuild a model and continue its training run.
struct Checkpoint {
  ModelConfig model;
  TrainConfig train;
  std::size_t epoch = 0;            // completed epochs
  std::uint64_t global_step = 0;    // optimizer steps taken
  std::uint64_t rng_seed = 0;
  std::uint64_t rng_counter = 0;
  std::uint64_t init_seed = 0;
  std::map<std::string, Blob> params;     // includes batch-norm running statistics
  std::map<std::string, Blob> optimizer;  // "<param>#<slot>"
  ChannelStats normalization;
  std::vector<std::string> activity_set;
  std::string held_out_user;
  double best_accuracy = -1.0;
  std::size_t best_epoch = 0;
  std::vector<EpochRecord> history;
};

inline constexpr char kCheckpointMagic[4] = {'U', 'M', 'S', 'N'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Blobs are float32 for f32 runs and float64 for f64 runs, in name order.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
// IntegrityError on bad magic, unsupported version or truncation.
Checkpoint load_checkpoint(const std::string& path);

template <typename T>
void store_parameters(UmsNet<T>& model, Checkpoint& ckpt);
// ConfigError if names or shapes disagree.
template <typename T>
void restore_parameters(UmsNet<T>& model, const Checkpoint& ckpt);

struct TrainOptions {
  // Stop after this many epochs in this call (0 = run to config.epochs).
  std::size_t stop_after = 0;
  // Called after every epoch with its record and a checkpoint of the state.
  std::function<void(const EpochRecord&, const Checkpoint&)> on_epoch;
  // Skip the per-epoch test pass (test metrics stay 0).
  bool skip_eval = false;
};

struct TrainResult {
  // Set when the best test accuracy so far was reached during this call.
  std::optional<Checkpoint> best;
  Checkpoint final;
  std::vector<EpochRecord> history;
};

// Leave-one-user-out training run. Channel statistics come from split.train
// only and are applied to both sides. Deterministic given (config, seed, data).
// ConfigError on a geometry mismatch before any step.
template <typename T>
TrainResult train(const ModelConfig& model_config, const DatasetSplit& split, const TrainConfig& config,
                  const TrainOptions& options = {}, const std::vector<std::string>& activity_set = {});

// Continues from `resume_from` (a checkpoint written by train()).
template <typename T>
TrainResult resume(const Checkpoint& resume_from, const DatasetSplit& split, const TrainOptions& options = {});

// Loads a checkpoint into a fresh model. The precision must match T.
template <typename T>
std::unique_ptr<UmsNet<T>> model_from_checkpoint(const Checkpoint& ckpt);

// Deterministic model seed for a run seed.
std::uint64_t init_seed_for(std::uint64_t run_seed);

}  // namespace umsnet
