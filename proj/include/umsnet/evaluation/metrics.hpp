#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "umsnet/data/dataset.hpp"
#include "umsnet/layers/cost_trace.hpp"
#include "umsnet/model/umsnet.hpp"

namespace umsnet {

// Rows are true classes, columns predictions.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_classes) : n_(num_classes), counts_(num_classes * num_classes, 0) {}

  void add(int truth, int predicted);
  std::uint64_t at(std::size_t truth, std::size_t predicted) const { return counts_[truth * n_ + predicted]; }
  std::size_t num_classes() const { return n_; }
  std::uint64_t total() const;
  std::uint64_t trace() const;

 private:
  std::size_t n_;
  std::vector<std::uint64_t> counts_;
};

// ContractError on length mismatch or out-of-range classes.
ConfusionMatrix confusion_matrix(const std::vector<int>& predictions, const std::vector<int>& labels,
                                 std::size_t num_classes);

// ContractError on length mismatch or empty input.
double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels);

struct MacroF1 {
  double macro = 0.0;
  std::vector<double> per_class;
};
// A class with no predictions or no true samples scores F1 = 0.
MacroF1 macro_f1(const std::vector<int>& predictions, const std::vector<int>& labels, std::size_t num_classes);
MacroF1 macro_f1(const ConfusionMatrix& cm);

struct ParamCount {
  std::int64_t total = 0;        // trainable elements, by walking the parameter registry
  std::vector<CostRow> rows;     // per-layer breakdown; params sum to total
};

template <typename T>
ParamCount count_params(UmsNet<T>& model);

// MACs of one forward pass over `batch` windows.
template <typename T>
std::int64_t count_mult_adds(const UmsNet<T>& model, std::size_t batch = 1);

struct TimingResult {
  double median_ms = 0.0;
  std::size_t repeats = 0;
  std::size_t warmup = 0;
  std::string hardware;
};

// Median wall-clock time of `fn` over `repeats` calls after `warmup`
// uncounted calls. ContractError if repeats < 5.
TimingResult time_callable(const std::function<void()>& fn, std::size_t repeats, std::size_t warmup = 2);

// Single-window eval-mode forward passes.
template <typename T>
TimingResult time_inference(UmsNet<T>& model, std::size_t repeats, std::size_t warmup = 2);

std::string hardware_descriptor();

// Eval-mode argmax predictions, in sample order.
template <typename T>
std::vector<int> predict(UmsNet<T>& model, const std::vector<SlicedSample>& samples, std::size_t batch_size = 64);

struct MetricsReport {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::vector<double> per_class_f1;
  std::int64_t params = 0;
  std::int64_t mult_adds = 0;
  double time_ms_median = 0.0;
  std::string hardware;
  std::string config_fingerprint;
  std::size_t num_samples = 0;
  std::vector<std::vector<std::uint64_t>> confusion;
};

void to_json(nlohmann::json& j, const MetricsReport& r);
void from_json(const nlohmann::json& j, MetricsReport& r);

// Stable hex digest of the model configuration JSON.
std::string config_fingerprint(const ModelConfig& config);

// Metrics plus cost figures. `timing_repeats` = 0 skips the timing run
// (time_ms_median stays 0).
template <typename T>
MetricsReport evaluate(UmsNet<T>& model, const std::vector<SlicedSample>& samples, std::size_t timing_repeats = 0);

// "layer,kind,params,mult_adds,weights,dense_weights" rows plus a total row.
std::string breakdown_csv(const std::vector<CostRow>& rows);

}  // namespace umsnet
