#include "umsnet/evaluation/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

#include "umsnet/errors.hpp"
#include "umsnet/model/batch.hpp"

namespace umsnet {

void ConfusionMatrix::add(int truth, int predicted) {
  if (truth < 0 || predicted < 0 || static_cast<std::size_t>(truth) >= n_ || static_cast<std::size_t>(predicted) >= n_) {
    throw ContractError("confusion matrix: class out of range [0, " + std::to_string(n_) + "): truth " +
                        std::to_string(truth) + ", predicted " + std::to_string(predicted));
  }
  ++counts_[static_cast<std::size_t>(truth) * n_ + static_cast<std::size_t>(predicted)];
}

std::uint64_t ConfusionMatrix::total() const { return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0}); }

std::uint64_t ConfusionMatrix::trace() const {
  std::uint64_t t = 0;
  for (std::size_t i = 0; i < n_; ++i) t += at(i, i);
  return t;
}

ConfusionMatrix confusion_matrix(const std::vector<int>& predictions, const std::vector<int>& labels,
                                 std::size_t num_classes) {
  if (predictions.size() != labels.size()) {
    throw ContractError("confusion matrix: " + std::to_string(predictions.size()) + " predictions vs " +
                        std::to_string(labels.size()) + " labels");
  }
  ConfusionMatrix cm(num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) cm.add(labels[i], predictions[i]);
  return cm;
}

double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels) {
  if (predictions.size() != labels.size()) {
    throw ContractError("accuracy: " + std::to_string(predictions.size()) + " predictions vs " +
                        std::to_string(labels.size()) + " labels");
  }
  if (labels.empty()) throw ContractError("accuracy: empty input");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predictions[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

MacroF1 macro_f1(const ConfusionMatrix& cm) {
  const std::size_t n = cm.num_classes();
  MacroF1 out;
  out.per_class.assign(n, 0.0);
  for (std::size_t c = 0; c < n; ++c) {
    std::uint64_t predicted = 0, actual = 0;
    for (std::size_t j = 0; j < n; ++j) {
      predicted += cm.at(j, c);
      actual += cm.at(c, j);
    }
    const auto tp = static_cast<double>(cm.at(c, c));
    if (predicted == 0 || actual == 0 || tp == 0.0) continue;
    const double precision = tp / static_cast<double>(predicted);
    const double recall = tp / static_cast<double>(actual);
    out.per_class[c] = 2.0 * precision * recall / (precision + recall);
  }
  out.macro = n ? std::accumulate(out.per_class.begin(), out.per_class.end(), 0.0) / static_cast<double>(n) : 0.0;
  return out;
}

MacroF1 macro_f1(const std::vector<int>& predictions, const std::vector<int>& labels, std::size_t num_classes) {
  return macro_f1(confusion_matrix(predictions, labels, num_classes));
}

template <typename T>
ParamCount count_params(UmsNet<T>& model) {
  ParamCount pc;
  for (Parameter<T>* p : model.trainable_parameters()) pc.total += static_cast<std::int64_t>(p->value.size());
  pc.rows = model.trace(1).rows();
  return pc;
}

template <typename T>
std::int64_t count_mult_adds(const UmsNet<T>& model, std::size_t batch) {
  return model.trace(batch).total_mult_adds();
}

TimingResult time_callable(const std::function<void()>& fn, std::size_t repeats, std::size_t warmup) {
  if (repeats < 5) throw ContractError("time_inference: repeats must be >= 5, got " + std::to_string(repeats));
  for (std::size_t i = 0; i < warmup; ++i) fn();
  std::vector<double> ms;
  ms.reserve(repeats);
  for (std::size_t i = 0; i < repeats; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  std::sort(ms.begin(), ms.end());
  const std::size_t mid = ms.size() / 2;
  TimingResult r;
  r.median_ms = ms.size() % 2 ? ms[mid] : 0.5 * (ms[mid - 1] + ms[mid]);
  r.repeats = repeats;
  r.warmup = warmup;
  r.hardware = hardware_descriptor();
  return r;
}

std::string hardware_descriptor() {
  std::string cpu = "unknown cpu";
  std::ifstream in("/proc/cpuinfo");
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("model name", 0) == 0) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) cpu = line.substr(line.find_first_not_of(' ', colon + 1));
      break;
    }
  }
  return cpu + ", " + std::to_string(std::max(1u, std::thread::hardware_concurrency())) +
         " hardware threads, single-threaded kernels";
}

template <typename T>
TimingResult time_inference(UmsNet<T>& model, std::size_t repeats, std::size_t warmup) {
  const ModelConfig& cfg = model.config();
  ModelInput<T> input;
  input.batch = 1;
  Rng rng(0x71AE);
  for (const auto& s : cfg.sensors) {
    Tensor<T> t({cfg.num_slices, s.channels, s.samples_per_slice}, T(0));
    for (auto& v : t.data()) v = static_cast<T>(rng.normal());
    input.sensors.push_back(std::move(t));
  }
  return time_callable(
      [&] {
        Tape<T> tape(false);
        Context<T> ctx{tape, Mode::kEval, nullptr};
        (void)model.forward(input, ctx);
      },
      repeats, warmup);
}

template <typename T>
std::vector<int> predict(UmsNet<T>& model, const std::vector<SlicedSample>& samples, std::size_t batch_size) {
  const ModelConfig& cfg = model.config();
  check_geometry(cfg, samples);
  std::vector<int> out;
  out.reserve(samples.size());
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(samples.size(), start + batch_size); ++i) idx.push_back(i);
    Tape<T> tape(false);
    Context<T> ctx{tape, Mode::kEval, nullptr};
    const Var<T> logits = model.forward(make_batch<T>(cfg, samples, idx), ctx);
    const auto v = logits.value().data();
    const std::size_t c = cfg.num_classes;
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const auto row = v.subspan(b * c, c);
      out.push_back(static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()));
    }
  }
  return out;
}

void to_json(nlohmann::json& j, const MetricsReport& r) {
  j = nlohmann::json{{"accuracy", r.accuracy},
                     {"macro_f1", r.macro_f1},
                     {"per_class_f1", r.per_class_f1},
                     {"params", r.params},
                     {"mult_adds", r.mult_adds},
                     {"time_ms_median", r.time_ms_median},
                     {"hardware", r.hardware},
                     {"config_fingerprint", r.config_fingerprint},
                     {"num_samples", r.num_samples},
                     {"confusion", r.confusion}};
}

void from_json(const nlohmann::json& j, MetricsReport& r) {
  j.at("accuracy").get_to(r.accuracy);
  j.at("macro_f1").get_to(r.macro_f1);
  j.at("per_class_f1").get_to(r.per_class_f1);
  j.at("params").get_to(r.params);
  j.at("mult_adds").get_to(r.mult_adds);
  j.at("time_ms_median").get_to(r.time_ms_median);
  j.at("hardware").get_to(r.hardware);
  j.at("config_fingerprint").get_to(r.config_fingerprint);
  j.at("num_samples").get_to(r.num_samples);
  j.at("confusion").get_to(r.confusion);
}

std::string config_fingerprint(const ModelConfig& config) {
  // FNV-1a, 64 bit.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : nlohmann::json(config).dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

template <typename T>
MetricsReport evaluate(UmsNet<T>& model, const std::vector<SlicedSample>& samples, std::size_t timing_repeats) {
  if (samples.empty()) throw ContractError("evaluate: no samples");
  const ModelConfig& cfg = model.config();
  const std::vector<int> preds = predict(model, samples);
  std::vector<int> labels;
  labels.reserve(samples.size());
  for (const auto& s : samples) labels.push_back(s.label);
  const ConfusionMatrix cm = confusion_matrix(preds, labels, cfg.num_classes);
  const MacroF1 f1 = macro_f1(cm);
  MetricsReport r;
  r.accuracy = accuracy(preds, labels);
  r.macro_f1 = f1.macro;
  r.per_class_f1 = f1.per_class;
  r.params = count_params(model).total;
  r.mult_adds = count_mult_adds(model, 1);
  r.hardware = hardware_descriptor();
  if (timing_repeats > 0) r.time_ms_median = time_inference(model, timing_repeats).median_ms;
  r.config_fingerprint = config_fingerprint(cfg);
  r.num_samples = samples.size();
  r.confusion.assign(cfg.num_classes, std::vector<std::uint64_t>(cfg.num_classes));
  for (std::size_t a = 0; a < cfg.num_classes; ++a)
    for (std::size_t b = 0; b < cfg.num_classes; ++b) r.confusion[a][b] = cm.at(a, b);
  return r;
}

std::string breakdown_csv(const std::vector<CostRow>& rows) {
  std::ostringstream os;
  os << "layer,kind,params,mult_adds,weights,dense_weights\n";
  std::int64_t params = 0, macs = 0;
  for (const auto& r : rows) {
    os << r.layer << ',' << r.kind << ',' << r.params << ',' << r.mult_adds << ',' << r.weights << ','
       << r.dense_weights << '\n';
    params += r.params;
    macs += r.mult_adds;
  }
  os << "total,," << params << ',' << macs << ",,\n";
  return os.str();
}

#define UMSNET_INSTANTIATE_METRICS(T)                                                            \
  template ParamCount count_params(UmsNet<T>&);                                                  \
  template std::int64_t count_mult_adds(const UmsNet<T>&, std::size_t);                          \
  template TimingResult time_inference(UmsNet<T>&, std::size_t, std::size_t);                    \
  template std::vector<int> predict(UmsNet<T>&, const std::vector<SlicedSample>&, std::size_t); \
  template MetricsReport evaluate(UmsNet<T>&, const std::vector<SlicedSample>&, std::size_t);

UMSNET_INSTANTIATE_METRICS(float)
UMSNET_INSTANTIATE_METRICS(double)

}  // namespace umsnet
