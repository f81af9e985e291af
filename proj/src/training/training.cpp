#include "umsnet/training/training.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "umsnet/data/container.hpp"
#include "umsnet/errors.hpp"
#include "umsnet/evaluation/metrics.hpp"
#include "umsnet/model/batch.hpp"

namespace umsnet {

template <typename T>
Var<T> cross_entropy(const Var<T>& logits, const std::vector<int>& labels) {
  const Shape& s = logits.shape();
  if (s.size() != 2) throw DimensionError("cross_entropy: logits must be (batch, classes), got " + shape_str(s));
  const std::size_t b = s[0], c = s[1];
  if (labels.size() != b) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch " + std::to_string(b));
  }
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= c) {
      throw ContractError("cross_entropy: label " + std::to_string(l) + " outside [0, " + std::to_string(c) + ")");
    }
  }
  const auto x = logits.value().data();
  Tensor<T> probs({b, c}, T(0));
  auto p = probs.data();
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    const T* row = x.data() + i * c;
    const T m = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(static_cast<double>(row[j] - m));
    const double lse = static_cast<double>(m) + std::log(z);
    total += lse - static_cast<double>(row[labels[i]]);
    for (std::size_t j = 0; j < c; ++j) p[i * c + j] = static_cast<T>(std::exp(static_cast<double>(row[j]) - lse));
  }
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(total / static_cast<double>(b)));
  return logits.tape().record(std::move(out), {logits}, [logits, labels, probs = std::move(probs), b, c](Tape<T>& t, const Tensor<T>& g) {
    auto gl = t.grad(logits).data();
    const auto pv = probs.data();
    const T scale = g.item() / static_cast<T>(b);
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t j = 0; j < c; ++j) {
        const T onehot = static_cast<std::size_t>(labels[i]) == j ? T(1) : T(0);
        gl[i * c + j] += scale * (pv[i * c + j] - onehot);
      }
    }
  });
}

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("train config: epochs must be >= 1");
  if (batch_size == 0) throw ConfigError("train config: batch_size must be >= 1");
  if (!(learning_rate >= 0.0)) throw ConfigError("train config: learning_rate must be non-negative");
  if (!(weight_decay >= 0.0)) throw ConfigError("train config: weight_decay must be non-negative");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train config: momentum must be in [0, 1)");
}

std::string precision_name(Precision p) { return p == Precision::kF32 ? "f32" : "f64"; }

Precision parse_precision(const std::string& s) {
  if (s == "f32") return Precision::kF32;
  if (s == "f64") return Precision::kF64;
  throw ConfigError("unknown precision '" + s + "' (expected f32 or f64)");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"learning_rate", c.learning_rate},
                     {"weight_decay", c.weight_decay},
                     {"optimizer", c.optimizer == OptimizerKind::kAdamW ? "adamw" : "sgd"},
                     {"lr_schedule", c.lr_schedule == LrSchedule::kCosine ? "cosine" : "constant"},
                     {"seed", c.seed},
                     {"precision", precision_name(c.precision)},
                     {"momentum", c.momentum},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"adam_eps", c.adam_eps}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  j.at("epochs").get_to(c.epochs);
  j.at("batch_size").get_to(c.batch_size);
  j.at("learning_rate").get_to(c.learning_rate);
  j.at("weight_decay").get_to(c.weight_decay);
  const auto opt = j.at("optimizer").get<std::string>();
  if (opt != "adamw" && opt != "sgd") throw ConfigError("unknown optimizer '" + opt + "' (expected adamw or sgd)");
  c.optimizer = opt == "adamw" ? OptimizerKind::kAdamW : OptimizerKind::kSgd;
  const auto sched = j.at("lr_schedule").get<std::string>();
  if (sched != "cosine" && sched != "constant") {
    throw ConfigError("unknown lr_schedule '" + sched + "' (expected cosine or constant)");
  }
  c.lr_schedule = sched == "cosine" ? LrSchedule::kCosine : LrSchedule::kConstant;
  j.at("seed").get_to(c.seed);
  c.precision = parse_precision(j.at("precision").get<std::string>());
  j.at("momentum").get_to(c.momentum);
  j.at("beta1").get_to(c.beta1);
  j.at("beta2").get_to(c.beta2);
  j.at("adam_eps").get_to(c.adam_eps);
}

double scheduled_lr(const TrainConfig& config, std::uint64_t step, std::uint64_t total_steps) {
  if (config.lr_schedule == LrSchedule::kConstant || total_steps == 0) return config.learning_rate;
  const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(total_steps));
  return config.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

template <typename T>
void Optimizer<T>::step(const std::vector<Parameter<T>*>& params, double lr) {
  ++steps_;
  const double t = static_cast<double>(steps_);
  for (Parameter<T>* p : params) {
    if (!p->trainable) continue;
    auto w = p->value.data();
    const auto g = p->grad.data();
    const double decay = p->value.dim() >= 2 ? config_.weight_decay : 0.0;
    auto& slot = slots_[p->name];
    if (config_.optimizer == OptimizerKind::kAdamW) {
      auto& m = slot["m"];
      auto& v = slot["v"];
      if (m.empty()) {
        m.assign(w.size(), T(0));
        v.assign(w.size(), T(0));
      }
      const double b1 = config_.beta1, b2 = config_.beta2;
      const double c1 = 1.0 - std::pow(b1, t), c2 = 1.0 - std::pow(b2, t);
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = g[i];
        m[i] = static_cast<T>(b1 * m[i] + (1.0 - b1) * gi);
        v[i] = static_cast<T>(b2 * v[i] + (1.0 - b2) * gi * gi);
        const double mhat = m[i] / c1, vhat = v[i] / c2;
        w[i] = static_cast<T>(w[i] - lr * (mhat / (std::sqrt(vhat) + config_.adam_eps) + decay * w[i]));
      }
    } else {
      auto& vel = slot["velocity"];
      if (vel.empty()) vel.assign(w.size(), T(0));
      for (std::size_t i = 0; i < w.size(); ++i) {
        vel[i] = static_cast<T>(config_.momentum * vel[i] + g[i]);
        w[i] = static_cast<T>(w[i] - lr * (vel[i] + decay * w[i]));
      }
    }
  }
}

void to_json(nlohmann::json& j, const EpochRecord& r) {
  j = nlohmann::json{{"epoch", r.epoch},
                     {"train_loss", r.train_loss},
                     {"test_accuracy", r.test_accuracy},
                     {"test_macro_f1", r.test_macro_f1},
                     {"lr", r.lr}};
}

void from_json(const nlohmann::json& j, EpochRecord& r) {
  j.at("epoch").get_to(r.epoch);
  j.at("train_loss").get_to(r.train_loss);
  j.at("test_accuracy").get_to(r.test_accuracy);
  j.at("test_macro_f1").get_to(r.test_macro_f1);
  j.at("lr").get_to(r.lr);
}

std::string history_line(const EpochRecord& r) {
  const nlohmann::json j = r;
  std::ostringstream os;
  os << "{\"epoch\":" << j["epoch"].dump() << ",\"train_loss\":" << j["train_loss"].dump()
     << ",\"test_accuracy\":" << j["test_accuracy"].dump() << ",\"test_macro_f1\":" << j["test_macro_f1"].dump()
     << ",\"lr\":" << j["lr"].dump() << "}";
  return os.str();
}

std::uint64_t init_seed_for(std::uint64_t run_seed) { return splitmix64_mix(run_seed ^ 0x494E4954ULL); }

// ------------------------------------------------------------ checkpoint I/O

namespace {

nlohmann::json blob_index(const std::map<std::string, Blob>& blobs) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& [name, b] : blobs) out.push_back({{"name", name}, {"shape", b.shape}});
  return out;
}

void append_blobs(std::vector<char>& payload, const std::map<std::string, Blob>& blobs, Precision p) {
  for (const auto& [name, b] : blobs) {
    if (b.values.size() != shape_numel(b.shape)) {
      throw ContractError("checkpoint blob '" + name + "' has " + std::to_string(b.values.size()) +
                          " values for shape " + shape_str(b.shape));
    }
    if (p == Precision::kF64) {
      append_le(payload, b.values.data(), b.values.size());
    } else {
      std::vector<float> f(b.values.begin(), b.values.end());
      append_le(payload, f.data(), f.size());
    }
  }
}

std::map<std::string, Blob> read_blobs(const nlohmann::json& index, PayloadReader& reader, Precision p) {
  std::map<std::string, Blob> out;
  for (const auto& e : index) {
    Blob b;
    b.shape = e.at("shape").get<Shape>();
    const std::size_t n = shape_numel(b.shape);
    b.values.resize(n);
    if (p == Precision::kF64) {
      reader.read(b.values.data(), n);
    } else {
      std::vector<float> f(n);
      reader.read(f.data(), n);
      b.values.assign(f.begin(), f.end());
    }
    out.emplace(e.at("name").get<std::string>(), std::move(b));
  }
  return out;
}

}  // namespace

void save_checkpoint(const Checkpoint& c, const std::string& path) {
  nlohmann::json meta{{"format", "UMSN"},
                      {"model_config", c.model},
                      {"train_config", c.train},
                      {"dtype", precision_name(c.train.precision)},
                      {"epoch", c.epoch},
                      {"global_step", c.global_step},
                      {"rng", {{"seed", c.rng_seed}, {"counter", c.rng_counter}}},
                      {"init_seed", c.init_seed},
                      {"normalization", {{"mean", c.normalization.mean}, {"stddev", c.normalization.stddev}}},
                      {"activity_set", c.activity_set},
                      {"held_out_user", c.held_out_user},
                      {"best_accuracy", c.best_accuracy},
                      {"best_epoch", c.best_epoch},
                      {"history", c.history},
                      {"params", blob_index(c.params)},
                      {"optimizer", blob_index(c.optimizer)}};
  std::vector<char> payload;
  append_blobs(payload, c.params, c.train.precision);
  append_blobs(payload, c.optimizer, c.train.precision);
  write_framed(path, kCheckpointMagic, kCheckpointVersion, meta, payload);
}

Checkpoint load_checkpoint(const std::string& path) {
  const FramedFile f = read_framed(path, kCheckpointMagic, "checkpoint");
  if (f.version != kCheckpointVersion) {
    throw IntegrityError("checkpoint " + path + ": unsupported version " + std::to_string(f.version) +
                         " (this build reads version " + std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint c;
  try {
    const auto& m = f.meta;
    c.model = m.at("model_config").get<ModelConfig>();
    c.train = m.at("train_config").get<TrainConfig>();
    if (m.at("dtype").get<std::string>() != precision_name(c.train.precision)) {
      throw IntegrityError("checkpoint " + path + ": dtype disagrees with train_config.precision");
    }
    const std::size_t width = c.train.precision == Precision::kF64 ? 8 : 4;
    std::size_t values = 0;
    for (const char* key : {"params", "optimizer"})
      for (const auto& e : m.at(key)) values += shape_numel(e.at("shape").get<Shape>());
    if (f.payload.size() != values * width) {
      throw IntegrityError("checkpoint " + path + ": payload is " + std::to_string(f.payload.size()) +
                           " bytes, metadata declares " + std::to_string(values * width) + " (truncated or corrupt)");
    }
    c.epoch = m.at("epoch").get<std::size_t>();
    c.global_step = m.at("global_step").get<std::uint64_t>();
    c.rng_seed = m.at("rng").at("seed").get<std::uint64_t>();
    c.rng_counter = m.at("rng").at("counter").get<std::uint64_t>();
    c.init_seed = m.at("init_seed").get<std::uint64_t>();
    c.normalization.mean = m.at("normalization").at("mean").get<std::vector<std::vector<double>>>();
    c.normalization.stddev = m.at("normalization").at("stddev").get<std::vector<std::vector<double>>>();
    c.activity_set = m.at("activity_set").get<std::vector<std::string>>();
    c.held_out_user = m.at("held_out_user").get<std::string>();
    c.best_accuracy = m.at("best_accuracy").get<double>();
    c.best_epoch = m.at("best_epoch").get<std::size_t>();
    c.history = m.at("history").get<std::vector<EpochRecord>>();
    PayloadReader reader(f.payload, "checkpoint " + path);
    c.params = read_blobs(m.at("params"), reader, c.train.precision);
    c.optimizer = read_blobs(m.at("optimizer"), reader, c.train.precision);
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError("checkpoint " + path + ": malformed metadata: " + e.what());
  } catch (const ConfigError& e) {
    throw IntegrityError("checkpoint " + path + ": " + e.what());
  }
  return c;
}

template <typename T>
void store_parameters(UmsNet<T>& model, Checkpoint& ckpt) {
  ckpt.params.clear();
  for (Parameter<T>* p : model.parameters()) {
    const auto v = p->value.data();
    ckpt.params[p->name] = Blob{p->value.shape(), std::vector<double>(v.begin(), v.end())};
  }
}

template <typename T>
void restore_parameters(UmsNet<T>& model, const Checkpoint& ckpt) {
  const auto params = model.parameters();
  if (params.size() != ckpt.params.size()) {
    throw ConfigError("checkpoint holds " + std::to_string(ckpt.params.size()) + " tensors, model has " +
                      std::to_string(params.size()));
  }
  for (Parameter<T>* p : params) {
    const auto it = ckpt.params.find(p->name);
    if (it == ckpt.params.end()) throw ConfigError("checkpoint lacks parameter '" + p->name + "'");
    if (it->second.shape != p->value.shape()) {
      throw ConfigError("checkpoint parameter '" + p->name + "' has shape " + shape_str(it->second.shape) +
                        ", model expects " + shape_str(p->value.shape()));
    }
    auto dst = p->value.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(it->second.values[i]);
  }
}

template <typename T>
std::unique_ptr<UmsNet<T>> model_from_checkpoint(const Checkpoint& ckpt) {
  const Precision want = std::is_same_v<T, double> ? Precision::kF64 : Precision::kF32;
  if (ckpt.train.precision != want) {
    throw ConfigError("checkpoint precision " + precision_name(ckpt.train.precision) + " does not match " +
                      precision_name(want));
  }
  auto model = std::make_unique<UmsNet<T>>(ckpt.model, ckpt.init_seed);
  restore_parameters(*model, ckpt);
  return model;
}

// ------------------------------------------------------------ training loop

namespace {

template <typename T>
void store_optimizer(const Optimizer<T>& opt, Checkpoint& ckpt) {
  ckpt.optimizer.clear();
  for (const auto& [name, slots] : opt.slots()) {
    for (const auto& [slot, values] : slots) {
      ckpt.optimizer[name + "#" + slot] = Blob{{values.size()}, std::vector<double>(values.begin(), values.end())};
    }
  }
}

template <typename T>
void restore_optimizer(Optimizer<T>& opt, const Checkpoint& ckpt) {
  opt.slots().clear();
  for (const auto& [key, blob] : ckpt.optimizer) {
    const auto hash = key.rfind('#');
    if (hash == std::string::npos) throw IntegrityError("optimizer slot '" + key + "' lacks a slot name");
    opt.slots()[key.substr(0, hash)][key.substr(hash + 1)] = std::vector<T>(blob.values.begin(), blob.values.end());
  }
  opt.set_steps(ckpt.global_step);
}

struct PreparedSplit {
  std::vector<SlicedSample> train, test;
};

PreparedSplit prepare(const ModelConfig& cfg, const DatasetSplit& split, const ChannelStats& stats) {
  PreparedSplit p{split.train, split.test};
  apply_channel_stats(p.train, cfg.sensors, stats);
  apply_channel_stats(p.test, cfg.sensors, stats);
  return p;
}

template <typename T>
TrainResult run_epochs(UmsNet<T>& model, Optimizer<T>& opt, Checkpoint state, const PreparedSplit& data,
                       const TrainOptions& options) {
  const TrainConfig& cfg = state.train;
  const std::size_t n = data.train.size();
  const std::size_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::uint64_t total_steps = static_cast<std::uint64_t>(steps_per_epoch) * cfg.epochs;
  Rng rng(state.rng_seed, state.rng_counter);
  TrainResult result;
  const std::size_t last =
      options.stop_after ? std::min(cfg.epochs, state.epoch + options.stop_after) : cfg.epochs;

  for (std::size_t epoch = state.epoch + 1; epoch <= last; ++epoch) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    double loss_sum = 0.0;
    double lr = 0.0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + cfg.batch_size)));
      std::vector<int> labels;
      const ModelInput<T> input = make_batch<T>(model.config(), data.train, idx, &labels);
      model.zero_grad();
      Tape<T> tape;
      Context<T> ctx{tape, Mode::kTrain, &rng};
      const Var<T> loss = cross_entropy(model.forward(input, ctx), labels);
      tape.backward(loss);
      lr = scheduled_lr(cfg, state.global_step, total_steps);
      opt.step(model.trainable_parameters(), lr);
      ++state.global_step;
      loss_sum += static_cast<double>(loss.value().item()) * static_cast<double>(idx.size());
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(n);
    rec.lr = lr;
    if (!options.skip_eval) {
      const std::vector<int> preds = predict(model, data.test);
      std::vector<int> labels;
      for (const auto& s : data.test) labels.push_back(s.label);
      rec.test_accuracy = accuracy(preds, labels);
      rec.test_macro_f1 = macro_f1(preds, labels, model.config().num_classes).macro;
    }
    state.epoch = epoch;
    state.rng_seed = rng.seed();
    state.rng_counter = rng.counter();
    state.history.push_back(rec);
    result.history.push_back(rec);
    const bool improved = !options.skip_eval && rec.test_accuracy > state.best_accuracy;
    if (improved) {
      state.best_accuracy = rec.test_accuracy;
      state.best_epoch = epoch;
    }
    if (improved || options.on_epoch || epoch == last) {
      store_parameters(model, state);
      store_optimizer(opt, state);
    }
    if (improved) result.best = state;
    if (options.on_epoch) options.on_epoch(rec, state);
  }
  if (state.params.empty()) {
    store_parameters(model, state);
    store_optimizer(opt, state);
  }
  result.final = std::move(state);
  return result;
}

void check_split(const ModelConfig& cfg, const DatasetSplit& split) {
  if (split.train.empty()) throw ConfigError("training set is empty");
  if (split.test.empty()) throw ConfigError("test set is empty");
  check_geometry(cfg, split.train);
  check_geometry(cfg, split.test);
}

}  // namespace

template <typename T>
TrainResult train(const ModelConfig& model_config, const DatasetSplit& split, const TrainConfig& config,
                  const TrainOptions& options, const std::vector<std::string>& activity_set) {
  config.validate();
  model_config.validate();
  check_split(model_config, split);
  Checkpoint state;
  state.model = model_config;
  state.train = config;
  state.train.precision = std::is_same_v<T, double> ? Precision::kF64 : Precision::kF32;
  state.init_seed = init_seed_for(config.seed);
  const Rng run = Rng(config.seed).fork(0x52554E);
  state.rng_seed = run.seed();
  state.rng_counter = run.counter();
  state.normalization = compute_channel_stats(split.train, model_config.sensors);
  state.activity_set = activity_set;
  state.held_out_user = split.held_out_user;

  UmsNet<T> model(model_config, state.init_seed);
  Optimizer<T> opt(state.train);
  const PreparedSplit data = prepare(model_config, split, state.normalization);
  return run_epochs(model, opt, std::move(state), data, options);
}

template <typename T>
TrainResult resume(const Checkpoint& from, const DatasetSplit& split, const TrainOptions& options) {
  check_split(from.model, split);
  auto model = model_from_checkpoint<T>(from);
  Optimizer<T> opt(from.train);
  restore_optimizer(opt, from);
  const PreparedSplit data = prepare(from.model, split, from.normalization);
  return run_epochs(*model, opt, from, data, options);
}

#define UMSNET_INSTANTIATE_TRAINING(T)                                                                          \
  template Var<T> cross_entropy(const Var<T>&, const std::vector<int>&);                                       \
  template class Optimizer<T>;                                                                                  \
  template void store_parameters(UmsNet<T>&, Checkpoint&);                                                      \
  template void restore_parameters(UmsNet<T>&, const Checkpoint&);                                              \
  template std::unique_ptr<UmsNet<T>> model_from_checkpoint(const Checkpoint&);                                 \
  template TrainResult train<T>(const ModelConfig&, const DatasetSplit&, const TrainConfig&, const TrainOptions&, \
                                const std::vector<std::string>&);                                              \
  template TrainResult resume<T>(const Checkpoint&, const DatasetSplit&, const TrainOptions&);

UMSNET_INSTANTIATE_TRAINING(float)
UMSNET_INSTANTIATE_TRAINING(double)

}  // namespace umsnet
