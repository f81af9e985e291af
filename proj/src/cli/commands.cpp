#include <fcntl.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>

#include "umsnet/cli/cli.hpp"
#include "umsnet/data/container.hpp"
#include "umsnet/errors.hpp"
#include "umsnet/evaluation/metrics.hpp"
#include "umsnet/model/batch.hpp"

extern char** environ;

namespace umsnet::cli {

namespace fs = std::filesystem;

namespace {

// ------------------------------------------------------------------ helpers

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag, const RunConfig* rc = nullptr) {
  if (flag) return *flag;
  if (rc && rc->seed_set) return rc->train.seed;
  if (const char* env = std::getenv("UMSNET_SEED"); env && *env) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (*end != '\0') throw UsageError(std::string("UMSNET_SEED is not an unsigned integer: '") + env + "'");
    return v;
  }
  return rc ? rc->train.seed : 0;
}

void make_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write '" + path + "'");
  f << text;
  if (!f) throw IoError("write failed for '" + path + "'");
}

nlohmann::json read_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open '" + path + "'");
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError("'" + path + "': " + e.what());
  }
}

std::string fixed(double v, int digits = 6) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

// "HHAR", "MHEALTH" or "name:channels,name:channels".
std::vector<SensorSpec> parse_sensors(const std::string& text) {
  std::string upper = text;
  std::transform(upper.begin(), upper.end(), upper.begin(), [](unsigned char c) { return std::toupper(c); });
  if (upper == "HHAR" || upper == "MHEALTH") return profile_by_name(upper).sensors;
  std::vector<SensorSpec> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos || colon == 0) {
      throw UsageError("sensor spec '" + item + "' must look like name:channels");
    }
    SensorSpec s;
    s.name = item.substr(0, colon);
    try {
      std::size_t used = 0;
      const int ch = std::stoi(item.substr(colon + 1), &used);
      if (ch <= 0 || used != item.size() - colon - 1) throw std::invalid_argument("channels");
      s.channels = static_cast<std::size_t>(ch);
    } catch (const std::logic_error&) {
      throw UsageError("sensor spec '" + item + "': channels must be a positive integer");
    }
    out.push_back(s);
  }
  if (out.empty()) throw UsageError("no sensors given");
  return out;
}

std::string counts_table(const SampleSet& set) {
  std::ostringstream os;
  os << "user";
  for (const auto& a : set.activity_set) os << ',' << a;
  os << ",total\n";
  for (const auto& u : users_of(set.samples)) {
    std::vector<std::size_t> n(set.activity_set.size(), 0);
    std::size_t total = 0;
    for (const auto& s : set.samples) {
      if (s.user_id != u) continue;
      ++n[static_cast<std::size_t>(s.label)];
      ++total;
    }
    os << u;
    for (auto c : n) os << ',' << c;
    os << ',' << total << '\n';
  }
  return os.str();
}

void check_sensors_match(const ModelConfig& model, const SampleSet& set) {
  if (model.sensors.size() != set.sensors.size()) {
    throw ConfigError("checkpoint expects " + std::to_string(model.sensors.size()) + " sensors, data has " +
                      std::to_string(set.sensors.size()));
  }
  for (std::size_t i = 0; i < model.sensors.size(); ++i) {
    const SensorSpec& m = model.sensors[i];
    const SensorSpec& d = set.sensors[i];
    if (m.name != d.name || m.channels != d.channels || m.samples_per_slice != d.samples_per_slice) {
      throw ConfigError("sensor " + std::to_string(i) + ": checkpoint expects " + m.name + " (" +
                        std::to_string(m.channels) + " ch x " + std::to_string(m.samples_per_slice) +
                        "), data has " + d.name + " (" + std::to_string(d.channels) + " ch x " +
                        std::to_string(d.samples_per_slice) + ")");
    }
  }
  if (model.num_classes != set.activity_set.size()) {
    throw ConfigError("checkpoint has " + std::to_string(model.num_classes) + " classes, data has " +
                      std::to_string(set.activity_set.size()));
  }
}

std::vector<SlicedSample> user_samples(const SampleSet& set, const std::string& user) {
  std::vector<SlicedSample> out;
  for (const auto& s : set.samples) {
    if (s.user_id == user) out.push_back(s);
  }
  if (out.empty()) {
    std::string list;
    for (const auto& u : users_of(set.samples)) list += (list.empty() ? "" : ", ") + u;
    throw ConfigError("unknown user '" + user + "' (available: " + list + ")");
  }
  return out;
}

template <typename T>
nlohmann::json evaluate_checkpoint(const Checkpoint& ckpt, std::vector<SlicedSample> test, std::size_t repeats) {
  auto model = model_from_checkpoint<T>(ckpt);
  apply_channel_stats(test, ckpt.model.sensors, ckpt.normalization);
  nlohmann::json j = evaluate(*model, test, repeats);
  j["held_out_user"] = ckpt.held_out_user;
  j["epoch"] = ckpt.epoch;
  j["best_accuracy"] = ckpt.best_accuracy;
  j["best_epoch"] = ckpt.best_epoch;
  j["activity_set"] = ckpt.activity_set;
  return j;
}

nlohmann::json evaluate_any(const Checkpoint& ckpt, std::vector<SlicedSample> test, std::size_t repeats) {
  return ckpt.train.precision == Precision::kF64 ? evaluate_checkpoint<double>(ckpt, std::move(test), repeats)
                                                 : evaluate_checkpoint<float>(ckpt, std::move(test), repeats);
}

// ------------------------------------------------------------------ train

struct TrainJob {
  RunConfig rc;
  std::optional<Checkpoint> resume_from;
  std::size_t stop_after = 0;
  std::size_t timing_repeats = 10;
};

template <typename T>
TrainResult run_train(const TrainJob& job, const ModelConfig& mc, const SampleSet& set, const DatasetSplit& split,
                      std::ostream& out) {
  const std::string dir = job.rc.out;
  const std::string history_path = dir + "/history.jsonl";
  {
    std::string prior;
    if (job.resume_from) {
      for (const auto& r : job.resume_from->history) prior += history_line(r) + "\n";
    }
    write_text(history_path, prior);
  }
  TrainOptions options;
  options.stop_after = job.stop_after;
  options.on_epoch = [&](const EpochRecord& rec, const Checkpoint& state) {
    std::ofstream h(history_path, std::ios::binary | std::ios::app);
    h << history_line(rec) << '\n';
    if (!h) throw IoError("write failed for '" + history_path + "'");
    save_checkpoint(state, dir + "/final.ckpt");
    if (state.best_epoch == rec.epoch) save_checkpoint(state, dir + "/best.ckpt");
    out << history_line(rec) << '\n' << std::flush;
  };
  if (job.resume_from) return resume<T>(*job.resume_from, split, options);
  return train<T>(mc, split, job.rc.train, options, set.activity_set);
}

// Trains one held-out user into rc.out; returns the final report.
nlohmann::json train_job(const TrainJob& job, std::ostream& out) {
  const RunConfig& rc = job.rc;
  if (rc.data.empty()) throw UsageError("train: --data is required");
  if (rc.out.empty()) throw UsageError("train: --out is required");
  const ModelConfig* resume_model = job.resume_from ? &job.resume_from->model : nullptr;
  const double window = resume_model ? 0.0 : rc.window_seconds;
  SampleSet set;
  ModelConfig mc;
  std::string holdout = rc.holdout_user;
  if (resume_model) {
    const DatasetFile probe = load_dataset(rc.data);
    set = load_samples(rc.data, static_cast<double>(resume_model->num_slices) * probe.slice_seconds);
    mc = *resume_model;
    check_sensors_match(mc, set);
    if (holdout.empty()) holdout = job.resume_from->held_out_user;
    if (holdout != job.resume_from->held_out_user) {
      throw ConfigError("checkpoint was trained with held-out user '" + job.resume_from->held_out_user +
                        "', not '" + holdout + "'");
    }
  } else {
    check_window(window);
    set = load_samples(rc.data, window);
    mc = build_model_config(rc.variant, set.sensors, set.activity_set.size(), set.num_slices, rc.model);
    if (holdout.empty()) throw UsageError("train: --holdout-user is required");
  }
  const DatasetSplit split = leave_one_user_out(set.samples, holdout);
  make_dir(rc.out);
  write_text(rc.out + "/run_config.json", run_config_json(rc).dump(2) + "\n");

  const Precision precision = job.resume_from ? job.resume_from->train.precision : rc.train.precision;
  const TrainResult result = precision == Precision::kF64 ? run_train<double>(job, mc, set, split, out)
                                                          : run_train<float>(job, mc, set, split, out);
  save_checkpoint(result.final, rc.out + "/final.ckpt");
  nlohmann::json report = evaluate_any(result.final, split.test, job.timing_repeats);
  write_text(rc.out + "/report.json", report.dump(2) + "\n");
  return report;
}

// ------------------------------------------------------------------ loocv

struct LoocvRow {
  std::string user;
  double accuracy = 0.0, macro_f1 = 0.0, best_accuracy = 0.0;
  std::size_t best_epoch = 0;
};

void spawn_and_wait(const std::vector<std::vector<std::string>>& jobs, const std::vector<std::string>& logs,
                    std::size_t parallel, const std::vector<std::string>& users) {
  const char* self = std::getenv("UMSNET_EXE");
  const std::string exe = self && *self ? self : "/proc/self/exe";
  std::map<pid_t, std::size_t> running;
  std::size_t next = 0;
  std::optional<std::pair<std::size_t, int>> failure;
  auto reap = [&] {
    int status = 0;
    const pid_t pid = waitpid(-1, &status, 0);
    if (pid < 0) throw IoError("waitpid failed");
    const std::size_t i = running.at(pid);
    running.erase(pid);
    const int code = WIFEXITED(status) ? WEXITSTATUS(status) : kFailure;
    if (code != 0 && !failure) failure = {i, code};
  };
  while (next < jobs.size() || !running.empty()) {
    if (next < jobs.size() && running.size() < parallel && !failure) {
      std::vector<std::string> argv_s = {exe};
      argv_s.insert(argv_s.end(), jobs[next].begin(), jobs[next].end());
      std::vector<char*> argv;
      for (auto& a : argv_s) argv.push_back(a.data());
      argv.push_back(nullptr);
      posix_spawn_file_actions_t fa;
      posix_spawn_file_actions_init(&fa);
      posix_spawn_file_actions_addopen(&fa, STDOUT_FILENO, logs[next].c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
      posix_spawn_file_actions_adddup2(&fa, STDOUT_FILENO, STDERR_FILENO);
      pid_t pid = 0;
      const int rc = posix_spawn(&pid, exe.c_str(), &fa, nullptr, argv.data(), environ);
      posix_spawn_file_actions_destroy(&fa);
      if (rc != 0) throw IoError("cannot start '" + exe + "': " + std::strerror(rc));
      running[pid] = next++;
    } else if (!running.empty()) {
      reap();
    } else {
      break;
    }
  }
  if (failure) {
    throw IoError("training for user '" + users[failure->first] + "' exited with code " +
                  std::to_string(failure->second) + " (log: " + logs[failure->first] + ")");
  }
}

std::string loocv_csv(const std::vector<LoocvRow>& rows) {
  std::ostringstream os;
  os << "user,accuracy,macro_f1,best_accuracy,best_epoch\n";
  double acc = 0, f1 = 0, best = 0;
  for (const auto& r : rows) {
    os << r.user << ',' << fixed(r.accuracy) << ',' << fixed(r.macro_f1) << ',' << fixed(r.best_accuracy) << ','
       << r.best_epoch << '\n';
    acc += r.accuracy;
    f1 += r.macro_f1;
    best += r.best_accuracy;
  }
  const double n = static_cast<double>(rows.size());
  os << "mean," << fixed(acc / n) << ',' << fixed(f1 / n) << ',' << fixed(best / n) << ",\n";
  return os.str();
}

// ------------------------------------------------------------------ analyze

std::string analyze_json(const ModelConfig& mc, const std::string& profile, double window, const ParamCount& pc,
                         std::int64_t macs) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : pc.rows) {
    nlohmann::json row{{"layer", r.layer}, {"kind", r.kind}, {"params", r.params}, {"mult_adds", r.mult_adds}};
    if (r.dense_weights > 0) {
      row["weights"] = r.weights;
      row["dense_weights"] = r.dense_weights;
      row["weight_ratio"] = static_cast<double>(r.weights) / static_cast<double>(r.dense_weights);
    }
    rows.push_back(std::move(row));
  }
  nlohmann::json j{{"variant", variant_name(mc.variant)},
                   {"profile", profile},
                   {"window_seconds", window},
                   {"num_slices", mc.num_slices},
                   {"dense_depthwise", mc.stack.dense_depthwise},
                   {"params", pc.total},
                   {"mult_adds", macs},
                   {"config_fingerprint", config_fingerprint(mc)},
                   {"rows", rows}};
  return j.dump(2) + "\n";
}

}  // namespace

// ------------------------------------------------------------------ entry point

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"UMSNet multi-sensor activity recognition"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "umsnet 1.0");

  // generate
  auto* gen = app.add_subcommand("generate", "Write a synthetic dataset container");
  std::string gen_out, gen_sensors = "HHAR";
  std::size_t gen_users = 9, gen_classes = 6;
  double gen_seconds = 60, gen_window = 6, gen_noise = 0.1, gen_switch = 3;
  std::optional<std::uint64_t> gen_seed;
  bool gen_long = false;
  gen->add_option("--out", gen_out, "Output .umsd path")->required();
  gen->add_option("--users", gen_users, "Number of users")->capture_default_str()->check(CLI::PositiveNumber);
  gen->add_option("--classes", gen_classes, "Number of classes")->capture_default_str()->check(CLI::Range(2, 1000));
  gen->add_option("--sensors", gen_sensors, "HHAR, MHEALTH, or name:channels,...")->capture_default_str();
  gen->add_option("--seconds", gen_seconds, "Seconds per user and class")->capture_default_str()->check(CLI::PositiveNumber);
  gen->add_option("--window", gen_window, "Window length of the stored samples")->capture_default_str()->check(CLI::PositiveNumber);
  gen->add_option("--noise", gen_noise, "Gaussian noise sigma")->capture_default_str()->check(CLI::NonNegativeNumber);
  gen->add_option("--seed", gen_seed, "Seed (default: UMSNET_SEED, else 0)");
  gen->add_flag("--long-horizon", gen_long, "Classes alternate two tones; separable only over long windows");
  gen->add_option("--switch-seconds", gen_switch, "Tone switch interval for --long-horizon")->capture_default_str();

  // ingest
  auto* ing = app.add_subcommand("ingest", "Convert CSV recordings into a dataset container");
  std::string ing_schema, ing_out, ing_device, ing_location = "arm";
  std::vector<std::string> ing_inputs;
  double ing_window = 6, ing_gap = 1.0;
  ing->add_option("--schema", ing_schema, "hhar, mhealth or generic")->required();
  ing->add_option("--input", ing_inputs, "Input files (HHAR: one per sensor)")->required()->check(CLI::ExistingFile);
  ing->add_option("--out", ing_out, "Output .umsd path")->required();
  ing->add_option("--window", ing_window, "Window length of the stored samples")->capture_default_str();
  ing->add_option("--device", ing_device, "HHAR: keep one device");
  ing->add_option("--location", ing_location, "MHEALTH: arm or ankle")->capture_default_str();
  ing->add_option("--max-gap", ing_gap, "Gap (s) that splits a recording")->capture_default_str();

  // train
  auto* tr = app.add_subcommand("train", "Train one leave-one-user-out split");
  std::string tr_config, tr_data, tr_variant, tr_user, tr_out, tr_resume, tr_precision;
  std::optional<double> tr_window;
  std::optional<std::uint64_t> tr_seed;
  std::optional<std::size_t> tr_epochs;
  std::size_t tr_stop = 0, tr_repeats = 10;
  tr->add_option("--config", tr_config, "Run config JSON");
  tr->add_option("--data", tr_data, "Dataset container");
  tr->add_option("--variant", tr_variant, "A, B, C or custom");
  tr->add_option("--window", tr_window, "Window seconds: 1.5, 3 or 6");
  tr->add_option("--holdout-user", tr_user, "User held out for testing");
  tr->add_option("--seed", tr_seed, "Seed (default: config, UMSNET_SEED, 0)");
  tr->add_option("--epochs", tr_epochs, "Override train.epochs");
  tr->add_option("--precision", tr_precision, "f32 or f64");
  tr->add_option("--out", tr_out, "Output directory");
  tr->add_option("--resume", tr_resume, "Continue from a checkpoint")->check(CLI::ExistingFile);
  tr->add_option("--stop-after", tr_stop, "Stop after this many epochs (0 = all)");
  tr->add_option("--timing-repeats", tr_repeats, "Timed forward passes for the report (0 skips)");

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on its held-out user");
  std::string ev_ckpt, ev_data, ev_user;
  std::size_t ev_repeats = 10;
  ev->add_option("--checkpoint", ev_ckpt, "Checkpoint file")->required();
  ev->add_option("--data", ev_data, "Dataset container")->required();
  ev->add_option("--holdout-user", ev_user, "User to evaluate (default: the checkpoint's)");
  ev->add_option("--timing-repeats", ev_repeats, "Timed forward passes (0 skips)")->capture_default_str();

  // analyze
  auto* an = app.add_subcommand("analyze", "Parameter and mult-add breakdown of an untrained model");
  std::string an_variant = "A", an_profile = "HHAR", an_sensors, an_config, an_csv, an_format = "json";
  double an_window = 6;
  std::size_t an_classes = 6;
  bool an_dense = false;
  an->add_option("--variant", an_variant, "A, B, C or custom")->capture_default_str();
  an->add_option("--profile", an_profile, "HHAR, MHEALTH or custom")
      ->capture_default_str()
      ->check(CLI::IsMember({"HHAR", "MHEALTH", "custom"}, CLI::ignore_case));
  an->add_option("--sensors", an_sensors, "custom profile: name:channels,...");
  an->add_option("--classes", an_classes, "custom profile: class count")->capture_default_str();
  an->add_option("--window", an_window, "Window seconds: 1.5, 3 or 6")->capture_default_str();
  an->add_option("--config", an_config, "Run config JSON (model overrides)");
  an->add_flag("--dense-depthwise", an_dense, "Debug: dense convs in place of depthwise ones");
  an->add_option("--csv", an_csv, "Also write the breakdown CSV here");
  an->add_option("--format", an_format, "stdout format")->check(CLI::IsMember({"json", "csv"}))->capture_default_str();

  // loocv
  auto* lo = app.add_subcommand("loocv", "Train and evaluate every held-out user");
  std::string lo_config, lo_data, lo_variant, lo_out, lo_precision;
  std::optional<double> lo_window;
  std::optional<std::uint64_t> lo_seed;
  std::optional<std::size_t> lo_epochs;
  std::size_t lo_jobs = 1;
  lo->add_option("--config", lo_config, "Run config JSON");
  lo->add_option("--data", lo_data, "Dataset container");
  lo->add_option("--variant", lo_variant, "A, B, C or custom");
  lo->add_option("--window", lo_window, "Window seconds: 1.5, 3 or 6");
  lo->add_option("--seed", lo_seed, "Seed (default: config, UMSNET_SEED, 0)");
  lo->add_option("--epochs", lo_epochs, "Override train.epochs");
  lo->add_option("--precision", lo_precision, "f32 or f64");
  lo->add_option("--out", lo_out, "Output directory");
  lo->add_option("--jobs", lo_jobs, "Parallel training processes")->capture_default_str()->check(CLI::PositiveNumber);

  std::vector<std::string> argv_s{"umsnet"};
  argv_s.insert(argv_s.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_s) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  auto merge_run_config = [&](const std::string& config, const std::string& data, const std::string& variant,
                              const std::optional<double>& window, const std::optional<std::uint64_t>& seed,
                              const std::optional<std::size_t>& epochs, const std::string& precision,
                              const std::string& outdir) {
    RunConfig rc = config.empty() ? RunConfig{} : load_run_config(config);
    if (!data.empty()) rc.data = data;
    if (!variant.empty()) rc.variant = variant;
    if (window) rc.window_seconds = *window;
    if (epochs) rc.train.epochs = *epochs;
    if (!precision.empty()) rc.train.precision = parse_precision(precision);
    if (!outdir.empty()) rc.out = outdir;
    rc.train.seed = resolve_seed(seed, &rc);
    rc.seed_set = true;
    try {
      parse_variant(rc.variant);
    } catch (const ConfigError& e) {
      throw UsageError(e.what());
    }
    rc.train.validate();
    return rc;
  };

  try {
    if (*gen) {
      SynthOptions so;
      so.num_users = gen_users;
      so.num_classes = gen_classes;
      so.sensors = parse_sensors(gen_sensors);
      so.seconds_per_segment = gen_seconds;
      so.seed = resolve_seed(gen_seed);
      so.noise_sigma = gen_noise;
      so.long_horizon = gen_long;
      so.switch_seconds = gen_switch;
      DatasetFile file;
      file.recordings = synth_generate(so);
      WindowOptions wo;
      wo.window_seconds = gen_window;
      file.samples = build_sample_set(file.recordings, wo);
      file.info = {{"generator", "synthetic"},
                   {"users", so.num_users},
                   {"classes", so.num_classes},
                   {"seconds", so.seconds_per_segment},
                   {"seed", so.seed},
                   {"noise_sigma", so.noise_sigma},
                   {"long_horizon", so.long_horizon},
                   {"switch_seconds", so.switch_seconds}};
      save_dataset(file, gen_out);
      out << counts_table(*file.samples);
      return kOk;
    }

    if (*ing) {
      const CsvSchema schema = parse_schema(ing_schema);
      IngestOptions io;
      io.device = ing_device;
      io.mhealth_location = ing_location;
      io.max_gap_seconds = ing_gap;
      std::vector<RawRecording> recs;
      if (schema == CsvSchema::kHhar) {
        std::vector<std::vector<RawRecording>> per_sensor;
        for (const auto& path : ing_inputs) per_sensor.push_back(ingest_csv(path, schema, io));
        recs = per_sensor.size() == 1 ? per_sensor.front() : merge_sensor_recordings(per_sensor);
      } else {
        for (const auto& path : ing_inputs) {
          auto r = ingest_csv(path, schema, io);
          recs.insert(recs.end(), r.begin(), r.end());
        }
      }
      DatasetFile file;
      WindowOptions wo;
      wo.window_seconds = ing_window;
      for (const auto& r : recs) file.recordings.push_back(resample(r, wo.target_hz));
      file.samples = build_sample_set(file.recordings, wo);
      file.info = {{"generator", "ingest"}, {"schema", ing_schema}, {"inputs", ing_inputs}};
      save_dataset(file, ing_out);
      out << counts_table(*file.samples);
      return kOk;
    }

    if (*tr) {
      TrainJob job;
      job.stop_after = tr_stop;
      job.timing_repeats = tr_repeats;
      if (!tr_resume.empty()) {
        job.resume_from = load_checkpoint(tr_resume);
        if (!tr_config.empty() || !tr_variant.empty() || tr_window || tr_seed || tr_epochs || !tr_precision.empty()) {
          throw UsageError("--resume takes the model, window, seed and schedule from the checkpoint");
        }
        job.rc.data = tr_data;
        job.rc.out = tr_out;
        job.rc.holdout_user = tr_user;
        job.rc.variant = variant_name(job.resume_from->model.variant);
        job.rc.window_seconds = 0.25 * static_cast<double>(job.resume_from->model.num_slices);
        job.rc.train = job.resume_from->train;
      } else {
        job.rc = merge_run_config(tr_config, tr_data, tr_variant, tr_window, tr_seed, tr_epochs, tr_precision, tr_out);
        if (!tr_user.empty()) job.rc.holdout_user = tr_user;
        check_window(job.rc.window_seconds);
      }
      const nlohmann::json report = train_job(job, out);
      out << report.dump(2) << '\n';
      return kOk;
    }

    if (*ev) {
      const Checkpoint ckpt = load_checkpoint(ev_ckpt);
      const DatasetFile probe = load_dataset(ev_data);
      const SampleSet set = load_samples(ev_data, static_cast<double>(ckpt.model.num_slices) * probe.slice_seconds);
      check_sensors_match(ckpt.model, set);
      const std::string user = ev_user.empty() ? ckpt.held_out_user : ev_user;
      out << evaluate_any(ckpt, user_samples(set, user), ev_repeats).dump(2) << '\n';
      return kOk;
    }

    if (*an) {
      check_window(an_window);
      WindowOptions wo;
      wo.window_seconds = an_window;
      const std::size_t k = slices_per_window(wo);
      const std::size_t s = samples_per_slice(wo);
      std::vector<SensorSpec> sensors;
      std::size_t classes = an_classes;
      std::string profile = an_profile;
      std::transform(profile.begin(), profile.end(), profile.begin(), [](unsigned char c) { return std::toupper(c); });
      if (profile == "CUSTOM") {
        if (an_sensors.empty()) throw UsageError("--profile custom needs --sensors");
        sensors = parse_sensors(an_sensors);
        profile = "custom";
      } else {
        const DatasetProfile p = profile_by_name(profile, s);
        sensors = p.sensors;
        classes = p.num_classes;
      }
      for (auto& spec : sensors) spec.samples_per_slice = s;
      nlohmann::json overrides = nlohmann::json::object();
      if (!an_config.empty()) overrides = load_run_config(an_config).model;
      if (an_dense) overrides["dense_depthwise"] = true;
      const ModelConfig mc = build_model_config(an_variant, sensors, classes, k, overrides);
      UmsNet<float> model(mc, init_seed_for(0));
      const ParamCount pc = count_params(model);
      const std::int64_t macs = count_mult_adds(model, 1);
      const std::string csv = breakdown_csv(pc.rows);
      if (!an_csv.empty()) write_text(an_csv, csv);
      out << (an_format == "csv" ? csv : analyze_json(mc, profile, an_window, pc, macs));
      return kOk;
    }

    if (*lo) {
      RunConfig rc = merge_run_config(lo_config, lo_data, lo_variant, lo_window, lo_seed, lo_epochs, lo_precision, lo_out);
      check_window(rc.window_seconds);
      if (rc.data.empty()) throw UsageError("loocv: --data is required");
      if (rc.out.empty()) throw UsageError("loocv: --out is required");
      const SampleSet set = load_samples(rc.data, rc.window_seconds);
      const std::vector<std::string> users = users_of(set.samples);
      if (users.size() < 2) throw UsageError("loocv needs at least two users; the data has " + std::to_string(users.size()));
      build_model_config(rc.variant, set.sensors, set.activity_set.size(), set.num_slices, rc.model);
      make_dir(rc.out);
      RunConfig shared = rc;
      shared.data = fs::absolute(rc.data).string();
      shared.holdout_user.clear();
      const std::string shared_path = rc.out + "/run_config.json";
      write_text(shared_path, run_config_json(shared).dump(2) + "\n");

      if (lo_jobs <= 1) {
        for (const auto& u : users) {
          TrainJob job;
          job.rc = shared;
          job.rc.holdout_user = u;
          job.rc.out = rc.out + "/" + u;
          std::ostringstream log;
          train_job(job, log);
          write_text(job.rc.out + "/train.log", log.str());
        }
      } else {
        std::vector<std::vector<std::string>> jobs;
        std::vector<std::string> logs;
        for (const auto& u : users) {
          make_dir(rc.out + "/" + u);
          jobs.push_back({"train", "--config", shared_path, "--holdout-user", u, "--out", rc.out + "/" + u});
          logs.push_back(rc.out + "/" + u + "/train.log");
        }
        spawn_and_wait(jobs, logs, lo_jobs, users);
      }

      std::vector<LoocvRow> rows;
      nlohmann::json per_user = nlohmann::json::array();
      for (const auto& u : users) {
        const nlohmann::json rep = read_json(rc.out + "/" + u + "/report.json");
        LoocvRow r;
        r.user = u;
        r.accuracy = rep.at("accuracy").get<double>();
        r.macro_f1 = rep.at("macro_f1").get<double>();
        r.best_accuracy = rep.at("best_accuracy").get<double>();
        r.best_epoch = rep.at("best_epoch").get<std::size_t>();
        rows.push_back(r);
        per_user.push_back({{"user", u},
                            {"accuracy", r.accuracy},
                            {"macro_f1", r.macro_f1},
                            {"best_accuracy", r.best_accuracy},
                            {"best_epoch", r.best_epoch}});
      }
      double acc = 0, f1 = 0;
      for (const auto& r : rows) {
        acc += r.accuracy;
        f1 += r.macro_f1;
      }
      const double n = static_cast<double>(rows.size());
      const nlohmann::json summary{{"variant", rc.variant},
                                   {"window_seconds", rc.window_seconds},
                                   {"num_slices", set.num_slices},
                                   {"users", per_user},
                                   {"mean_accuracy", acc / n},
                                   {"mean_macro_f1", f1 / n}};
      const std::string csv = loocv_csv(rows);
      write_text(rc.out + "/loocv.csv", csv);
      write_text(rc.out + "/loocv.json", summary.dump(2) + "\n");
      out << csv;
      return kOk;
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const DimensionError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const IntegrityError& e) {
    err << "integrity error: " << e.what() << '\n';
    return kIntegrity;
  } catch (const SchemaError& e) {
    err << "data error: " << e.what() << '\n';
    return kIntegrity;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kUsage;
}

}  // namespace umsnet::cli
