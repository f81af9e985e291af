#include "umsnet/data/container.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "umsnet/errors.hpp"

namespace umsnet {

namespace {

template <typename U>
void put_le(std::vector<char>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

template <typename U>
U get_le(const char* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

constexpr std::size_t kHeaderBytes = 4 + 4 + 8;

void write_recordings(const std::vector<RawRecording>& recs, nlohmann::json& meta, std::vector<char>& payload) {
  nlohmann::json list = nlohmann::json::array();
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const RawRecording& r = recs[i];
    const std::size_t n = r.labels.size();
    if (r.streams.empty() || r.label_times.size() != n) {
      throw ContractError("save_dataset: recording " + std::to_string(i) + " has no streams or a ragged timeline");
    }
    const double rate = r.streams.front().sample_rate_hz;
    nlohmann::json streams = nlohmann::json::array();
    for (const auto& s : r.streams) {
      if (s.sample_rate_hz != rate || s.length() != n || !(rate > 0.0)) {
        throw ContractError("save_dataset: recording " + std::to_string(i) + " stream '" + s.name +
                            "' is not uniform; resample before saving");
      }
      streams.push_back({{"name", s.name}, {"channels", s.channel_count()}});
    }
    list.push_back({{"user_id", r.user_id},
                    {"source", r.source},
                    {"start_time", n ? r.label_times.front() : 0.0},
                    {"sample_rate_hz", rate},
                    {"length", n},
                    {"streams", streams}});
    for (const auto& s : r.streams) {
      for (const auto& ch : s.channels) append_le(payload, ch.data(), n);
      meta["blocks"].push_back({{"name", "rec" + std::to_string(i) + "." + s.name}, {"count", s.channel_count() * n}});
    }
    std::vector<float> labels(r.labels.begin(), r.labels.end());
    append_le(payload, labels.data(), n);
    meta["blocks"].push_back({{"name", "rec" + std::to_string(i) + ".labels"}, {"count", n}});
  }
  meta["recordings"] = list;
}

}  // namespace

void append_le(std::vector<char>& out, const float* values, std::size_t n) {
  out.reserve(out.size() + 4 * n);
  for (std::size_t i = 0; i < n; ++i) put_le(out, std::bit_cast<std::uint32_t>(values[i]));
}

void append_le(std::vector<char>& out, const double* values, std::size_t n) {
  out.reserve(out.size() + 8 * n);
  for (std::size_t i = 0; i < n; ++i) put_le(out, std::bit_cast<std::uint64_t>(values[i]));
}

void PayloadReader::need(std::size_t bytes) const {
  if (data_.size() - pos_ < bytes) {
    throw IntegrityError(what_ + ": payload truncated (need " + std::to_string(bytes) + " more bytes, have " +
                         std::to_string(data_.size() - pos_) + ")");
  }
}

void PayloadReader::read(float* out, std::size_t n) {
  need(4 * n);
  for (std::size_t i = 0; i < n; ++i, pos_ += 4) out[i] = std::bit_cast<float>(get_le<std::uint32_t>(&data_[pos_]));
}

void PayloadReader::read(double* out, std::size_t n) {
  need(8 * n);
  for (std::size_t i = 0; i < n; ++i, pos_ += 8) out[i] = std::bit_cast<double>(get_le<std::uint64_t>(&data_[pos_]));
}

void write_framed(const std::string& path, const char (&magic)[4], std::uint32_t version, const nlohmann::json& meta,
                  const std::vector<char>& payload) {
  const std::string text = meta.dump();
  std::vector<char> head(magic, magic + 4);
  put_le(head, version);
  put_le(head, static_cast<std::uint64_t>(text.size()));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out.write(head.data(), static_cast<std::streamsize>(head.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw IoError("write failed: " + path);
}

FramedFile read_framed(const std::string& path, const char (&magic)[4], const char* kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string prefix = std::string(kind) + " " + path;
  if (bytes.size() < kHeaderBytes) throw IntegrityError(prefix + ": truncated header");
  if (std::memcmp(bytes.data(), magic, 4) != 0) {
    throw IntegrityError(prefix + ": bad magic (expected '" + std::string(magic, 4) + "')");
  }
  FramedFile f;
  f.version = get_le<std::uint32_t>(bytes.data() + 4);
  const auto len = get_le<std::uint64_t>(bytes.data() + 8);
  if (len > bytes.size() - kHeaderBytes) throw IntegrityError(prefix + ": truncated metadata block");
  try {
    f.meta = nlohmann::json::parse(bytes.begin() + kHeaderBytes, bytes.begin() + kHeaderBytes + static_cast<std::ptrdiff_t>(len));
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(prefix + ": unreadable metadata: " + e.what());
  }
  f.payload.assign(bytes.begin() + kHeaderBytes + static_cast<std::ptrdiff_t>(len), bytes.end());
  return f;
}

void save_dataset(const DatasetFile& data, const std::string& path) {
  nlohmann::json meta;
  meta["format"] = "UMSD";
  meta["blocks"] = nlohmann::json::array();
  meta["slice_seconds"] = data.slice_seconds;
  meta["target_hz"] = data.target_hz;
  meta["info"] = data.info;
  std::vector<char> payload;
  write_recordings(data.recordings, meta, payload);

  std::vector<std::string> users;
  std::vector<std::string> activities;
  std::vector<SensorSpec> sensors;
  for (const auto& r : data.recordings) {
    if (std::find(users.begin(), users.end(), r.user_id) == users.end()) users.push_back(r.user_id);
    if (activities.empty()) activities = r.activity_set;
    if (sensors.empty()) {
      for (const auto& s : r.streams) sensors.push_back({s.name, s.channel_count(), 0});
    }
  }
  if (data.samples) {
    const SampleSet& set = *data.samples;
    nlohmann::json items = nlohmann::json::array();
    for (const auto& smp : set.samples) {
      items.push_back({{"user_id", smp.user_id}, {"label", smp.label}, {"start_time", smp.start_time}});
      if (std::find(users.begin(), users.end(), smp.user_id) == users.end()) users.push_back(smp.user_id);
    }
    meta["samples"] = {{"num_slices", set.num_slices},
                       {"window_seconds", set.window_seconds},
                       {"sensors", set.sensors},
                       {"activity_set", set.activity_set},
                       {"count", set.samples.size()},
                       {"items", items}};
    for (std::size_t s = 0; s < set.sensors.size(); ++s) {
      const std::size_t per = set.num_slices * set.sensors[s].channels * set.sensors[s].samples_per_slice;
      for (const auto& smp : set.samples) {
        if (smp.sensors.size() != set.sensors.size() || smp.sensors[s].size() != per) {
          throw ContractError("save_dataset: sample of user '" + smp.user_id + "' does not match the set geometry");
        }
        append_le(payload, smp.sensors[s].data(), per);
      }
      meta["blocks"].push_back({{"name", "samples." + set.sensors[s].name}, {"count", per * set.samples.size()}});
    }
    if (activities.empty()) activities = set.activity_set;
    if (sensors.empty()) sensors = set.sensors;
  }
  meta["users"] = users;
  meta["activity_set"] = activities;
  meta["num_classes"] = activities.size();
  nlohmann::json sensor_meta = nlohmann::json::array();
  for (const auto& s : sensors) sensor_meta.push_back({{"name", s.name}, {"channels", s.channels}});
  meta["sensors"] = sensor_meta;
  write_framed(path, kDatasetMagic, kDatasetVersion, meta, payload);
}

DatasetFile load_dataset(const std::string& path) {
  FramedFile f = read_framed(path, kDatasetMagic, "dataset");
  if (f.version != kDatasetVersion) {
    throw IntegrityError("dataset " + path + ": unsupported version " + std::to_string(f.version) +
                         " (this build reads version " + std::to_string(kDatasetVersion) + ")");
  }
  DatasetFile d;
  try {
    std::size_t total = 0;
    for (const auto& b : f.meta.at("blocks")) total += b.at("count").get<std::size_t>();
    if (f.payload.size() != 4 * total) {
      throw IntegrityError("dataset " + path + ": payload is " + std::to_string(f.payload.size()) +
                           " bytes, metadata declares " + std::to_string(4 * total));
    }
    d.slice_seconds = f.meta.at("slice_seconds").get<double>();
    d.target_hz = f.meta.at("target_hz").get<double>();
    d.info = f.meta.value("info", nlohmann::json::object());
    const auto activities = f.meta.at("activity_set").get<std::vector<std::string>>();
    PayloadReader reader(f.payload, "dataset " + path);
    for (const auto& jr : f.meta.at("recordings")) {
      RawRecording r;
      r.user_id = jr.at("user_id").get<std::string>();
      r.source = jr.at("source").get<std::string>();
      r.activity_set = activities;
      const double start = jr.at("start_time").get<double>();
      const double rate = jr.at("sample_rate_hz").get<double>();
      const auto n = jr.at("length").get<std::size_t>();
      r.label_times.resize(n);
      for (std::size_t i = 0; i < n; ++i) r.label_times[i] = start + static_cast<double>(i) / rate;
      for (const auto& js : jr.at("streams")) {
        SensorStream s;
        s.name = js.at("name").get<std::string>();
        s.sample_rate_hz = rate;
        s.timestamps = r.label_times;
        s.channels.assign(js.at("channels").get<std::size_t>(), std::vector<float>(n));
        for (auto& ch : s.channels) reader.read(ch.data(), n);
        r.streams.push_back(std::move(s));
      }
      std::vector<float> labels(n);
      reader.read(labels.data(), n);
      r.labels.assign(labels.begin(), labels.end());
      d.recordings.push_back(std::move(r));
    }
    if (f.meta.contains("samples")) {
      const auto& js = f.meta["samples"];
      SampleSet set;
      set.num_slices = js.at("num_slices").get<std::size_t>();
      set.window_seconds = js.at("window_seconds").get<double>();
      set.sensors = js.at("sensors").get<std::vector<SensorSpec>>();
      set.activity_set = js.at("activity_set").get<std::vector<std::string>>();
      for (const auto& item : js.at("items")) {
        SlicedSample smp;
        smp.user_id = item.at("user_id").get<std::string>();
        smp.label = item.at("label").get<int>();
        smp.start_time = item.at("start_time").get<double>();
        smp.window_seconds = set.window_seconds;
        smp.num_slices = set.num_slices;
        smp.sensors.resize(set.sensors.size());
        set.samples.push_back(std::move(smp));
      }
      for (std::size_t s = 0; s < set.sensors.size(); ++s) {
        const std::size_t per = set.num_slices * set.sensors[s].channels * set.sensors[s].samples_per_slice;
        for (auto& smp : set.samples) {
          smp.sensors[s].resize(per);
          reader.read(smp.sensors[s].data(), per);
        }
      }
      d.samples = std::move(set);
    }
    if (reader.remaining() != 0) throw IntegrityError("dataset " + path + ": trailing payload bytes");
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError("dataset " + path + ": malformed metadata: " + e.what());
  }
  return d;
}

}  // namespace umsnet
