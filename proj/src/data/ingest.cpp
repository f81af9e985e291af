#include <algorithm>
#include <array>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <regex>
#include <sstream>

#include <nlohmann/json.hpp>

#include "umsnet/data/dataset.hpp"
#include "umsnet/errors.hpp"

namespace umsnet {

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n\"");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n\"");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, delim)) out.push_back(trim(field));
  if (!line.empty() && line.back() == delim) out.emplace_back();
  return out;
}

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream is(line);
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

double to_double(const std::string& s, const std::string& what, std::size_t line_no) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw SchemaError("line " + std::to_string(line_no) + ": column '" + what + "' is not numeric: '" + s + "'");
  }
}

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return in;
}

// Row-level intermediate before segmentation.
struct Row {
  std::string user;
  std::string device;
  double time = 0.0;
  int label = -1;  // -1: unlabelled
  std::vector<float> values;
};

struct StreamLayout {
  std::string name;
  std::vector<std::size_t> value_index;  // indices into Row::values
};

// Groups rows by (user, device), sorts by time, and cuts a new recording at
// every unlabelled row or time gap larger than max_gap.
std::vector<RawRecording> segment_rows(std::vector<Row> rows, const std::vector<StreamLayout>& layout,
                                       const std::vector<std::string>& activities, double rate_hz,
                                       double max_gap) {
  std::map<std::pair<std::string, std::string>, std::vector<Row>> groups;
  for (auto& r : rows) groups[{r.user, r.device}].push_back(std::move(r));
  std::vector<RawRecording> out;
  for (auto& [key, group] : groups) {
    std::stable_sort(group.begin(), group.end(), [](const Row& a, const Row& b) { return a.time < b.time; });
    RawRecording current;
    auto flush = [&]() {
      if (!current.labels.empty()) out.push_back(std::move(current));
      current = RawRecording{};
    };
    double last_time = 0.0;
    for (const Row& r : group) {
      if (r.label < 0) {
        flush();
        continue;
      }
      if (!current.labels.empty() && r.time - last_time > max_gap) flush();
      if (current.labels.empty()) {
        current.user_id = key.first;
        current.source = key.second;
        current.activity_set = activities;
        for (const auto& s : layout) {
          SensorStream st;
          st.name = s.name;
          st.sample_rate_hz = rate_hz;
          st.channels.resize(s.value_index.size());
          current.streams.push_back(std::move(st));
        }
      }
      for (std::size_t s = 0; s < layout.size(); ++s) {
        SensorStream& st = current.streams[s];
        st.timestamps.push_back(r.time);
        for (std::size_t c = 0; c < layout[s].value_index.size(); ++c) {
          st.channels[c].push_back(r.values[layout[s].value_index[c]]);
        }
      }
      current.label_times.push_back(r.time);
      current.labels.push_back(r.label);
      last_time = r.time;
    }
    flush();
  }
  return out;
}

std::vector<RawRecording> ingest_hhar(const std::string& path, const IngestOptions& options) {
  std::ifstream in = open_input(path);
  std::string header;
  if (!std::getline(in, header) || trim(header).empty()) return {};
  const auto cols = split(header, ',');
  auto find = [&](std::initializer_list<const char*> names) -> std::ptrdiff_t {
    for (const char* n : names) {
      for (std::size_t i = 0; i < cols.size(); ++i) {
        if (lower(cols[i]) == lower(n)) return static_cast<std::ptrdiff_t>(i);
      }
    }
    return -1;
  };
  // "timestamp" is seconds; the original files' Creation_Time is nanoseconds.
  std::ptrdiff_t t_col = find({"timestamp"});
  double t_scale = 1.0;
  if (t_col < 0) {
    t_col = find({"Creation_Time"});
    t_scale = 1e-9;
  }
  const std::ptrdiff_t u_col = find({"user"}), d_col = find({"device"}), g_col = find({"gt"});
  const std::ptrdiff_t x_col = find({"x"}), y_col = find({"y"}), z_col = find({"z"});
  const std::pair<const char*, std::ptrdiff_t> required[] = {{"timestamp", t_col}, {"user", u_col},
                                                             {"device", d_col},    {"gt", g_col},
                                                             {"x", x_col},         {"y", y_col},
                                                             {"z", z_col}};
  for (const auto& [name, idx] : required) {
    if (idx < 0) throw SchemaError(path + ": missing HHAR column '" + name + "'");
  }
  std::string sensor = options.sensor_name;
  if (sensor.empty()) {
    const std::string stem = lower(std::filesystem::path(path).stem().string());
    sensor = stem.find("gyro") != std::string::npos ? "gyroscope" : "accelerometer";
  }
  const auto& acts = hhar_activities();
  std::vector<Row> rows;
  std::string line;
  std::size_t line_no = 1;
  const std::size_t need = static_cast<std::size_t>(std::max({t_col, u_col, d_col, g_col, x_col, y_col, z_col})) + 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto f = split(line, ',');
    if (f.size() < need) throw SchemaError(path + ": line " + std::to_string(line_no) + " has too few columns");
    if (!options.device.empty() && f[d_col] != options.device) continue;
    Row r;
    r.user = f[u_col];
    r.device = f[d_col];
    r.time = to_double(f[t_col], "timestamp", line_no) * t_scale;
    const std::string gt = lower(f[g_col]);
    if (!gt.empty() && gt != "null") {
      const auto it = std::find(acts.begin(), acts.end(), gt);
      if (it == acts.end()) throw SchemaError(path + ": line " + std::to_string(line_no) + ": unknown activity '" + gt + "'");
      r.label = static_cast<int>(it - acts.begin());
    }
    r.values = {static_cast<float>(to_double(f[x_col], "x", line_no)),
                static_cast<float>(to_double(f[y_col], "y", line_no)),
                static_cast<float>(to_double(f[z_col], "z", line_no))};
    rows.push_back(std::move(r));
  }
  return segment_rows(std::move(rows), {{sensor, {0, 1, 2}}}, acts, 0.0, options.max_gap_seconds);
}

std::vector<RawRecording> ingest_mhealth(const std::string& path, const IngestOptions& options) {
  constexpr double kRate = 50.0;
  constexpr std::size_t kColumns = 24;
  // 1-based column numbers of the published log layout.
  const std::map<std::string, std::array<std::size_t, 3>> kLocations{
      {"ankle", {6, 9, 12}},  // acc 6-8, gyro 9-11, mag 12-14
      {"arm", {15, 18, 21}},  // acc 15-17, gyro 18-20, mag 21-23
  };
  const auto loc = kLocations.find(lower(options.mhealth_location));
  if (loc == kLocations.end()) throw ConfigError("unknown MHEALTH location '" + options.mhealth_location + "'");
  // Raw label -> class index; the five exercise labels outside the
  // seven-class set (6, 7, 8, 11, 12) and the null label 0 are dropped.
  const std::map<int, int> kLabelMap{{1, 0}, {2, 1}, {3, 2}, {4, 3}, {5, 4}, {9, 5}, {10, 6}};

  std::string user = options.user_id;
  if (user.empty()) {
    static const std::regex kSubject(R"((subject\d+))", std::regex::icase);
    std::smatch m;
    const std::string stem = std::filesystem::path(path).stem().string();
    user = std::regex_search(stem, m, kSubject) ? lower(m[1].str()) : stem;
  }
  std::ifstream in = open_input(path);
  std::vector<Row> rows;
  std::string line;
  std::size_t line_no = 0, index = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto f = split_ws(line);
    if (f.empty()) continue;
    if (f.size() < kColumns) {
      throw SchemaError(path + ": line " + std::to_string(line_no) + " is missing column " +
                        std::to_string(f.size() + 1) + (f.size() + 1 == kColumns ? " (label)" : ""));
    }
    Row r;
    r.user = user;
    r.time = static_cast<double>(index++) / kRate;
    r.values.resize(kColumns - 1);
    for (std::size_t c = 0; c + 1 < kColumns; ++c) {
      r.values[c] = static_cast<float>(to_double(f[c], "column " + std::to_string(c + 1), line_no));
    }
    const int raw = static_cast<int>(to_double(f[kColumns - 1], "label", line_no));
    const auto it = kLabelMap.find(raw);
    r.label = it == kLabelMap.end() ? -1 : it->second;
    rows.push_back(std::move(r));
  }
  const auto [acc, gyro, mag] = loc->second;
  const std::vector<StreamLayout> layout{
      {"accelerometer", {acc - 1, acc, acc + 1}},
      {"gyroscope", {gyro - 1, gyro, gyro + 1}},
      {"magnetometer", {mag - 1, mag, mag + 1}},
      {"ecg", {3, 4}},
  };
  return segment_rows(std::move(rows), layout, mhealth_activities(), kRate, 1.5 / kRate);
}

std::vector<RawRecording> ingest_generic(const std::string& path, const IngestOptions& options) {
  const std::string schema_path = path + ".schema.json";
  std::ifstream sin(schema_path);
  if (!sin) throw SchemaError(path + ": generic schema needs sidecar " + schema_path);
  nlohmann::json schema;
  try {
    schema = nlohmann::json::parse(sin);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(schema_path + ": " + e.what());
  }
  const std::string delim = schema.value("delimiter", ",");
  const std::string user_col = schema.value("user_column", "user");
  const std::string label_col = schema.value("label_column", "label");
  const std::string time_col = schema.value("timestamp_column", "");
  const double time_scale = schema.value("timestamp_scale", 1.0);
  const double rate = schema.value("sample_rate_hz", 0.0);
  std::vector<std::string> nulls = schema.value("null_labels", std::vector<std::string>{"", "null"});
  std::vector<std::string> activities = schema.value("activity_set", std::vector<std::string>{});
  const bool open_set = activities.empty();
  if (time_col.empty() && !(rate > 0.0)) {
    throw SchemaError(schema_path + ": needs timestamp_column or a positive sample_rate_hz");
  }
  if (!schema.contains("sensors") || !schema["sensors"].is_array() || schema["sensors"].empty()) {
    throw SchemaError(schema_path + ": 'sensors' must list at least one sensor");
  }

  std::ifstream in = open_input(path);
  std::string header;
  if (!std::getline(in, header) || trim(header).empty()) return {};
  const auto cols = split(header, delim.empty() ? ',' : delim[0]);
  auto col = [&](const std::string& name) {
    const auto it = std::find(cols.begin(), cols.end(), name);
    if (it == cols.end()) throw SchemaError(path + ": missing column '" + name + "'");
    return static_cast<std::size_t>(it - cols.begin());
  };
  const std::size_t u = col(user_col), l = col(label_col);
  const std::size_t t = time_col.empty() ? 0 : col(time_col);
  std::vector<StreamLayout> layout;
  std::vector<std::size_t> value_cols;
  for (const auto& s : schema["sensors"]) {
    StreamLayout sl;
    sl.name = s.at("name").get<std::string>();
    for (const auto& c : s.at("columns")) {
      sl.value_index.push_back(value_cols.size());
      value_cols.push_back(col(c.get<std::string>()));
    }
    layout.push_back(std::move(sl));
  }
  std::vector<Row> rows;
  std::map<std::string, std::size_t> per_user_index;
  std::string line;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto f = split(line, delim.empty() ? ',' : delim[0]);
    if (f.size() < cols.size()) throw SchemaError(path + ": line " + std::to_string(line_no) + " has too few columns");
    Row r;
    r.user = f[u];
    r.time = time_col.empty() ? static_cast<double>(per_user_index[r.user]++) / rate
                              : to_double(f[t], time_col, line_no) * time_scale;
    const std::string& lab = f[l];
    if (std::find(nulls.begin(), nulls.end(), lab) == nulls.end()) {
      auto it = std::find(activities.begin(), activities.end(), lab);
      if (it == activities.end()) {
        if (!open_set) throw SchemaError(path + ": line " + std::to_string(line_no) + ": unknown activity '" + lab + "'");
        activities.push_back(lab);
        it = activities.end() - 1;
      }
      r.label = static_cast<int>(it - activities.begin());
    }
    for (std::size_t c : value_cols) r.values.push_back(static_cast<float>(to_double(f[c], cols[c], line_no)));
    rows.push_back(std::move(r));
  }
  return segment_rows(std::move(rows), layout, activities, rate, options.max_gap_seconds);
}

}  // namespace

const SensorStream& RawRecording::stream(const std::string& name) const {
  for (const auto& s : streams) {
    if (s.name == name) return s;
  }
  throw ConfigError("recording of user '" + user_id + "' has no stream '" + name + "'");
}

CsvSchema parse_schema(const std::string& name) {
  const std::string n = lower(name);
  if (n == "hhar") return CsvSchema::kHhar;
  if (n == "mhealth") return CsvSchema::kMhealth;
  if (n == "generic") return CsvSchema::kGeneric;
  throw ConfigError("unknown CSV schema '" + name + "' (expected HHAR, MHEALTH or generic)");
}

std::vector<RawRecording> ingest_csv(const std::string& path, CsvSchema schema, const IngestOptions& options) {
  switch (schema) {
    case CsvSchema::kHhar: return ingest_hhar(path, options);
    case CsvSchema::kMhealth: return ingest_mhealth(path, options);
    case CsvSchema::kGeneric: return ingest_generic(path, options);
  }
  return {};
}

std::vector<RawRecording> merge_sensor_recordings(const std::vector<std::vector<RawRecording>>& per_sensor) {
  if (per_sensor.empty()) return {};
  auto span = [](const RawRecording& r) {
    return std::pair{r.label_times.front(), r.label_times.back()};
  };
  std::vector<RawRecording> out;
  for (const RawRecording& base : per_sensor.front()) {
    RawRecording merged = base;
    bool complete = true;
    const auto [b0, b1] = span(base);
    for (std::size_t s = 1; s < per_sensor.size() && complete; ++s) {
      const RawRecording* best = nullptr;
      double best_overlap = 0.0;
      for (const RawRecording& cand : per_sensor[s]) {
        if (cand.user_id != base.user_id || cand.source != base.source) continue;
        const auto [c0, c1] = span(cand);
        const double overlap = std::min(b1, c1) - std::max(b0, c0);
        if (overlap > best_overlap) {
          best_overlap = overlap;
          best = &cand;
        }
      }
      if (best == nullptr) {
        complete = false;
      } else {
        merged.streams.insert(merged.streams.end(), best->streams.begin(), best->streams.end());
      }
    }
    if (complete) out.push_back(std::move(merged));
  }
  return out;
}

}  // namespace umsnet
