#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "nc_oracle.hpp"
#include "support.hpp"
#include "umsnet/data/container.hpp"
#include "umsnet/data/dataset.hpp"
#include "umsnet/errors.hpp"

using namespace umsnet;
namespace fs = std::filesystem;

namespace {

RawRecording uniform_recording(const std::string& user, std::vector<std::vector<float>> channels, double hz,
                               std::vector<int> labels, std::size_t num_classes = 2) {
  RawRecording r;
  r.user_id = user;
  const std::size_t n = channels.front().size();
  SensorStream s;
  s.name = "acc";
  s.sample_rate_hz = hz;
  for (std::size_t i = 0; i < n; ++i) s.timestamps.push_back(static_cast<double>(i) / hz);
  s.channels = std::move(channels);
  r.label_times = s.timestamps;
  r.streams.push_back(std::move(s));
  r.labels = std::move(labels);
  for (std::size_t k = 0; k < num_classes; ++k) r.activity_set.push_back("a" + std::to_string(k));
  return r;
}

RawRecording ramp_recording(const std::string& user, std::size_t n, int label = 0) {
  std::vector<float> x(n), y(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = static_cast<float>(i);
    y[i] = -static_cast<float>(i) * 0.5f;
  }
  return uniform_recording(user, {x, y}, 32.0, std::vector<int>(n, label));
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

SynthOptions small_synth() {
  SynthOptions o;
  o.num_users = 3;
  o.num_classes = 4;
  o.seconds_per_segment = 12.0;
  o.seed = 5;
  return o;
}

}  // namespace

TEST_CASE("resample") {
  const RawRecording mid = uniform_recording("u", {{0.0f, 2.0f}}, 1.0, {0, 1});
  const RawRecording up = resample(mid, 2.0);
  CHECK(up.streams[0].channels[0] == std::vector<float>{0, 1, 2});
  CHECK(up.label_times == std::vector<double>{0.0, 0.5, 1.0});
  CHECK(up.labels.front() == 0);
  CHECK(up.labels.back() == 1);

  const RawRecording ramp = ramp_recording("u", 40);
  const RawRecording same = resample(ramp, 32.0);
  CHECK(same.streams[0].channels == ramp.streams[0].channels);
  CHECK(same.labels == ramp.labels);

  Rng rng(3);
  std::vector<float> v(101);
  for (float& x : v) x = static_cast<float>(rng.normal());
  const RawRecording src = uniform_recording("u", {v}, 50.0, std::vector<int>(101, 0));
  const RawRecording dst = resample(src, 32.0);
  REQUIRE(dst.label_times.size() == 65);
  for (std::size_t i = 0; i < 65; ++i) {
    const double t = static_cast<double>(i) / 32.0;
    const auto hi = std::upper_bound(src.label_times.begin(), src.label_times.end(), t);
    std::size_t j = static_cast<std::size_t>(hi - src.label_times.begin());
    j = std::clamp<std::size_t>(j, 1, 100);
    const double t0 = src.label_times[j - 1], t1 = src.label_times[j];
    const double ref = v[j - 1] + (static_cast<double>(v[j]) - v[j - 1]) * (t - t0) / (t1 - t0);
    CHECK(std::abs(dst.streams[0].channels[0][i] - ref) < 1e-6);
  }
  CHECK(dst.streams[0].sample_rate_hz == 32.0);

  const RawRecording single = uniform_recording("u", {{1.0f}}, 1.0, {0});
  CHECK_THROWS_AS(resample(single, 2.0), ContractError);
  CHECK_THROWS_AS(resample(mid, 0.0), ConfigError);
}

TEST_CASE("window arithmetic") {
  for (auto [w, k] : {std::pair{1.5, 6ul}, {3.0, 12ul}, {6.0, 24ul}}) {
    WindowOptions o;
    o.window_seconds = w;
    CHECK(slices_per_window(o) == k);
    CHECK(samples_per_slice(o) == 8);
  }
  WindowOptions bad;
  bad.window_seconds = 1.6;
  CHECK_THROWS_AS(slices_per_window(bad), ConfigError);

  WindowOptions six;
  CHECK(window_and_slice(ramp_recording("u", 320), six).size() == 1);
  CHECK(window_and_slice(ramp_recording("u", 191), six).empty());
  WindowOptions overlap = six;
  overlap.stride_seconds = 3.0;
  CHECK(window_and_slice(ramp_recording("u", 320), overlap).size() == 2);
}

TEST_CASE("slicing round trip") {
  const RawRecording r = ramp_recording("u", 200);
  for (double w : {1.5, 3.0, 6.0}) {
    WindowOptions o;
    o.window_seconds = w;
    const auto samples = window_and_slice(r, o);
    const std::size_t k = slices_per_window(o), width = k * 8;
    REQUIRE(samples.size() == 200 / width);
    for (std::size_t n = 0; n < samples.size(); ++n) {
      const auto& s = samples[n];
      CHECK(s.num_slices == k);
      CHECK(s.window_seconds == w);
      CHECK(s.start_time == doctest::Approx(static_cast<double>(n * width) / 32.0));
      for (std::size_t c = 0; c < 2; ++c) {
        std::vector<float> joined;
        for (std::size_t sl = 0; sl < k; ++sl) {
          const auto* p = s.sensors[0].data() + (sl * 2 + c) * 8;
          joined.insert(joined.end(), p, p + 8);
        }
        const auto& src = r.streams[0].channels[c];
        CHECK(joined == std::vector<float>(src.begin() + static_cast<long>(n * width),
                                           src.begin() + static_cast<long>((n + 1) * width)));
      }
    }
  }
}

TEST_CASE("majority label") {
  auto labelled = [](std::vector<int> labels) {
    RawRecording r = ramp_recording("u", labels.size());
    r.labels = std::move(labels);
    r.activity_set = {"a", "b", "c"};
    return r;
  };
  WindowOptions o;
  o.window_seconds = 1.5;  // 48 samples
  std::vector<int> l(48, 0);
  std::fill(l.begin(), l.begin() + 30, 2);
  auto s = window_and_slice(labelled(l), o);
  REQUIRE(s.size() == 1);
  CHECK(s[0].label == 2);

  std::vector<int> half(48, 1);
  std::fill(half.begin(), half.begin() + 24, 0);
  CHECK(window_and_slice(labelled(half), o).size() == 1);

  std::vector<int> split3(48, 0);
  std::fill(split3.begin(), split3.begin() + 16, 1);
  std::fill(split3.begin() + 16, split3.begin() + 32, 2);
  CHECK(window_and_slice(labelled(split3), o).empty());

  std::vector<int> unlabelled(48, -1);
  std::fill(unlabelled.begin(), unlabelled.begin() + 20, 1);
  CHECK(window_and_slice(labelled(unlabelled), o).empty());
}

TEST_CASE("sample sets and splits") {
  const auto recs = synth_generate(small_synth());
  WindowOptions o;
  o.window_seconds = 3.0;
  const SampleSet set = build_sample_set(recs, o);
  CHECK(set.num_slices == 12);
  CHECK(set.sensors.size() == 2);
  CHECK(set.activity_set.size() == 4);
  CHECK(set.samples.size() == 3 * 4 * 4);
  for (const auto& s : set.samples) CHECK(s.num_slices == 12);
  const auto users = users_of(set.samples);
  CHECK(users == std::vector<std::string>{"user1", "user2", "user3"});

  for (const auto& u : users) {
    const DatasetSplit split = leave_one_user_out(set.samples, u);
    CHECK(split.held_out_user == u);
    CHECK(split.train.size() + split.test.size() == set.samples.size());
    for (const auto& s : split.test) CHECK(s.user_id == u);
    for (const auto& s : split.train) CHECK(s.user_id != u);
    CHECK(!split.test.empty());
  }
  try {
    leave_one_user_out(set.samples, "user9");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("user2") != std::string::npos);
  }
  std::vector<SlicedSample> one;
  for (const auto& s : set.samples)
    if (s.user_id == "user1") one.push_back(s);
  CHECK_THROWS_AS(leave_one_user_out(one, "user1"), ConfigError);

  auto mixed = recs;
  mixed[1].activity_set.push_back("extra");
  CHECK_THROWS_AS(build_sample_set(mixed, o), SchemaError);
}

TEST_CASE("user ordering is natural") {
  std::vector<RawRecording> recs{ramp_recording("user10", 48), ramp_recording("user2", 48),
                                 ramp_recording("user1", 48)};
  WindowOptions o;
  o.window_seconds = 1.5;
  CHECK(users_of(build_sample_set(recs, o).samples) == std::vector<std::string>{"user1", "user2", "user10"});
}

TEST_CASE("synthetic generator") {
  const auto a = synth_generate(small_synth());
  const auto b = synth_generate(small_synth());
  REQUIRE(a.size() == 12);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].user_id == b[i].user_id);
    CHECK(a[i].labels == b[i].labels);
    for (std::size_t s = 0; s < a[i].streams.size(); ++s) CHECK(a[i].streams[s].channels == b[i].streams[s].channels);
  }
  SynthOptions other = small_synth();
  other.seed = 6;
  CHECK(synth_generate(other)[0].streams[0].channels != a[0].streams[0].channels);

  SynthOptions clean = small_synth();
  clean.noise_sigma = 0.0;
  const auto c = synth_generate(clean);
  for (std::size_t k = 0; k < 4; ++k) {
    const RawRecording& u1 = c[k];
    const RawRecording& u2 = c[4 + k];
    REQUIRE(u1.labels.front() == u2.labels.front());
    double ratio = 0;
    for (std::size_t s = 0; s < u1.streams.size(); ++s)
      for (std::size_t ch = 0; ch < u1.streams[s].channel_count(); ++ch)
        for (std::size_t i = 0; i < u1.streams[s].length(); ++i) {
          const double x = u1.streams[s].channels[ch][i], y = u2.streams[s].channels[ch][i];
          if (std::abs(x) < 0.05) continue;
          if (ratio == 0) ratio = y / x;
          CHECK(std::abs(y - ratio * x) < 1e-5);
        }
    CHECK(ratio >= 0.8 / 1.2 - 1e-9);
    CHECK(ratio <= 1.2 / 0.8 + 1e-9);
  }
  CHECK_THROWS_AS(synth_generate([] {
                    SynthOptions o;
                    o.num_classes = 1;
                    return o;
                  }()),
                  ConfigError);
}

TEST_CASE("nearest-centroid oracle separates the synthetic classes") {
  SynthOptions o;
  o.num_users = 6;
  o.num_classes = 6;
  o.seconds_per_segment = 60.0;
  o.seed = 7;
  WindowOptions w;
  w.window_seconds = 6.0;
  const auto per_user = test::nearest_centroid_loocv(build_sample_set(synth_generate(o), w));
  double mean = 0;
  for (const auto& [u, acc] : per_user) mean += acc;
  mean /= static_cast<double>(per_user.size());
  CHECK(mean > 0.9);
}

TEST_CASE("channel statistics") {
  const auto recs = synth_generate(small_synth());
  WindowOptions o;
  o.window_seconds = 1.5;
  SampleSet set = build_sample_set(recs, o);
  const ChannelStats stats = compute_channel_stats(set.samples, set.sensors);
  apply_channel_stats(set.samples, set.sensors, stats);
  const ChannelStats after = compute_channel_stats(set.samples, set.sensors);
  for (std::size_t s = 0; s < set.sensors.size(); ++s)
    for (std::size_t c = 0; c < set.sensors[s].channels; ++c) {
      CHECK(std::abs(after.mean[s][c]) < 1e-5);
      CHECK(after.stddev[s][c] == doctest::Approx(1.0).epsilon(1e-4));
    }
  ChannelStats wrong = stats;
  wrong.mean.pop_back();
  CHECK_THROWS_AS(apply_channel_stats(set.samples, set.sensors, wrong), ConfigError);
}

TEST_CASE("HHAR CSV ingestion") {
  const fs::path dir = test::temp_dir("hhar");
  write_file(dir / "phones_accelerometer.csv",
             "Index,Arrival_Time,timestamp,x,y,z,user,model,device,gt\n"
             "0,0,0.00,1,2,3,a,m,dev1,walk\n"
             "1,0,0.02,4,5,6,a,m,dev1,walk\n"
             "2,0,0.04,7,8,9,a,m,dev1,null\n"
             "3,0,0.06,1,1,1,b,m,dev2,sit\n");
  const auto recs = ingest_csv((dir / "phones_accelerometer.csv").string(), CsvSchema::kHhar);
  REQUIRE(recs.size() == 2);
  std::size_t total = 0;
  for (const auto& r : recs) total += r.labels.size();
  CHECK(total == 3);
  const RawRecording& a = recs[0].user_id == "a" ? recs[0] : recs[1];
  CHECK(a.labels.size() == 2);
  CHECK(a.streams.size() == 1);
  CHECK(a.streams[0].name == "accelerometer");
  CHECK(a.streams[0].channels[2] == std::vector<float>{3, 6});
  CHECK(a.activity_set == hhar_activities());
  CHECK(a.labels[0] == 3);

  IngestOptions only;
  only.device = "dev2";
  CHECK(ingest_csv((dir / "phones_accelerometer.csv").string(), CsvSchema::kHhar, only).size() == 1);

  write_file(dir / "phones_gyroscope.csv",
             "timestamp,x,y,z,user,device,gt\n0.00,0,0,0,a,dev1,walk\n0.02,1,1,1,a,dev1,walk\n");
  const auto gyro = ingest_csv((dir / "phones_gyroscope.csv").string(), CsvSchema::kHhar);
  REQUIRE(gyro.size() == 1);
  CHECK(gyro[0].streams[0].name == "gyroscope");
  const auto merged = merge_sensor_recordings({recs, gyro});
  REQUIRE(merged.size() == 1);
  CHECK(merged[0].user_id == "a");
  CHECK(merged[0].streams.size() == 2);

  write_file(dir / "missing.csv", "timestamp,x,y,user,device,gt\n0,1,2,a,d,walk\n");
  try {
    ingest_csv((dir / "missing.csv").string(), CsvSchema::kHhar);
    FAIL("expected SchemaError");
  } catch (const SchemaError& e) {
    CHECK(std::string(e.what()).find("'z'") != std::string::npos);
  }
  write_file(dir / "empty.csv", "");
  CHECK(ingest_csv((dir / "empty.csv").string(), CsvSchema::kHhar).empty());
  CHECK_THROWS_AS(parse_schema("wisdm"), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("MHEALTH ingestion") {
  const fs::path dir = test::temp_dir("mhealth");
  std::string text;
  const int labels[] = {0, 1, 1, 1, 6, 4, 4};
  for (int row = 0; row < 7; ++row) {
    for (int c = 1; c <= 23; ++c) text += std::to_string(c + 100 * row) + "\t";
    text += std::to_string(labels[row]) + "\n";
  }
  write_file(dir / "mHealth_subject3.log", text);
  const auto recs = ingest_csv((dir / "mHealth_subject3.log").string(), CsvSchema::kMhealth);
  REQUIRE(recs.size() == 2);
  CHECK(recs[0].user_id == "subject3");
  REQUIRE(recs[0].streams.size() == 4);
  std::vector<std::size_t> channels;
  for (const auto& s : recs[0].streams) channels.push_back(s.channel_count());
  CHECK(channels == std::vector<std::size_t>{3, 3, 3, 2});
  CHECK(recs[0].labels == std::vector<int>{0, 0, 0});
  CHECK(recs[1].labels == std::vector<int>{3, 3});
  CHECK(recs[0].activity_set == mhealth_activities());
  CHECK(recs[0].streams[3].channels[0][0] == 104.0f);   // ECG lead 1 is column 4
  CHECK(recs[0].streams[0].channels[0][0] == 115.0f);   // arm accelerometer x is column 15
  IngestOptions ankle;
  ankle.mhealth_location = "ankle";
  CHECK(ingest_csv((dir / "mHealth_subject3.log").string(), CsvSchema::kMhealth, ankle)[0]
            .streams[0]
            .channels[0][0] == 106.0f);
  write_file(dir / "short.log", "1 2 3\n");
  CHECK_THROWS_AS(ingest_csv((dir / "short.log").string(), CsvSchema::kMhealth), SchemaError);
  fs::remove_all(dir);
}

TEST_CASE("generic CSV ingestion") {
  const fs::path dir = test::temp_dir("generic");
  write_file(dir / "d.csv", "who;act;ax;ay;hr\nu1;run;1;2;60\nu1;run;3;4;61\nu1;;5;6;62\nu2;rest;7;8;63\n");
  write_file(dir / "d.csv.schema.json", R"({"delimiter": ";", "user_column": "who", "label_column": "act",
    "sample_rate_hz": 10, "sensors": [{"name": "acc", "columns": ["ax", "ay"]}, {"name": "heart", "columns": ["hr"]}]})");
  const auto recs = ingest_csv((dir / "d.csv").string(), CsvSchema::kGeneric);
  REQUIRE(recs.size() == 2);
  CHECK(recs[0].streams.size() == 2);
  CHECK(recs[0].streams[1].channels[0] == std::vector<float>{60, 61});
  CHECK(recs[0].activity_set == std::vector<std::string>{"run", "rest"});
  CHECK(recs[1].labels == std::vector<int>{1});

  write_file(dir / "nosidecar.csv", "a,b\n1,2\n");
  CHECK_THROWS_AS(ingest_csv((dir / "nosidecar.csv").string(), CsvSchema::kGeneric), SchemaError);
  write_file(dir / "bad.csv", "who,act,ax\nu1,run,1\n");
  write_file(dir / "bad.csv.schema.json",
             R"({"user_column": "who", "label_column": "act", "sample_rate_hz": 10,
                 "sensors": [{"name": "acc", "columns": ["ax", "ay"]}]})");
  try {
    ingest_csv((dir / "bad.csv").string(), CsvSchema::kGeneric);
    FAIL("expected SchemaError");
  } catch (const SchemaError& e) {
    CHECK(std::string(e.what()).find("'ay'") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("dataset container round trip and integrity") {
  const fs::path dir = test::temp_dir("umsd");
  DatasetFile file;
  file.recordings = synth_generate(small_synth());
  WindowOptions o;
  o.window_seconds = 1.5;
  file.samples = build_sample_set(file.recordings, o);
  file.info = {{"seed", 5}};
  const std::string path = (dir / "d.umsd").string();
  save_dataset(file, path);
  const DatasetFile back = load_dataset(path);
  REQUIRE(back.recordings.size() == file.recordings.size());
  for (std::size_t i = 0; i < back.recordings.size(); ++i) {
    CHECK(back.recordings[i].user_id == file.recordings[i].user_id);
    CHECK(back.recordings[i].labels == file.recordings[i].labels);
    CHECK(back.recordings[i].activity_set == file.recordings[i].activity_set);
    for (std::size_t s = 0; s < back.recordings[i].streams.size(); ++s)
      CHECK(back.recordings[i].streams[s].channels == file.recordings[i].streams[s].channels);
  }
  REQUIRE(back.samples.has_value());
  CHECK(back.samples->samples.size() == file.samples->samples.size());
  CHECK(back.samples->sensors == file.samples->sensors);
  for (std::size_t i = 0; i < back.samples->samples.size(); ++i) {
    CHECK(back.samples->samples[i].sensors == file.samples->samples[i].sensors);
    CHECK(back.samples->samples[i].label == file.samples->samples[i].label);
  }
  CHECK(back.info == file.info);

  const auto size = fs::file_size(path);
  fs::copy_file(path, dir / "t.umsd");
  fs::resize_file(dir / "t.umsd", size - 7);
  CHECK_THROWS_AS(load_dataset((dir / "t.umsd").string()), IntegrityError);
  {
    std::fstream f(dir / "d.umsd", std::ios::in | std::ios::out | std::ios::binary);
    f.put('X');
  }
  CHECK_THROWS_AS(load_dataset(path), IntegrityError);
  {
    std::fstream f(dir / "d.umsd", std::ios::in | std::ios::out | std::ios::binary);
    f.put('U');
    f.seekp(4);
    const char v[4] = {9, 0, 0, 0};
    f.write(v, 4);
  }
  CHECK_THROWS_AS(load_dataset(path), IntegrityError);
  CHECK_THROWS(load_dataset((dir / "absent.umsd").string()));
  fs::remove_all(dir);
}
