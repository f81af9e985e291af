#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "umsnet/model/config.hpp"

namespace umsnet {

struct SensorStream {
  std::string name;
  // Nominal rate; streams produced by resample() or the generator are
  // uniform at this rate.
  double sample_rate_hz = 0.0;
  std::vector<double> timestamps;            // seconds, non-decreasing
  std::vector<std::vector<float>> channels;  // channels x samples

  std::size_t length() const { return timestamps.size(); }
  std::size_t channel_count() const { return channels.size(); }
};

// One user's continuous capture: labelled activity over a shared timeline.
struct RawRecording {
  std::string user_id;
  std::string source;  // device or file tag
  std::vector<SensorStream> streams;
  std::vector<double> label_times;
  std::vector<int> labels;  // indices into activity_set
  std::vector<std::string> activity_set;

  const SensorStream& stream(const std::string& name) const;
};

// One classification instance. sensors[i] holds K * channels_i * S values
// laid out [slice][channel][sample].
struct SlicedSample {
  std::vector<std::vector<float>> sensors;
  int label = 0;
  std::string user_id;
  double window_seconds = 0.0;
  std::size_t num_slices = 0;
  double start_time = 0.0;
};

struct DatasetSplit {
  std::vector<SlicedSample> train;
  std::vector<SlicedSample> test;
  std::string held_out_user;
};

// A windowed dataset plus the geometry every sample shares.
struct SampleSet {
  std::vector<SensorSpec> sensors;
  std::vector<std::string> activity_set;
  std::size_t num_slices = 0;
  double window_seconds = 0.0;
  std::vector<SlicedSample> samples;
};

// --------------------------------------------------------------- ingestion

enum class CsvSchema { kHhar, kMhealth, kGeneric };
CsvSchema parse_schema(const std::string& name);

inline const std::vector<std::string>& hhar_activities() {
  static const std::vector<std::string> kSet{"bike", "sit", "stand", "walk", "stairsup", "stairsdown"};
  return kSet;
}
inline const std::vector<std::string>& mhealth_activities() {
  static const std::vector<std::string> kSet{"standing", "sitting", "lying", "walking",
                                             "climbing_stairs", "cycling", "jogging"};
  return kSet;
}

struct IngestOptions {
  // HHAR: stream name; empty derives "accelerometer"/"gyroscope" from the file name.
  std::string sensor_name;
  // HHAR: keep only rows of this device (empty keeps all).
  std::string device;
  // MHEALTH: subject id; empty derives it from the file name.
  std::string user_id;
  // MHEALTH: body location for accelerometer/gyroscope/magnetometer ("arm" or "ankle").
  std::string mhealth_location = "arm";
  // HHAR/generic: a gap larger than this (seconds) ends a segment.
  double max_gap_seconds = 1.0;
};

// Column layouts are documented in docs/formats.md. Unlabelled rows are
// dropped; one recording is emitted per (user, device, contiguous labelled
// run). An empty file yields an empty list.
std::vector<RawRecording> ingest_csv(const std::string& path, CsvSchema schema,
                                     const IngestOptions& options = {});

// Joins single-stream recordings of the same user/source that overlap in
// time (e.g. HHAR accelerometer + gyroscope files). Labels come from the
// first list. Recordings without a partner in every list are dropped.
std::vector<RawRecording> merge_sensor_recordings(const std::vector<std::vector<RawRecording>>& per_sensor);

// --------------------------------------------------------------- pipeline

// Linear interpolation of every stream onto a uniform grid at target_hz over
// the time span all streams cover; labels by nearest timestamp.
RawRecording resample(const RawRecording& recording, double target_hz);

struct WindowOptions {
  double window_seconds = 6.0;
  double slice_seconds = 0.25;
  double target_hz = 32.0;
  double stride_seconds = 0.0;  // 0 = window_seconds (non-overlapping)
};

std::size_t slices_per_window(const WindowOptions& options);
std::size_t samples_per_slice(const WindowOptions& options);

// Cuts windows of K slices from a recording (resampled first unless it is
// already uniform at target_hz). A window is labelled by its most frequent
// label and dropped unless that label covers at least half of it.
std::vector<SlicedSample> window_and_slice(const RawRecording& recording, const WindowOptions& options);

// Windows every recording; samples ordered by user, then time.
SampleSet build_sample_set(const std::vector<RawRecording>& recordings, const WindowOptions& options);

std::vector<std::string> users_of(const std::vector<SlicedSample>& samples);

DatasetSplit leave_one_user_out(const std::vector<SlicedSample>& samples, const std::string& held_out_user);

// --------------------------------------------------------------- synthetic data

struct SynthOptions {
  std::size_t num_users = 9;
  std::size_t num_classes = 6;
  std::vector<SensorSpec> sensors;  // channels used; samples_per_slice ignored
  double seconds_per_segment = 60.0;
  std::uint64_t seed = 0;
  double noise_sigma = 0.1;
  double sample_rate_hz = 32.0;
  // Classes alternate between two frequencies every switch_seconds; any
  // window shorter than a full switch cycle sees only part of the pattern.
  bool long_horizon = false;
  double switch_seconds = 3.0;
};

// Per user, one recording per class ("user<k>", activities "class<c>").
// Class c drives every channel with class-specific sinusoids (frequency,
// per-channel phase and amplitude); each user scales everything by a gain
// in [0.8, 1.2]; N(0, noise_sigma) is added per sample.
std::vector<RawRecording> synth_generate(const SynthOptions& options);

// --------------------------------------------------------------- normalisation

// Per-sensor, per-channel z-score statistics.
struct ChannelStats {
  std::vector<std::vector<double>> mean;
  std::vector<std::vector<double>> stddev;
};

ChannelStats compute_channel_stats(const std::vector<SlicedSample>& samples, const std::vector<SensorSpec>& sensors);
void apply_channel_stats(std::vector<SlicedSample>& samples, const std::vector<SensorSpec>& sensors,
                         const ChannelStats& stats);

}  // namespace umsnet
