#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "umsnet/data/dataset.hpp"

namespace umsnet {

inline constexpr char kDatasetMagic[4] = {'U', 'M', 'S', 'D'};
inline constexpr std::uint32_t kDatasetVersion = 1;

// Contents of a .umsd file. Recordings must be uniform (every stream at its
// sample_rate_hz, sharing the label timeline); windowed samples are optional
// and carry the window geometry they were cut with.
struct DatasetFile {
  std::vector<RawRecording> recordings;
  std::optional<SampleSet> samples;
  double slice_seconds = 0.25;
  double target_hz = 32.0;
  // Free-form provenance (generator options, source files, ...).
  nlohmann::json info = nlohmann::json::object();
};

// Layout: "UMSD", u32 version, u64 metadata length, metadata JSON (UTF-8),
// then little-endian float32 blocks in the order listed under "blocks".
// See docs/formats.md.
void save_dataset(const DatasetFile& data, const std::string& path);
// IntegrityError on bad magic, an unsupported version, or a size that
// disagrees with the metadata.
DatasetFile load_dataset(const std::string& path);

// Binary framing shared with the checkpoint format: magic, u32 version,
// u64 JSON length, JSON, payload.
struct FramedFile {
  std::uint32_t version = 0;
  nlohmann::json meta;
  std::vector<char> payload;
};
void write_framed(const std::string& path, const char (&magic)[4], std::uint32_t version, const nlohmann::json& meta,
                  const std::vector<char>& payload);
FramedFile read_framed(const std::string& path, const char (&magic)[4], const char* kind);

// Little-endian float payload helpers.
void append_le(std::vector<char>& out, const float* values, std::size_t n);
void append_le(std::vector<char>& out, const double* values, std::size_t n);

class PayloadReader {
 public:
  PayloadReader(const std::vector<char>& payload, std::string what) : data_(payload), what_(std::move(what)) {}
  // IntegrityError when fewer than n values remain.
  void read(float* out, std::size_t n);
  void read(double* out, std::size_t n);
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::size_t bytes) const;
  const std::vector<char>& data_;
  std::string what_;
  std::size_t pos_ = 0;
};

}  // namespace umsnet
