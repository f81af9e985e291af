#include <algorithm>
#include <cmath>
#include <cctype>
#include <numbers>

#include "umsnet/data/dataset.hpp"
#include "umsnet/errors.hpp"
#include "umsnet/numerics/rng.hpp"

namespace umsnet {

namespace {

std::size_t exact_ratio(double num, double den, const std::string& what) {
  const double r = num / den;
  const double rounded = std::round(r);
  if (rounded < 1.0 || std::abs(r - rounded) > 1e-9) {
    throw ConfigError(what + " must be a positive integer, got " + std::to_string(r));
  }
  return static_cast<std::size_t>(rounded);
}

bool is_uniform(const RawRecording& r, double hz) {
  if (r.streams.empty()) return false;
  for (const auto& s : r.streams) {
    if (s.sample_rate_hz != hz || s.length() != r.labels.size()) return false;
  }
  return true;
}

// Digit runs compare numerically so "user10" sorts after "user9".
bool natural_less(const std::string& a, const std::string& b) {
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (std::isdigit(static_cast<unsigned char>(a[i])) && std::isdigit(static_cast<unsigned char>(b[j]))) {
      std::size_t ie = i, je = j;
      while (ie < a.size() && std::isdigit(static_cast<unsigned char>(a[ie]))) ++ie;
      while (je < b.size() && std::isdigit(static_cast<unsigned char>(b[je]))) ++je;
      const std::string na = a.substr(i, ie - i), nb = b.substr(j, je - j);
      const auto sa = na.find_first_not_of('0'), sb = nb.find_first_not_of('0');
      const std::string ta = sa == std::string::npos ? "" : na.substr(sa);
      const std::string tb = sb == std::string::npos ? "" : nb.substr(sb);
      if (ta.size() != tb.size()) return ta.size() < tb.size();
      if (ta != tb) return ta < tb;
      i = ie;
      j = je;
    } else {
      if (a[i] != b[j]) return a[i] < b[j];
      ++i;
      ++j;
    }
  }
  return a.size() - i < b.size() - j;
}

}  // namespace

RawRecording resample(const RawRecording& recording, double target_hz) {
  if (!(target_hz > 0.0)) throw ConfigError("resample: target_hz must be positive");
  if (recording.streams.empty()) throw ContractError("resample: recording has no streams");
  double start = -INFINITY, end = INFINITY;
  for (const auto& s : recording.streams) {
    if (s.length() < 2) {
      throw ContractError("resample: stream '" + s.name + "' of user '" + recording.user_id +
                          "' has " + std::to_string(s.length()) + " sample(s); cannot interpolate");
    }
    start = std::max(start, s.timestamps.front());
    end = std::min(end, s.timestamps.back());
  }
  if (end < start) throw ContractError("resample: streams of user '" + recording.user_id + "' do not overlap");
  const auto n = static_cast<std::size_t>(std::floor((end - start) * target_hz + 1e-9)) + 1;

  RawRecording out;
  out.user_id = recording.user_id;
  out.source = recording.source;
  out.activity_set = recording.activity_set;
  out.label_times.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.label_times[i] = start + static_cast<double>(i) / target_hz;

  for (const auto& s : recording.streams) {
    SensorStream r;
    r.name = s.name;
    r.sample_rate_hz = target_hz;
    r.timestamps = out.label_times;
    r.channels.assign(s.channel_count(), std::vector<float>(n));
    std::size_t j = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double t = out.label_times[i];
      while (j + 2 < s.length() && s.timestamps[j + 1] <= t) ++j;
      const double t0 = s.timestamps[j], t1 = s.timestamps[j + 1];
      for (std::size_t c = 0; c < s.channel_count(); ++c) {
        const double v0 = s.channels[c][j], v1 = s.channels[c][j + 1];
        double v;
        if (std::abs(t - t0) < 1e-9) {
          v = v0;
        } else if (std::abs(t - t1) < 1e-9 || t1 <= t0) {
          v = v1;
        } else {
          v = v0 + (v1 - v0) * (t - t0) / (t1 - t0);
        }
        r.channels[c][i] = static_cast<float>(v);
      }
    }
    out.streams.push_back(std::move(r));
  }

  out.labels.resize(n);
  std::size_t j = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = out.label_times[i];
    while (j + 1 < recording.label_times.size() &&
           std::abs(recording.label_times[j + 1] - t) <= std::abs(recording.label_times[j] - t)) {
      ++j;
    }
    out.labels[i] = recording.labels[j];
  }
  return out;
}

std::size_t slices_per_window(const WindowOptions& o) {
  return exact_ratio(o.window_seconds, o.slice_seconds, "window_seconds / slice_seconds");
}

std::size_t samples_per_slice(const WindowOptions& o) {
  return exact_ratio(o.slice_seconds * o.target_hz, 1.0, "slice_seconds * target_hz");
}

std::vector<SlicedSample> window_and_slice(const RawRecording& recording, const WindowOptions& options) {
  const std::size_t k = slices_per_window(options);
  const std::size_t spl = samples_per_slice(options);
  const std::size_t width = k * spl;
  const std::size_t stride = options.stride_seconds > 0.0
                                 ? exact_ratio(options.stride_seconds * options.target_hz, 1.0, "stride samples")
                                 : width;
  const bool ready = is_uniform(recording, options.target_hz);
  RawRecording resampled;
  if (!ready) resampled = resample(recording, options.target_hz);
  const RawRecording& rec = ready ? recording : resampled;
  const std::size_t n = rec.labels.size();
  const std::size_t num_classes = rec.activity_set.size();

  std::vector<SlicedSample> out;
  for (std::size_t start = 0; start + width <= n; start += stride) {
    std::vector<std::size_t> counts(std::max<std::size_t>(num_classes, 1), 0);
    for (std::size_t i = start; i < start + width; ++i) {
      const int l = rec.labels[i];
      if (l < 0) continue;
      if (static_cast<std::size_t>(l) >= counts.size()) counts.resize(l + 1, 0);
      ++counts[l];
    }
    const auto best = std::max_element(counts.begin(), counts.end());
    if (*best * 2 < width) continue;
    SlicedSample s;
    s.label = static_cast<int>(best - counts.begin());
    s.user_id = rec.user_id;
    s.window_seconds = options.window_seconds;
    s.num_slices = k;
    s.start_time = rec.label_times[start];
    for (const auto& st : rec.streams) {
      const std::size_t nc = st.channel_count();
      std::vector<float> block(k * nc * spl);
      for (std::size_t sl = 0; sl < k; ++sl) {
        for (std::size_t c = 0; c < nc; ++c) {
          const float* src = st.channels[c].data() + start + sl * spl;
          std::copy(src, src + spl, block.begin() + (sl * nc + c) * spl);
        }
      }
      s.sensors.push_back(std::move(block));
    }
    out.push_back(std::move(s));
  }
  return out;
}

SampleSet build_sample_set(const std::vector<RawRecording>& recordings, const WindowOptions& options) {
  SampleSet set;
  set.num_slices = slices_per_window(options);
  set.window_seconds = options.window_seconds;
  const std::size_t spl = samples_per_slice(options);
  if (recordings.empty()) return set;
  const RawRecording& first = recordings.front();
  set.activity_set = first.activity_set;
  for (const auto& s : first.streams) set.sensors.push_back({s.name, s.channel_count(), spl});
  for (const auto& r : recordings) {
    if (r.activity_set != set.activity_set) {
      throw SchemaError("recording of user '" + r.user_id + "' has a different activity set");
    }
    if (r.streams.size() != set.sensors.size()) {
      throw SchemaError("recording of user '" + r.user_id + "' has " + std::to_string(r.streams.size()) +
                        " streams, expected " + std::to_string(set.sensors.size()));
    }
    for (std::size_t i = 0; i < r.streams.size(); ++i) {
      if (r.streams[i].name != set.sensors[i].name || r.streams[i].channel_count() != set.sensors[i].channels) {
        throw SchemaError("recording of user '" + r.user_id + "': stream " + std::to_string(i) + " is '" +
                          r.streams[i].name + "' with " + std::to_string(r.streams[i].channel_count()) +
                          " channels, expected '" + set.sensors[i].name + "' with " +
                          std::to_string(set.sensors[i].channels));
      }
    }
    auto w = window_and_slice(r, options);
    std::move(w.begin(), w.end(), std::back_inserter(set.samples));
  }
  std::stable_sort(set.samples.begin(), set.samples.end(), [](const SlicedSample& a, const SlicedSample& b) {
    if (a.user_id != b.user_id) return natural_less(a.user_id, b.user_id);
    return a.start_time < b.start_time;
  });
  return set;
}

std::vector<std::string> users_of(const std::vector<SlicedSample>& samples) {
  std::vector<std::string> users;
  for (const auto& s : samples) {
    if (std::find(users.begin(), users.end(), s.user_id) == users.end()) users.push_back(s.user_id);
  }
  std::sort(users.begin(), users.end(), natural_less);
  return users;
}

DatasetSplit leave_one_user_out(const std::vector<SlicedSample>& samples, const std::string& held_out_user) {
  const auto users = users_of(samples);
  if (std::find(users.begin(), users.end(), held_out_user) == users.end()) {
    std::string list;
    for (const auto& u : users) list += (list.empty() ? "" : ", ") + u;
    throw ConfigError("unknown user '" + held_out_user + "' (available: " + list + ")");
  }
  if (users.size() < 2) throw ConfigError("leave-one-user-out needs at least two users; training set would be empty");
  DatasetSplit split;
  split.held_out_user = held_out_user;
  for (const auto& s : samples) (s.user_id == held_out_user ? split.test : split.train).push_back(s);
  return split;
}

std::vector<RawRecording> synth_generate(const SynthOptions& o) {
  if (o.num_users == 0 || o.num_classes < 2) throw ConfigError("synth: need users >= 1 and classes >= 2");
  if (!(o.seconds_per_segment > 0.0) || !(o.sample_rate_hz > 0.0) || !(o.switch_seconds > 0.0)) {
    throw ConfigError("synth: seconds, switch interval and sample rate must be positive");
  }
  std::vector<SensorSpec> sensors = o.sensors;
  if (sensors.empty()) sensors = hhar_profile().sensors;
  const double two_pi = 2.0 * std::numbers::pi;
  const Rng root(o.seed);

  struct Wave {
    double freq = 0.0;
    std::vector<std::vector<double>> amp, phase;  // [sensor][channel]
  };
  // classes[k] holds one wave, or two that alternate every switch_seconds.
  std::vector<std::vector<Wave>> classes(o.num_classes);
  if (!o.long_horizon) {
    // Classes come in pairs sharing a frequency and amplitude pattern. The
    // second member is 1.5x louder and rotates across channels in the opposite
    // direction, so only the rotation separates the pair independently of the
    // per-user gain.
    const Rng crng = root.fork(0xC1A55);
    for (std::size_t k = 0; k < o.num_classes; ++k) {
      const std::size_t pair = k / 2, member = k % 2;
      Wave w;
      w.freq = 1.13 + 1.57 * static_cast<double>(pair);
      Rng prng = crng.fork(pair);
      for (const auto& spec : sensors) {
        std::vector<double> a(spec.channels), p(spec.channels);
        const double base = prng.uniform(0.0, two_pi);
        for (std::size_t c = 0; c < spec.channels; ++c) {
          a[c] = prng.uniform(0.6, 1.4) * (member == 0 ? 1.0 : 1.5);
          const double step = two_pi / 3.0 * static_cast<double>(c);
          p[c] = base + (member == 0 ? step : -step);
        }
        w.amp.push_back(std::move(a));
        w.phase.push_back(std::move(p));
      }
      classes[k].push_back(std::move(w));
    }
  } else {
    // Each class is an unordered pair of frequencies. Amplitude and phase
    // depend on the frequency only, so a single frequency segment cannot
    // separate the classes that share it.
    std::size_t nf = 2;
    while (nf * (nf - 1) / 2 < o.num_classes) ++nf;
    Rng frng = root.fork(0xF4E0);
    std::vector<Wave> tones(nf);
    for (std::size_t f = 0; f < nf; ++f) {
      tones[f].freq = 1.0 + 1.5 * static_cast<double>(f);
      for (const auto& spec : sensors) {
        std::vector<double> a(spec.channels), p(spec.channels);
        for (std::size_t c = 0; c < spec.channels; ++c) {
          a[c] = frng.uniform(0.6, 1.4);
          p[c] = frng.uniform(0.0, two_pi);
        }
        tones[f].amp.push_back(std::move(a));
        tones[f].phase.push_back(std::move(p));
      }
    }
    std::size_t k = 0;
    for (std::size_t a = 0; a < nf && k < o.num_classes; ++a)
      for (std::size_t b = a + 1; b < nf && k < o.num_classes; ++b) classes[k++] = {tones[a], tones[b]};
  }

  const auto n = static_cast<std::size_t>(std::llround(o.seconds_per_segment * o.sample_rate_hz));
  std::vector<double> times(n);
  for (std::size_t i = 0; i < n; ++i) times[i] = static_cast<double>(i) / o.sample_rate_hz;
  std::vector<std::string> activities;
  for (std::size_t k = 0; k < o.num_classes; ++k) activities.push_back("class" + std::to_string(k));

  std::vector<RawRecording> out;
  for (std::size_t u = 0; u < o.num_users; ++u) {
    const Rng urng = root.fork(0x05E5 + u);
    const double gain = Rng(urng).uniform(0.8, 1.2);
    for (std::size_t k = 0; k < o.num_classes; ++k) {
      Rng nrng = urng.fork(0x7000 + k);
      RawRecording r;
      r.user_id = "user" + std::to_string(u + 1);
      r.source = "synthetic";
      r.activity_set = activities;
      r.labels.assign(n, static_cast<int>(k));
      r.label_times = times;
      for (std::size_t s = 0; s < sensors.size(); ++s) {
        SensorStream st;
        st.name = sensors[s].name;
        st.sample_rate_hz = o.sample_rate_hz;
        st.timestamps = times;
        st.channels.assign(sensors[s].channels, std::vector<float>(n));
        r.streams.push_back(std::move(st));
      }
      // Sample-major so the noise stream order does not depend on layout.
      for (std::size_t i = 0; i < n; ++i) {
        const double t = times[i];
        const std::size_t seg = classes[k].size() == 1
                                    ? 0
                                    : static_cast<std::size_t>(std::floor(t / o.switch_seconds + 1e-9)) % 2;
        const Wave& w = classes[k][seg];
        for (std::size_t s = 0; s < sensors.size(); ++s) {
          for (std::size_t c = 0; c < sensors[s].channels; ++c) {
            double v = gain * w.amp[s][c] * std::sin(two_pi * w.freq * t + w.phase[s][c]);
            if (o.noise_sigma > 0.0) v += nrng.normal(0.0, o.noise_sigma);
            r.streams[s].channels[c][i] = static_cast<float>(v);
          }
        }
      }
      out.push_back(std::move(r));
    }
  }
  return out;
}

ChannelStats compute_channel_stats(const std::vector<SlicedSample>& samples, const std::vector<SensorSpec>& sensors) {
  ChannelStats stats;
  for (std::size_t s = 0; s < sensors.size(); ++s) {
    const std::size_t nc = sensors[s].channels, spl = sensors[s].samples_per_slice;
    std::vector<double> sum(nc, 0.0), sq(nc, 0.0);
    std::size_t count = 0;
    for (const auto& smp : samples) {
      const auto& block = smp.sensors.at(s);
      const std::size_t k = block.size() / (nc * spl);
      for (std::size_t sl = 0; sl < k; ++sl)
        for (std::size_t c = 0; c < nc; ++c)
          for (std::size_t i = 0; i < spl; ++i) sum[c] += block[(sl * nc + c) * spl + i];
      count += k * spl;
    }
    std::vector<double> mean(nc, 0.0), sd(nc, 1.0);
    if (count > 0) {
      for (std::size_t c = 0; c < nc; ++c) mean[c] = sum[c] / static_cast<double>(count);
      for (const auto& smp : samples) {
        const auto& block = smp.sensors[s];
        const std::size_t k = block.size() / (nc * spl);
        for (std::size_t sl = 0; sl < k; ++sl)
          for (std::size_t c = 0; c < nc; ++c)
            for (std::size_t i = 0; i < spl; ++i) {
              const double d = block[(sl * nc + c) * spl + i] - mean[c];
              sq[c] += d * d;
            }
      }
      for (std::size_t c = 0; c < nc; ++c) {
        const double v = std::sqrt(sq[c] / static_cast<double>(count));
        sd[c] = v > 1e-12 ? v : 1.0;
      }
    }
    stats.mean.push_back(std::move(mean));
    stats.stddev.push_back(std::move(sd));
  }
  return stats;
}

void apply_channel_stats(std::vector<SlicedSample>& samples, const std::vector<SensorSpec>& sensors,
                         const ChannelStats& stats) {
  if (stats.mean.size() != sensors.size() || stats.stddev.size() != sensors.size()) {
    throw ConfigError("normalisation statistics cover " + std::to_string(stats.mean.size()) + " sensors, data has " +
                      std::to_string(sensors.size()));
  }
  for (auto& smp : samples) {
    for (std::size_t s = 0; s < sensors.size(); ++s) {
      const std::size_t nc = sensors[s].channels, spl = sensors[s].samples_per_slice;
      if (stats.mean[s].size() != nc) throw ConfigError("normalisation statistics: channel count mismatch for '" + sensors[s].name + "'");
      auto& block = smp.sensors.at(s);
      const std::size_t k = block.size() / (nc * spl);
      for (std::size_t sl = 0; sl < k; ++sl)
        for (std::size_t c = 0; c < nc; ++c)
          for (std::size_t i = 0; i < spl; ++i) {
            float& v = block[(sl * nc + c) * spl + i];
            v = static_cast<float>((v - stats.mean[s][c]) / stats.stddev[s][c]);
          }
    }
  }
}

}  // namespace umsnet
