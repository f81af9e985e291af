#pragma once

#include <cmath>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "umsnet/data/dataset.hpp"

namespace umsnet::test {

// Per-channel DFT magnitude spectrum over the whole window, concatenated
// across sensors and channels.
inline std::vector<double> spectrum_features(const SlicedSample& s, const std::vector<SensorSpec>& sensors,
                                             std::size_t num_slices) {
  std::vector<double> f;
  for (std::size_t i = 0; i < sensors.size(); ++i) {
    const std::size_t C = sensors[i].channels, S = sensors[i].samples_per_slice, N = num_slices * S;
    std::vector<double> x(N);
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t k = 0; k < num_slices; ++k)
        for (std::size_t t = 0; t < S; ++t) x[k * S + t] = s.sensors[i][(k * C + c) * S + t];
      for (std::size_t b = 0; b <= N / 2; ++b) {
        double re = 0, im = 0;
        for (std::size_t n = 0; n < N; ++n) {
          const double a = 2.0 * std::numbers::pi * static_cast<double>(b * n) / static_cast<double>(N);
          re += x[n] * std::cos(a);
          im -= x[n] * std::sin(a);
        }
        f.push_back(std::hypot(re, im) / static_cast<double>(N));
      }
    }
  }
  return f;
}

// Leave-one-user-out nearest-centroid accuracy on spectrum features, per
// held-out user.
inline std::map<std::string, double> nearest_centroid_loocv(const SampleSet& set) {
  const std::size_t nc = set.activity_set.size();
  std::vector<std::vector<double>> feats;
  for (const auto& s : set.samples) feats.push_back(spectrum_features(s, set.sensors, set.num_slices));
  std::map<std::string, double> out;
  for (const auto& user : users_of(set.samples)) {
    std::vector<std::vector<double>> centroid(nc);
    std::vector<std::size_t> count(nc, 0);
    for (std::size_t i = 0; i < set.samples.size(); ++i) {
      const auto& s = set.samples[i];
      if (s.user_id == user) continue;
      auto& c = centroid[static_cast<std::size_t>(s.label)];
      if (c.empty()) c.assign(feats[i].size(), 0.0);
      for (std::size_t j = 0; j < c.size(); ++j) c[j] += feats[i][j];
      ++count[static_cast<std::size_t>(s.label)];
    }
    for (std::size_t k = 0; k < nc; ++k)
      for (double& v : centroid[k]) v /= static_cast<double>(count[k]);
    std::size_t hits = 0, total = 0;
    for (std::size_t i = 0; i < set.samples.size(); ++i) {
      const auto& s = set.samples[i];
      if (s.user_id != user) continue;
      std::size_t best = 0;
      double best_d = INFINITY;
      for (std::size_t k = 0; k < nc; ++k) {
        if (centroid[k].empty()) continue;
        double d = 0;
        for (std::size_t j = 0; j < feats[i].size(); ++j) d += std::pow(feats[i][j] - centroid[k][j], 2);
        if (d < best_d) {
          best_d = d;
          best = k;
        }
      }
      hits += best == static_cast<std::size_t>(s.label);
      ++total;
    }
    out[user] = static_cast<double>(hits) / static_cast<double>(total);
  }
  return out;
}

}  // namespace umsnet::test
