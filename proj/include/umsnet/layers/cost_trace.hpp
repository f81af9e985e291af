#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace umsnet {

// One row of a symbolic forward pass: what a layer owns and what it costs.
// mult_adds counts multiply-accumulates (one MAC = 1); norms, activations
// and elementwise scaling contribute 0.
struct CostRow {
  std::string layer;
  std::string kind;
  std::int64_t params = 0;
  std::int64_t mult_adds = 0;
  // Convolutions only: weight elements (no bias) and the count a dense
  // (groups = 1) convolution of the same shape would need.
  std::int64_t weights = 0;
  std::int64_t dense_weights = 0;
};

class CostTrace {
 public:
  void add(CostRow row) { rows_.push_back(std::move(row)); }
  const std::vector<CostRow>& rows() const { return rows_; }

  std::int64_t total_params() const {
    std::int64_t n = 0;
    for (const auto& r : rows_) n += r.params;
    return n;
  }
  std::int64_t total_mult_adds() const {
    std::int64_t n = 0;
    for (const auto& r : rows_) n += r.mult_adds;
    return n;
  }

 private:
  std::vector<CostRow> rows_;
};

}  // namespace umsnet
