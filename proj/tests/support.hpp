#pragma once

#include <unistd.h>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "umsnet/numerics/autograd.hpp"
#include "umsnet/numerics/rng.hpp"

namespace umsnet::test {

template <typename T>
Tensor<T> random_tensor(const Shape& shape, Rng& rng, double scale = 1.0) {
  Tensor<T> t(shape);
  for (T& v : t.data()) v = static_cast<T>(rng.normal() * scale);
  return t;
}

// Small integers: products and sums stay exact in any order.
template <typename T>
Tensor<T> integer_tensor(const Shape& shape, Rng& rng, int lo = -4, int hi = 4) {
  Tensor<T> t(shape);
  for (T& v : t.data()) v = static_cast<T>(lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1))));
  return t;
}

// Fixed random weighting so that sum(w * y) exercises every output element.
template <typename T>
Var<T> weighted_sum(const Var<T>& y, std::uint64_t seed = 99) {
  Rng rng(seed);
  Tensor<T> w = random_tensor<T>(y.shape(), rng);
  Var<T> wv = y.tape().constant(std::move(w));
  Tensor<T> prod(y.shape());
  for (std::size_t i = 0; i < prod.size(); ++i) prod[i] = y.value()[i] * wv.value()[i];
  T total = 0;
  for (T v : prod.data()) total += v;
  return y.tape().record(Tensor<T>::scalar(total), {y}, [y, wv](Tape<T>& t, const Tensor<T>& g) {
    auto gy = t.grad(y).data();
    const auto wd = wv.value().data();
    for (std::size_t i = 0; i < gy.size(); ++i) gy[i] += g.item() * wd[i];
  });
}

inline std::filesystem::path temp_dir(const std::string& tag) {
  auto dir = std::filesystem::temp_directory_path() / ("umsnet_test_" + tag + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace umsnet::test
