#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "deva/tensor.hpp"

namespace deva::testing {

// Hand-rolled generators: a fixed-seed engine plus shape / value helpers.
class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  std::size_t index(std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng_);
  }
  bool coin(double p = 0.5) { return std::bernoulli_distribution(p)(rng_); }

  std::vector<double> values(std::size_t n, double scale = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = uniform(-scale, scale);
    return v;
  }

  template <typename T = double>
  Tensor<T> tensor(Shape shape, double scale = 1.0, bool requires_grad = false) {
    const auto v = values(shape_numel(shape), scale);
    return Tensor<T>::from(std::move(shape), std::vector<T>(v.begin(), v.end()), requires_grad);
  }

  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

template <typename T>
std::vector<double> to_vec(const Tensor<T>& t) {
  return std::vector<double>(t.data().begin(), t.data().end());
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace deva::testing
