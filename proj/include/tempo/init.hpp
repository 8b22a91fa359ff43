#pragma once

#include <cmath>
#include <random>

#include "tempo/tensor.hpp"

namespace tempo {

/// He-uniform: U(-sqrt(6 / fan_in), sqrt(6 / fan_in)).
inline Tensor kaiming_uniform(std::vector<std::size_t> shape, std::size_t fan_in, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

inline Tensor normal_init(std::vector<std::size_t> shape, double stddev, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

}  // namespace tempo
