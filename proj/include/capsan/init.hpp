#pragma once

#include <random>

#include "capsan/tensor.hpp"

namespace capsan {

// Uniform double in [0,1) built from the top 53 bits, so streams are identical
// across standard library implementations.
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline Tensor xavier_uniform(const Shape& shape, int fan_in, int fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  std::vector<double> data(shape_numel(shape));
  for (double& v : data) v = limit * (2.0 * uniform01(rng) - 1.0);
  return Tensor::from_data(shape, std::move(data), true);
}

}  // namespace capsan
