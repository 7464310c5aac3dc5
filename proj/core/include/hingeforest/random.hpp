#pragma once

#include <cstdint>
#include <random>

#include "hingeforest/tensor.hpp"

namespace hingeforest {

using Rng = std::mt19937_64;

// Derives an independent stream from a run seed and a stream tag so that
// layers can be initialized without sharing a single sequential engine.
inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return Rng(seq);
}

// Samples are drawn in double precision and then rounded so that float and
// double builds from the same seed hold the same values up to rounding.
template <typename T>
void fill_normal(Tensor<T>& tensor, Rng& rng, double mean, double stddev) {
  std::normal_distribution<double> dist(mean, stddev);
  for (T& v : tensor.values()) v = static_cast<T>(dist(rng));
}

template <typename T>
void fill_uniform(Tensor<T>& tensor, Rng& rng, double low, double high) {
  std::uniform_real_distribution<double> dist(low, high);
  for (T& v : tensor.values()) v = static_cast<T>(dist(rng));
}

}  // namespace hingeforest
