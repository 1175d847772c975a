#ifndef RVS_RANDOM_HPP
#define RVS_RANDOM_HPP

#include <cstdint>
#include <random>

#include "rvs/tensor.hpp"

namespace rvs {

using Rng = std::mt19937_64;

/// splitmix64 finaliser; used to derive independent stream seeds.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

template <typename T>
Tensor<T> normal_tensor(const Shape& shape, Rng& rng, double stddev = 1.0) {
  Tensor<T> out(shape);
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : out.data()) v = T(dist(rng));
  return out;
}

template <typename T>
Tensor<T> uniform_tensor(const Shape& shape, Rng& rng, double lo, double hi) {
  Tensor<T> out(shape);
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : out.data()) v = T(dist(rng));
  return out;
}

}  // namespace rvs

#endif  // RVS_RANDOM_HPP
