#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Core>

namespace msip {

using Rng = std::mt19937_64;

/// splitmix64 finalizer.
inline std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Counter-based stream key: the same (seed, counter) pair always yields the
/// same sub-stream, independent of evaluation order elsewhere.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t counter,
                                 std::uint64_t salt = 0) noexcept {
  return mix64(mix64(seed ^ mix64(salt)) + counter);
}

template <class Derived>
void fill_standard_normal(Eigen::DenseBase<Derived>& out, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index i = 0; i < out.rows(); ++i)
    for (Eigen::Index j = 0; j < out.cols(); ++j) out(i, j) = normal(rng);
}

}  // namespace msip
