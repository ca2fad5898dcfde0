#pragma once

#include <cstdint>
#include <cstring>
#include <random>

#include "scfm/types.hpp"

namespace scfm {

using Rng = std::mt19937_64;

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Independent substream seed for (seed, stream).
inline constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(seed ^ splitmix64(stream + 0x632BE59BD9B4E019ULL));
}

inline std::uint64_t hash_double(double v) {
  if (v == 0.0) v = 0.0;  // fold -0.0
  std::uint64_t bits = 0;
  std::memcpy(&bits, &v, sizeof bits);
  return splitmix64(bits);
}

inline MatrixXd gaussian_matrix(Index rows, Index cols, double stddev, Rng& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  MatrixXd m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = stddev * nd(rng);
  return m;
}

}  // namespace scfm
