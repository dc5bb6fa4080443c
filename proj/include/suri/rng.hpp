#pragma once

// Platform-stable random helpers. std::uniform_int_distribution and
// std::shuffle are implementation-defined, so seeded outputs that end up in
// files go through these instead.

#include <algorithm>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace suri {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Derives an independent stream seed for item `index` of a seeded run.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  return splitmix64(seed ^ splitmix64(index + 0x632BE59BD9B4E019ULL));
}

/// Uniform integer in [0, n). Rejection sampling keeps it unbiased.
inline std::uint64_t uniform_below(Rng& rng, std::uint64_t n) {
  if (n <= 1) return 0;
  const std::uint64_t limit = (~std::uint64_t{0}) - ((~std::uint64_t{0}) % n);
  std::uint64_t draw;
  do {
    draw = rng();
  } while (draw >= limit);
  return draw % n;
}

/// Uniform double in [0, 1) with 53 random bits.
inline double uniform_unit(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform_range(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform_unit(rng);
}

template <typename T>
void stable_shuffle(std::vector<T>& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform_below(rng, i));
    using std::swap;
    swap(items[i - 1], items[j]);
  }
}

/// k distinct indices from [0, n), returned in ascending order.
inline std::vector<std::size_t> sample_sorted_indices(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i] = i;
  // Partial Fisher-Yates over the first k slots.
  for (std::size_t i = 0; i < k && i < n; ++i) {
    const auto j = i + static_cast<std::size_t>(uniform_below(rng, n - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(std::min(k, n));
  std::sort(pool.begin(), pool.end());
  return pool;
}

}  // namespace suri
