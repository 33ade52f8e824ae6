#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace equigraph {

// splitmix64, used both as a seed scrambler and as the counter-based
// generator backing dropout masks.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d4a2ca9da2a564ULL;
  return x ^ (x >> 31);
}

// Child seeds are derived by hashing (root, purpose) so adding a new
// consumer never perturbs existing streams.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view purpose) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (char c : purpose) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return splitmix64(root ^ h);
}

inline std::uint64_t derive_seed(std::uint64_t root, std::string_view purpose,
                                 std::uint64_t index) {
  return splitmix64(derive_seed(root, purpose) + 0x632be59bd9b4e019ULL * index);
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t root, std::string_view purpose,
                    std::uint64_t index = 0) {
  return Rng(derive_seed(root, purpose, index));
}

// Uniform double in [0,1) from a counter, bit-reproducible per (seed, counter).
inline double counter_uniform(std::uint64_t seed, std::uint64_t counter) {
  return static_cast<double>(splitmix64(seed ^ splitmix64(counter)) >> 11) *
         0x1.0p-53;
}

}  // namespace equigraph
