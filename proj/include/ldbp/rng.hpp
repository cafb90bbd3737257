#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace ldbp {

// splitmix64 finalizer
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Derives an independent seed from a base seed and a list of keys, so that
/// random streams depend only on (seed, keys) and never on evaluation order.
constexpr std::uint64_t keyed_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
  std::uint64_t h = mix64(seed);
  for (auto k : keys) h = mix64(h ^ mix64(k + 0x632be59bd9b4e019ULL));
  return h;
}

using Rng = std::mt19937_64;

inline Rng keyed_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
  return Rng(keyed_seed(seed, keys));
}

}  // namespace ldbp
