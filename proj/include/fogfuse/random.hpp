#pragma once

#include <cstdint>
#include <random>

namespace fogfuse {

/// splitmix64 finalizer.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derives an independent stream seed from a parent seed and a salt, so that
/// per-frame randomness does not depend on generation order.
inline std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t salt) {
  return mix64(parent ^ mix64(salt + 0x632be59bd9b4e019ULL));
}

using Rng = std::mt19937_64;

}  // namespace fogfuse
