#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace nlcs {

using Seed = std::uint64_t;

/// SplitMix64 finalizer. Stable across platforms and releases; used for
/// every seed derivation so that published seeds stay citable.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

constexpr Seed derive_seed(Seed base, std::uint64_t a) noexcept {
  return mix64(mix64(base) ^ mix64(a + 0x632be59bd9b4e019ULL));
}

constexpr Seed derive_seed(Seed base, std::uint64_t a, std::uint64_t b) noexcept {
  return derive_seed(derive_seed(base, a), b);
}

/// Sub-stream for a named purpose ("signal", "matrix", "dither", ...).
constexpr Seed derive_seed(Seed base, std::string_view tag) noexcept {
  return derive_seed(base, fnv1a(tag));
}

constexpr Seed derive_seed(Seed base, std::string_view tag, std::uint64_t a) noexcept {
  return derive_seed(derive_seed(base, tag), a);
}

using Rng = std::mt19937_64;

inline Rng make_rng(Seed seed) { return Rng{seed}; }

}  // namespace nlcs
