#pragma once

#include <cstdint>
#include <cstring>
#include <random>
#include <span>

namespace cfx {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Child stream seeds are a pure function of (parent, stream), so the order in
// which streams are created never matters.
inline std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t stream) {
  return splitmix64(splitmix64(parent) ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
}

template <class... Streams>
std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t stream, Streams... rest) {
  return derive_seed(derive_seed(parent, stream), static_cast<std::uint64_t>(rest)...);
}

inline Rng make_rng(std::uint64_t seed) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  return Rng(seq);
}

inline std::uint64_t hash_values(std::span<const double> values, std::uint64_t salt = 0) {
  std::uint64_t h = splitmix64(salt ^ values.size());
  for (double v : values) {
    if (v == 0.0) v = 0.0;  // fold -0.0 onto +0.0
    std::uint64_t bits = 0;
    std::memcpy(&bits, &v, sizeof bits);
    h = splitmix64(h ^ bits);
  }
  return h;
}

}  // namespace cfx
