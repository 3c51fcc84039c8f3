#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace tsln {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Hashes a seed and a key path into a stream seed.  Distinct key paths give
/// statistically independent generators, so (seed, replicate, chain) streams can
/// be created in any order or thread.
inline std::uint64_t stream_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
  std::uint64_t h = splitmix64(seed);
  for (auto k : keys) h = splitmix64(h ^ splitmix64(k + 0x632be59bd9b4e019ULL));
  return h;
}

using Rng = std::mt19937_64;

inline Rng make_stream(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
  const std::uint64_t s = stream_seed(seed, keys);
  std::seed_seq seq{static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(s >> 32)};
  return Rng(seq);
}

// Stream tags so the census, replicate and sampler streams never collide.
namespace streams {
inline constexpr std::uint64_t census = 1;
inline constexpr std::uint64_t replicate = 2;
inline constexpr std::uint64_t chain = 3;
inline constexpr std::uint64_t subset = 4;
inline constexpr std::uint64_t fit = 5;
}  // namespace streams

}  // namespace tsln
