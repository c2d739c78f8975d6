#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace lowrank {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Counter-based child seed: the same (master, path...) always yields the same
/// seed, and distinct paths give independent-looking streams.
inline std::uint64_t derive_seed(std::uint64_t master,
                                 std::initializer_list<std::uint64_t> path) {
  std::uint64_t s = mix64(master);
  for (std::uint64_t p : path) s = mix64(s ^ mix64(p + 0x632be59bd9b4e019ULL));
  return s;
}

// Stream tags used when a single instance seed feeds several generators.
enum class Stream : std::uint64_t {
  operator_draw = 1,
  ground_truth = 2,
  noise = 3,
};

inline std::uint64_t derive_seed(std::uint64_t seed, Stream stream) {
  return derive_seed(seed, {static_cast<std::uint64_t>(stream)});
}

}  // namespace lowrank
