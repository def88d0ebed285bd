#pragma once

#include <cstdint>
#include <initializer_list>

namespace percept {

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Seed of an independent substream identified by a run seed and a path of
/// indices (iteration, rollout, ...). Order of the indices matters.
constexpr std::uint64_t derive_seed(std::uint64_t run_seed, std::initializer_list<std::uint64_t> path) {
  std::uint64_t h = mix64(run_seed);
  for (const auto v : path) h = mix64(h ^ mix64(v + 0x632BE59BD9B4E019ull));
  return h;
}

}  // namespace percept
