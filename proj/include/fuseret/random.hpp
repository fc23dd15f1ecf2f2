#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace fuseret {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; used to derive independent seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

constexpr std::uint64_t hash_name(std::string_view name) {
  std::uint64_t h = 0xCBF29CE484222325ull;  // FNV-1a
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ull;
  }
  return h;
}

/// Named sub-stream of a root seed ("data", "init", "mixup", "crops", ...).
inline Rng stream(std::uint64_t root_seed, std::string_view name, std::uint64_t index = 0) {
  return Rng(mix_seed(mix_seed(root_seed ^ hash_name(name)) + index));
}

}  // namespace fuseret
