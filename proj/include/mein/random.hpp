#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace mein {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::span<const unsigned char> bytes,
                           std::uint64_t hash = 0xcbf29ce484222325ULL) {
  for (auto b : bytes) {
    hash ^= b;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

inline std::uint64_t hash_string(std::string_view s) {
  return fnv1a({reinterpret_cast<const unsigned char*>(s.data()), s.size()});
}

/// Independent stream seed for (run seed, purpose, index).
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose,
                                 std::uint64_t index = 0) {
  return splitmix64(splitmix64(seed ^ hash_string(purpose)) + index);
}

}  // namespace mein
