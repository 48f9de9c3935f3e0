#pragma once

#include <cmath>
#include <cstdint>

namespace tabtile {

// Determinism contract: identical seed + identical element count gives a
// bit-identical stream, independent of platform and standard library.
struct Seed {
  std::uint64_t value = 0;
};

namespace rng {

// splitmix64 finalizer (Steele, Lea & Flood). Used in counter mode:
// word i of a stream is mix64(seed + (i+1) * GAMMA), which is exactly the
// splitmix64 sequence and allows random access by index.
inline constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline std::uint64_t word_at(Seed seed, std::uint64_t index) {
  return mix64(seed.value + (index + 1) * kGamma);
}

// Uniform double in [0, 1) from the top 53 bits of a word.
inline double uniform_at(Seed seed, std::uint64_t index) {
  return static_cast<double>(word_at(seed, index) >> 11) * 0x1.0p-53;
}

// Standard normal via Box-Muller. Draw i consumes uniform words 2i and
// 2i+1; pairs (2i, 2i+1) of normals share them, so the stream is still
// random-access. Computed in double; callers narrow if they need float.
inline double normal_at(Seed seed, std::uint64_t index) {
  const std::uint64_t pair = index / 2;
  const double u1 = 1.0 - uniform_at(seed, 2 * pair);      // (0, 1]
  const double u2 = uniform_at(seed, 2 * pair + 1);        // [0, 1)
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 6.283185307179586476925286766559 * u2;
  return index % 2 == 0 ? radius * std::cos(angle) : radius * std::sin(angle);
}

// Derive an independent stream, e.g. one per named weight tensor.
inline Seed derive(Seed seed, std::uint64_t salt) {
  return Seed{mix64(seed.value ^ mix64(salt))};
}

// FNV-1a, for salting streams with names.
inline std::uint64_t hash_name(const char* s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (; *s != '\0'; ++s) {
    h ^= static_cast<unsigned char>(*s);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace rng
}  // namespace tabtile
