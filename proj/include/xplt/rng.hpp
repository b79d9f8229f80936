#pragma once

#include <cstdint>
#include <random>

namespace xplt {

/// Splitmix64 finalizer; decorrelates nearby seeds.
inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

/// Independent stream derived from a base seed and a stream tag.
inline std::mt19937 make_rng(uint64_t seed, uint64_t stream) {
  return std::mt19937(static_cast<uint32_t>(mix64(mix64(seed) ^ stream)));
}

inline float uniform(std::mt19937& rng, float lo, float hi) {
  return std::uniform_real_distribution<float>(lo, hi)(rng);
}

/// Inclusive on both ends.
inline int uniform_int(std::mt19937& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

inline float normal(std::mt19937& rng, float mean, float stddev) {
  return std::normal_distribution<float>(mean, stddev)(rng);
}

/// FNV-1a, streamable: pass the previous digest to chain updates.
inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace xplt
