#pragma once

#include <cstdint>
#include <string_view>

namespace modest {

// SplitMix64 finalizer. Used to spread a master seed into independent
// per-purpose streams so that RNG consumption in one place can never shift
// the draws seen somewhere else (this is what makes mid-run checkpoint
// resume bit-exact: a stream is fully identified by its tag and counters).
inline std::uint64_t mix_seed(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t derive_seed(std::uint64_t master, std::string_view stream,
                                 std::uint64_t a = 0, std::uint64_t b = 0) {
  std::uint64_t h = mix_seed(master ^ fnv1a64(stream));
  h = mix_seed(h ^ a);
  h = mix_seed(h ^ b);
  return h;
}

}  // namespace modest
