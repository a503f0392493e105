#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <string_view>

namespace omreid {

// Counter-based random streams. Every draw is a pure function of
// (key, counter), so regeneration of any sample is order-independent and
// parallel producers cannot perturb each other.
struct KeyedRng {
  std::uint64_t key = 0;
  std::uint64_t counter = 0;

  // splitmix64 finalizer
  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  static KeyedRng from(std::initializer_list<std::uint64_t> parts) {
    std::uint64_t k = 0x8a5cd789635d2dffULL;
    for (std::uint64_t p : parts) k = mix(k ^ mix(p));
    return KeyedRng{k, 0};
  }

  std::uint64_t next_u64() { return mix(key + 0x632be59bd9b4e019ULL * ++counter); }

  // uniform in [0, 1)
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // uniform integer in [0, n)
  std::uint64_t next_below(std::uint64_t n) { return n ? next_u64() % n : 0; }

  // Box-Muller; consumes two uniforms per draw
  double next_gaussian() {
    double u1 = next_double();
    double u2 = next_double();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }
};

// FNV-1a, used to key per-parameter init streams by name.
inline std::uint64_t hash_str(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace omreid
