#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace finehash {

// splitmix64; used to fold several stream identifiers into one seed so that
// per-sample randomness is a pure function of (seed, id, epoch) and never of
// arrival order.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t seed_combine(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x8f3ad1c6f2a90b7dULL;
  for (std::uint64_t p : parts) h = splitmix64(h ^ p);
  return h;
}

// Deterministic random source. mt19937_64 has a standardized sequence, and all
// distributions below are implemented here rather than with std:: distribution
// objects, whose outputs are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n); n must be > 0. Fixed-point multiply keeps the mapping portable.
  std::size_t uniform_index(std::size_t n) {
    return static_cast<std::size_t>(
        (static_cast<__uint128_t>(next_u64()) * static_cast<__uint128_t>(n)) >> 64);
  }

  // Box-Muller, cosine branch only so every draw consumes exactly two words.
  double normal() {
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  int sign() { return (next_u64() & 1ULL) ? 1 : -1; }

  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::mt19937_64 engine_;
};

// Fisher-Yates with the portable index draw above.
template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  if (v.size() < 2) return;
  for (std::size_t i = v.size() - 1; i > 0; --i) {
    std::size_t j = rng.uniform_index(i + 1);
    std::swap(v[i], v[j]);
  }
}

}  // namespace finehash
