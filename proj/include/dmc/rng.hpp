#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace dmc {

// Reproducible RNG stack. All samplers below are written out explicitly (no
// std::*_distribution) so that streams are bit-identical across standard
// library implementations.

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

//! Per-stream seed derivation: stream k of master seed s is obtained by
//! running splitmix64 on s XOR (k+1)*phi64. Documented so reports are
//! reproducible from (seed, path index) alone.
inline std::uint64_t derive_stream_seed(std::uint64_t master, std::uint64_t stream) {
  std::uint64_t s = master ^ ((stream + 1) * 0x9e3779b97f4a7c15ull);
  return splitmix64(s);
}

//! xoshiro256++ with splitmix64 seeding.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) {
    std::uint64_t sm = seed;
    for (auto& w : s_) w = splitmix64(sm);
  }

  static Rng for_stream(std::uint64_t master, std::uint64_t stream) {
    return Rng(derive_stream_seed(master, stream));
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  //! Uniform on (0,1): 53 random bits, offset so 0 is excluded.
  double uniform01() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  //! Uniform on [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  //! Standard normal via Box-Muller (pairwise, cached).
  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform01();
    double u2 = uniform01();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  bool bernoulli(double p) { return uniform01() < p; }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }
  std::array<std::uint64_t, 4> s_{};
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace dmc
