#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>

#include <boost/random/exponential_distribution.hpp>
#include <boost/random/normal_distribution.hpp>

namespace brw {

/// One step of the splitmix64 generator; advances `state`.
inline std::uint64_t splitmix64(std::uint64_t& state) noexcept {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// xoshiro256++ (Blackman & Vigna). Satisfies UniformRandomBitGenerator.
class Xoshiro256pp {
 public:
  using result_type = std::uint64_t;

  explicit Xoshiro256pp(std::uint64_t seed = 0x853c49e6748fea9bULL) noexcept { reseed(seed); }

  void reseed(std::uint64_t seed) noexcept {
    std::uint64_t sm = seed;
    for (auto& w : s_) w = splitmix64(sm);
  }

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept {
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

  friend bool operator==(const Xoshiro256pp&, const Xoshiro256pp&) = default;

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
    return (x << k) | (x >> (64 - k));
  }
  std::array<std::uint64_t, 4> s_{};
};

using Rng = Xoshiro256pp;

/// Independent stream for replica `index` of a run seeded with `master`.
/// `salt` separates logically distinct uses of the same (master, index).
inline Rng replica_stream(std::uint64_t master, std::uint64_t index, std::uint64_t salt = 0) noexcept {
  std::uint64_t s = master ^ (0xd1b54a32d192ed03ULL * (salt + 1));
  const std::uint64_t a = splitmix64(s);
  std::uint64_t t = index + a;
  const std::uint64_t b = splitmix64(t);
  return Rng(a ^ (b * 0xff51afd7ed558ccdULL));
}

/// Uniform on [0, 1) with 53 random bits.
template <class Engine>
inline double uniform01(Engine& rng) noexcept {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Uniform on (0, 1).
template <class Engine>
inline double uniform_open01(Engine& rng) noexcept {
  return (static_cast<double>(rng() >> 12) + 0.5) * 0x1.0p-52;
}

template <class Engine>
inline double std_normal(Engine& rng) {
  boost::random::normal_distribution<double> dist;
  return dist(rng);
}

template <class Engine>
inline double std_exponential(Engine& rng) {
  boost::random::exponential_distribution<double> dist;
  return dist(rng);
}

}  // namespace brw
