#ifndef FEDLAB_RNG_HPP
#define FEDLAB_RNG_HPP

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>

namespace fedlab {

// splitmix64 finalizer; statistically solid and cheap.
inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Counter-based generator: a stream is a hashed key plus a draw counter, so
// the i-th draw of a stream is a pure function of (key, i). Streams derived
// from (seed, tag, id, round) make client work order-independent and runs
// replayable for any thread count.
class CounterRng {
 public:
  CounterRng() : key_(0) {}
  explicit CounterRng(std::uint64_t key) : key_(key) {}

  static CounterRng derive(std::initializer_list<std::uint64_t> parts) {
    std::uint64_t key = 0x6a09e667f3bcc909ull;
    for (std::uint64_t p : parts) key = mix64(key ^ (p + 0x9e3779b97f4a7c15ull));
    return CounterRng(key);
  }

  std::uint64_t next_u64() {
    return mix64(key_ + (++counter_) * 0x9e3779b97f4a7c15ull);
  }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller; consumes exactly two draws.
  double normal() {
    double u1 = (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    double u2 = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  // Uniform integer in [0, n). Lemire reduction; bias is ~2^-64 per draw.
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  // Gamma(shape, 1) by Marsaglia-Tsang, with the boost trick for shape < 1.
  double gamma(double shape) {
    if (shape < 1.0) {
      double u = uniform();
      while (u <= 0.0) u = uniform();
      return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double v = 1.0 + c * x;
      if (v <= 0.0) continue;
      v = v * v * v;
      double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v)))
        return d * v;
    }
  }

  std::uint64_t key() const { return key_; }
  std::uint64_t draws() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

// Stream tags: fixed so that every consumer of randomness has a private,
// documented lane under the experiment seed.
namespace stream {
inline constexpr std::uint64_t task = 0x01;
inline constexpr std::uint64_t client_batches = 0x02;
inline constexpr std::uint64_t client_sampling = 0x03;
inline constexpr std::uint64_t perturb = 0x04;
inline constexpr std::uint64_t init = 0x05;
inline constexpr std::uint64_t plan = 0x06;
inline constexpr std::uint64_t heldout = 0x07;
inline constexpr std::uint64_t trial = 0x08;
}  // namespace stream

}  // namespace fedlab

#endif
