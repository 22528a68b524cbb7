#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace layersim {

// Deterministic 64-bit generator (splitmix64). Distribution draws are
// hand-rolled so traces are byte-identical across standard library
// implementations and platforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  // Independent stream derived from (seed, label, index). Used to give the
  // workload generator and the length predictor their own streams, and the
  // predictor one stream per request id so outcomes do not depend on event
  // order.
  static Rng substream(std::uint64_t seed, std::string_view label,
                       std::uint64_t index = 0) {
    std::uint64_t h = 1469598103934665603ull;  // FNV-1a
    for (char c : label) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ull;
    }
    Rng r(seed ^ h);
    r.state_ += 0x9e3779b97f4a7c15ull * (index + 1);
    r.next_u64();
    r.next_u64();
    return r;
  }

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n).
  std::uint64_t uniform_below(std::uint64_t n) { return next_u64() % n; }

  double exponential(double mean) {
    double u = uniform01();
    return -mean * std::log1p(-u);
  }

  // Box-Muller; draws two uniforms per call, no cached spare.
  double normal(double mu, double sigma) {
    double u1 = uniform01();
    double u2 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    double mag = std::sqrt(-2.0 * std::log(u1));
    return mu + sigma * mag * std::cos(2.0 * M_PI * u2);
  }

  double lognormal(double mu, double sigma) {
    return std::exp(normal(mu, sigma));
  }

 private:
  std::uint64_t state_;
};

}  // namespace layersim
