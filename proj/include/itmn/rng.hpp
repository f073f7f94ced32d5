#pragma once

// Seeded RNG with hand-rolled conversions (std distributions are not
// portable across standard libraries, and checkpoint determinism depends
// on exact draw sequences). Sub-streams are derived from (seed, purpose)
// via splitmix64 so independent pipeline stages never share a stream.

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace itmn {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  // Derives an independent sub-stream for a purpose/index pair.
  static Rng child(std::uint64_t seed, std::uint64_t purpose, std::uint64_t index = 0) {
    return Rng(splitmix64(splitmix64(seed ^ (purpose * 0x9e3779b97f4a7c15ULL)) ^ index));
  }

  std::uint64_t next_u64() { return gen_(); }

  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }
  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  // Uniform integer in [0, n).
  std::uint64_t uniform_int(std::uint64_t n) {
    // rejection sampling keeps the draw unbiased
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v;
    do {
      v = gen_();
    } while (v >= limit);
    return v % n;
  }

  double normal() {
    // Box-Muller, one value per call (the pair's second half is dropped
    // to keep the draw count predictable)
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  bool bernoulli(double p) { return uniform() < p; }

  std::string state() const {
    std::ostringstream os;
    os << gen_;
    return os.str();
  }
  void set_state(const std::string& s) {
    std::istringstream is(s);
    is >> gen_;
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace itmn
