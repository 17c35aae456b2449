#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace udfs {

// Deterministic counter-style PRNG (splitmix64). The state advances by a
// fixed odd constant and each output is a pure mix of the state, so a given
// seed yields the same stream on every platform. Seeds are recorded in the
// model file together with the algorithm name.
class Rng {
 public:
  static constexpr const char* kAlgorithm = "splitmix64";

  explicit Rng(uint64_t seed = 0) : state_(seed) {}

  uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 bits of precision.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n), n >= 1.
  uint64_t uniform_int(uint64_t n) {
    // Multiply-shift; bias is negligible for the n used here (n << 2^64).
    return static_cast<uint64_t>(uniform() * static_cast<double>(n));
  }

  // Box-Muller, cosine branch only; consumes two uniforms per draw.
  double normal(double mean = 0.0, double stddev = 1.0) {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(2.0 * M_PI * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Derive an independent child stream, e.g. one per synthetic class.
  Rng split(uint64_t stream_id) const {
    uint64_t z = state_ ^ (0xD1B54A32D192ED03ULL * (stream_id + 1));
    z = (z ^ (z >> 29)) * 0xFF51AFD7ED558CCDULL;
    z = (z ^ (z >> 32)) * 0xC4CEB9FE1A85EC53ULL;
    return Rng(z ^ (z >> 29));
  }

  uint64_t state() const { return state_; }

 private:
  uint64_t state_;
};

}  // namespace udfs
