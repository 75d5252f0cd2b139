#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace corrtrack {

// Deterministic RNG. The mt19937_64 engine has a bit-exact sequence mandated
// by the standard; the distributions below are hand-rolled because the
// std:: distributions are implementation-defined and would break
// reproducibility of datasets and checkpoints across toolchains.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller. No spare caching, so the consumed
  // engine stream is a pure function of the call sequence.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double two_pi = 6.283185307179586476925286766559;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
  }

  // Uniform integer in [0, n). Rejection sampling keeps it unbiased and
  // platform-independent.
  uint64_t index(uint64_t n);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

// splitmix64 mix, used to derive independent sub-stream seeds.
uint64_t mix_seed(uint64_t seed, uint64_t stream);

// Fisher-Yates shuffle with our deterministic index() (std::shuffle is
// implementation-defined).
template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (size_t i = v.size(); i > 1; --i) {
    size_t j = static_cast<size_t>(rng.index(i));
    std::swap(v[i - 1], v[j]);
  }
}

// k distinct indices drawn uniformly from [0, n) without replacement,
// in draw order.
std::vector<uint64_t> sample_without_replacement(uint64_t n, uint64_t k, Rng& rng);

}  // namespace corrtrack
