#include "corrtrack/rng.hpp"

#include <unordered_set>

namespace corrtrack {

uint64_t Rng::index(uint64_t n) {
  if (n <= 1) return 0;
  const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  uint64_t x = next_u64();
  while (x >= limit) x = next_u64();
  return x % n;
}

uint64_t mix_seed(uint64_t seed, uint64_t stream) {
  uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::vector<uint64_t> sample_without_replacement(uint64_t n, uint64_t k, Rng& rng) {
  if (k > n) k = n;
  std::vector<uint64_t> out;
  out.reserve(k);
  if (k == 0) return out;
  // Dense path: partial Fisher-Yates over an index array.
  if (k * 3 >= n || n < 1024) {
    std::vector<uint64_t> idx(n);
    for (uint64_t i = 0; i < n; ++i) idx[i] = i;
    for (uint64_t i = 0; i < k; ++i) {
      uint64_t j = i + rng.index(n - i);
      std::swap(idx[i], idx[j]);
      out.push_back(idx[i]);
    }
    return out;
  }
  // Sparse path: rejection against a seen-set.
  std::unordered_set<uint64_t> seen;
  seen.reserve(k * 2);
  while (out.size() < k) {
    uint64_t v = rng.index(n);
    if (seen.insert(v).second) out.push_back(v);
  }
  return out;
}

}  // namespace corrtrack
