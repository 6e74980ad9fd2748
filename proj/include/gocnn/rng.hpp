#pragma once

#include <cstdint>
#include <vector>

namespace gocnn {

// Seeded generator with an explicitly pinned output mapping (splitmix64 core,
// Box-Muller normals, Fisher-Yates shuffle). std::random distributions are
// implementation-defined, which would break byte-level reproducibility of
// corpora and parameter draws across standard libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1), 53 bits of precision.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Multiply-shift mapping, no modulo bias to speak of.
  int uniform_int(int n) {
    return static_cast<int>((static_cast<unsigned __int128>(next_u64()) *
                             static_cast<unsigned __int128>(n)) >>
                            64);
  }

  double normal(double mean, double stddev);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(static_cast<int>(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Derives independent deterministic substreams, e.g. hash_u64(seed, sample_index).
uint64_t hash_u64(uint64_t a, uint64_t b);
uint64_t hash_u64(uint64_t a, uint64_t b, uint64_t c);

}  // namespace gocnn
