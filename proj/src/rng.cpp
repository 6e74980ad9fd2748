#include "gocnn/rng.hpp"

#include <cmath>

namespace gocnn {

double Rng::normal(double mean, double stddev) {
  if (have_spare_) {
    have_spare_ = false;
    return mean + stddev * spare_;
  }
  // Box-Muller; u clamped away from 0 so log stays finite.
  double u = uniform();
  if (u < 0x1.0p-60) u = 0x1.0p-60;
  double v = uniform();
  double r = std::sqrt(-2.0 * std::log(u));
  double theta = 2.0 * 3.141592653589793238462643 * v;
  spare_ = r * std::sin(theta);
  have_spare_ = true;
  return mean + stddev * r * std::cos(theta);
}

uint64_t hash_u64(uint64_t a, uint64_t b) {
  uint64_t z = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

uint64_t hash_u64(uint64_t a, uint64_t b, uint64_t c) { return hash_u64(hash_u64(a, b), c); }

}  // namespace gocnn
