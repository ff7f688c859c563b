#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace alp {

// Deterministic RNG with identical output on every platform. splitmix64 core,
// Box-Muller for gaussians. std:: distributions are implementation-defined,
// which would break byte-identical corpus generation across stdlibs.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1)
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  // uniform integer in [0, n)
  uint64_t below(uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

  double gauss() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u = 1.0 - uniform();
    double v = uniform();
    double r = std::sqrt(-2.0 * std::log(u));
    double theta = 2.0 * 3.14159265358979323846 * v;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  // gaussian clipped by resampling to |x| <= 2 sigma, the usual init scheme
  double truncated_gauss(double sigma) {
    double g = gauss();
    while (std::fabs(g) > 2.0) g = gauss();
    return g * sigma;
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = size_t(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Independent child stream; used to give each stage/step its own seed.
  Rng fork(uint64_t tag) {
    Rng child(state_ ^ (0x517cc1b727220a95ull * (tag + 1)));
    child.next_u64();
    return child;
  }

 private:
  uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace alp
