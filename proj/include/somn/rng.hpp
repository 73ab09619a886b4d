#pragma once

// Deterministic RNG. mt19937_64 output is pinned by the standard and the
// normal variate is an explicit Box-Muller, so streams are reproducible
// across compilers and stdlib versions.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace somn {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // [0, 1)
  float uniform() {
    return static_cast<float>(next_u64() >> 40) * 0x1.0p-24f;
  }

  float normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    float u1 = uniform();
    while (u1 <= 1e-12f) u1 = uniform();
    const float u2 = uniform();
    const float r = std::sqrt(-2.0f * std::log(u1));
    const float a = 6.2831853071795864f * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  float normal(float mean, float std) { return mean + std * normal(); }

  // inclusive bounds
  int uniform_int(int lo, int hi) {
    return lo + static_cast<int>(next_u64() % static_cast<std::uint64_t>(hi - lo + 1));
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = next_u64() % i;
      std::swap(v[i - 1], v[j]);
    }
  }

  // independent child stream
  Rng fork() { return Rng(next_u64() ^ 0x9e3779b97f4a7c15ull); }

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  float spare_ = 0.0f;
};

}  // namespace somn
