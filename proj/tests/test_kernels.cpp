#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <vector>

#include "somn/kernels.hpp"
#include "somn/rng.hpp"

using namespace somn;

namespace {

struct BackendGuard {
  kern::Backend saved = kern::active_backend();
  ~BackendGuard() { kern::set_backend(saved); }
};

bool avx2_available() {
#if defined(__x86_64__)
  return __builtin_cpu_supports("avx2");
#else
  return false;
#endif
}

}  // namespace

TEST_CASE("scalar and avx2 kernels agree bit-exactly") {
  if (!avx2_available()) return;
  BackendGuard guard;
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const int M = rng.uniform_int(1, 17);
    const int K = rng.uniform_int(1, 33);
    const int N = rng.uniform_int(1, 40);
    std::vector<float> a(M * K), b(K * N);
    for (auto& v : a) v = rng.normal();
    for (auto& v : b) v = rng.normal();
    std::vector<float> cs(M * N), cv(M * N);

    kern::set_backend(kern::Backend::Scalar);
    kern::matmul(a.data(), b.data(), cs.data(), M, K, N);
    kern::set_backend(kern::Backend::Avx2);
    kern::matmul(a.data(), b.data(), cv.data(), M, K, N);
    CHECK(std::memcmp(cs.data(), cv.data(), sizeof(float) * cs.size()) == 0);

    std::vector<float> x(a.size()), ys(a.size()), yv(a.size());
    for (auto& v : x) v = rng.normal();
    kern::set_backend(kern::Backend::Scalar);
    kern::add(a.data(), x.data(), ys.data(), a.size());
    kern::set_backend(kern::Backend::Avx2);
    kern::add(a.data(), x.data(), yv.data(), a.size());
    CHECK(std::memcmp(ys.data(), yv.data(), sizeof(float) * ys.size()) == 0);

    kern::set_backend(kern::Backend::Scalar);
    kern::mul(a.data(), x.data(), ys.data(), a.size());
    kern::set_backend(kern::Backend::Avx2);
    kern::mul(a.data(), x.data(), yv.data(), a.size());
    CHECK(std::memcmp(ys.data(), yv.data(), sizeof(float) * ys.size()) == 0);

    ys = a;
    yv = a;
    kern::set_backend(kern::Backend::Scalar);
    kern::axpy(ys.data(), 0.37f, x.data(), a.size());
    kern::set_backend(kern::Backend::Avx2);
    kern::axpy(yv.data(), 0.37f, x.data(), a.size());
    CHECK(std::memcmp(ys.data(), yv.data(), sizeof(float) * ys.size()) == 0);
  }
}

TEST_CASE("softmax row sums to one") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = rng.uniform_int(1, 64);
    std::vector<float> x(n);
    for (auto& v : x) v = rng.normal(0.0f, 3.0f);
    kern::softmax_row(x.data(), n);
    double s = 0.0;
    for (float v : x) s += v;
    CHECK(std::abs(s - 1.0) < 1e-6);
  }
}

TEST_CASE("layernorm row has near-zero mean and handles constant input") {
  Rng rng(13);
  std::vector<float> x(48), y(48);
  for (auto& v : x) v = rng.normal(2.0f, 5.0f);
  kern::layernorm_row(x.data(), y.data(), 48, 1e-5f);
  double mean = 0.0;
  for (float v : y) mean += v;
  CHECK(std::abs(mean / 48.0) < 1e-6);

  std::fill(x.begin(), x.end(), 3.5f);
  kern::layernorm_row(x.data(), y.data(), 48, 1e-5f);
  for (float v : y) CHECK(v == doctest::Approx(0.0f));
}

TEST_CASE("rope inverse rotation undoes the forward rotation") {
  Rng rng(17);
  std::vector<float> x(32), y(32), z(32);
  for (auto& v : x) v = rng.normal();
  kern::rope_row(x.data(), y.data(), 32, 57, 10000.0f, false);
  kern::rope_row(y.data(), z.data(), 32, 57, 10000.0f, true);
  for (int i = 0; i < 32; ++i) CHECK(z[i] == doctest::Approx(x[i]).epsilon(1e-5));
}
