// AVX2 kernel variants. Compiled with -mavx2 -ffp-contract=off; dispatched at
// runtime only when the CPU reports AVX2. Vectorization is over the output
// (j) lane with separate mul and add, so every output element sees the same
// rounding sequence as the scalar reference and results are bit-exact equal.

#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

#include <cstddef>

namespace somn::kern::detail {

void matmul_acc_avx2(const float* a, const float* b, float* c, int M, int K, int N) {
  const int n8 = N - (N % 8);
  for (int i = 0; i < M; ++i) {
    const float* arow = a + static_cast<std::size_t>(i) * K;
    float* crow = c + static_cast<std::size_t>(i) * N;
    for (int k = 0; k < K; ++k) {
      const __m256 av = _mm256_set1_ps(arow[k]);
      const float* brow = b + static_cast<std::size_t>(k) * N;
      int j = 0;
      for (; j < n8; j += 8) {
        __m256 cv = _mm256_loadu_ps(crow + j);
        const __m256 bv = _mm256_loadu_ps(brow + j);
        cv = _mm256_add_ps(cv, _mm256_mul_ps(av, bv));
        _mm256_storeu_ps(crow + j, cv);
      }
      const float avs = arow[k];
      for (; j < N; ++j) crow[j] += avs * brow[j];
    }
  }
}

void add_avx2(const float* a, const float* b, float* y, std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i, _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) y[i] = a[i] + b[i];
}

void sub_avx2(const float* a, const float* b, float* y, std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i, _mm256_sub_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) y[i] = a[i] - b[i];
}

void mul_avx2(const float* a, const float* b, float* y, std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) y[i] = a[i] * b[i];
}

void scale_avx2(const float* a, float s, float* y, std::size_t n) {
  const __m256 sv = _mm256_set1_ps(s);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), sv));
  for (; i < n; ++i) y[i] = a[i] * s;
}

void axpy_avx2(float* y, float s, const float* x, std::size_t n) {
  const __m256 sv = _mm256_set1_ps(s);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 yv = _mm256_loadu_ps(y + i);
    yv = _mm256_add_ps(yv, _mm256_mul_ps(sv, _mm256_loadu_ps(x + i)));
    _mm256_storeu_ps(y + i, yv);
  }
  for (; i < n; ++i) y[i] += s * x[i];
}

}  // namespace somn::kern::detail

#else

#include <cstddef>
#include <stdexcept>

namespace somn::kern::detail {
[[noreturn]] static void unavailable() { throw std::runtime_error("avx2 kernels not built on this platform"); }
void matmul_acc_avx2(const float*, const float*, float*, int, int, int) { unavailable(); }
void add_avx2(const float*, const float*, float*, std::size_t) { unavailable(); }
void sub_avx2(const float*, const float*, float*, std::size_t) { unavailable(); }
void mul_avx2(const float*, const float*, float*, std::size_t) { unavailable(); }
void scale_avx2(const float*, float, float*, std::size_t) { unavailable(); }
void axpy_avx2(float*, float, const float*, std::size_t) { unavailable(); }
}  // namespace somn::kern::detail

#endif
