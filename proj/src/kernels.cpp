#include "somn/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <string>

namespace somn::kern {

namespace detail {
// Implemented in kernels_avx2.cpp (compiled with -mavx2); only called after
// the dispatcher has confirmed CPU support.
void matmul_acc_avx2(const float* a, const float* b, float* c, int M, int K, int N);
void add_avx2(const float* a, const float* b, float* y, std::size_t n);
void sub_avx2(const float* a, const float* b, float* y, std::size_t n);
void mul_avx2(const float* a, const float* b, float* y, std::size_t n);
void scale_avx2(const float* a, float s, float* y, std::size_t n);
void axpy_avx2(float* y, float s, const float* x, std::size_t n);
}  // namespace detail

namespace {

Backend detect_backend() {
  if (const char* env = std::getenv("SOMN_KERNEL")) {
    std::string v(env);
    if (v == "scalar") return Backend::Scalar;
    if (v == "avx2") return Backend::Avx2;
  }
#if defined(__x86_64__) || defined(_M_X64)
  if (__builtin_cpu_supports("avx2")) return Backend::Avx2;
#endif
  return Backend::Scalar;
}

Backend g_backend = detect_backend();

void matmul_acc_scalar(const float* a, const float* b, float* c, int M, int K, int N) {
  for (int i = 0; i < M; ++i) {
    const float* arow = a + static_cast<std::size_t>(i) * K;
    float* crow = c + static_cast<std::size_t>(i) * N;
    for (int k = 0; k < K; ++k) {
      const float av = arow[k];
      const float* brow = b + static_cast<std::size_t>(k) * N;
      for (int j = 0; j < N; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

Backend active_backend() { return g_backend; }
void set_backend(Backend b) { g_backend = b; }
const char* backend_name(Backend b) { return b == Backend::Avx2 ? "avx2" : "scalar"; }

void matmul(const float* a, const float* b, float* c, int M, int K, int N) {
  std::memset(c, 0, sizeof(float) * static_cast<std::size_t>(M) * N);
  matmul_acc(a, b, c, M, K, N);
}

void matmul_acc(const float* a, const float* b, float* c, int M, int K, int N) {
  if (g_backend == Backend::Avx2) {
    detail::matmul_acc_avx2(a, b, c, M, K, N);
  } else {
    matmul_acc_scalar(a, b, c, M, K, N);
  }
}

void add(const float* a, const float* b, float* y, std::size_t n) {
  if (g_backend == Backend::Avx2) return detail::add_avx2(a, b, y, n);
  for (std::size_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
}

void sub(const float* a, const float* b, float* y, std::size_t n) {
  if (g_backend == Backend::Avx2) return detail::sub_avx2(a, b, y, n);
  for (std::size_t i = 0; i < n; ++i) y[i] = a[i] - b[i];
}

void mul(const float* a, const float* b, float* y, std::size_t n) {
  if (g_backend == Backend::Avx2) return detail::mul_avx2(a, b, y, n);
  for (std::size_t i = 0; i < n; ++i) y[i] = a[i] * b[i];
}

void scale(const float* a, float s, float* y, std::size_t n) {
  if (g_backend == Backend::Avx2) return detail::scale_avx2(a, s, y, n);
  for (std::size_t i = 0; i < n; ++i) y[i] = a[i] * s;
}

void axpy(float* y, float s, const float* x, std::size_t n) {
  if (g_backend == Backend::Avx2) return detail::axpy_avx2(y, s, x, n);
  for (std::size_t i = 0; i < n; ++i) y[i] += s * x[i];
}

void softmax_row(float* x, int n) {
  float mx = x[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, x[i]);
  float sum = 0.0f;
  for (int i = 0; i < n; ++i) {
    x[i] = std::exp(x[i] - mx);
    sum += x[i];
  }
  const float inv = 1.0f / sum;
  for (int i = 0; i < n; ++i) x[i] *= inv;
}

void layernorm_row(const float* x, float* y, int n, float eps) {
  float mean = 0.0f;
  for (int i = 0; i < n; ++i) mean += x[i];
  mean /= static_cast<float>(n);
  float var = 0.0f;
  for (int i = 0; i < n; ++i) {
    const float d = x[i] - mean;
    var += d * d;
  }
  var /= static_cast<float>(n);
  const float inv = 1.0f / std::sqrt(var + eps);
  for (int i = 0; i < n; ++i) y[i] = (x[i] - mean) * inv;
}

namespace {
constexpr float kGeluC = 0.7978845608028654f;  // sqrt(2/pi)
}

void gelu(const float* x, float* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const float v = x[i];
    const float u = kGeluC * (v + 0.044715f * v * v * v);
    y[i] = 0.5f * v * (1.0f + std::tanh(u));
  }
}

void gelu_grad(const float* x, const float* gy, float* gx, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const float v = x[i];
    const float u = kGeluC * (v + 0.044715f * v * v * v);
    const float t = std::tanh(u);
    const float du = kGeluC * (1.0f + 3.0f * 0.044715f * v * v);
    const float d = 0.5f * (1.0f + t) + 0.5f * v * (1.0f - t * t) * du;
    gx[i] += gy[i] * d;
  }
}

void relu(const float* x, float* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

void rope_row(const float* x, float* y, int dim, int pos, float base, bool inverse) {
  for (int i = 0; i < dim; i += 2) {
    const float theta =
        static_cast<float>(pos) *
        std::pow(base, -static_cast<float>(i) / static_cast<float>(dim));
    const float c = std::cos(theta);
    const float s = inverse ? -std::sin(theta) : std::sin(theta);
    const float x0 = x[i];
    const float x1 = x[i + 1];
    y[i] = x0 * c - x1 * s;
    y[i + 1] = x0 * s + x1 * c;
  }
}

}  // namespace somn::kern
