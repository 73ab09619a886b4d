#pragma once

// Shared float32 compute kernels. Both the autodiff ops and the streaming
// inference path go through these, so cached block-by-block inference stays
// bit-identical to full-sequence computation. The AVX2 variants keep the
// scalar accumulation order per output element (j-lane vectorization, no FMA),
// so scalar and AVX2 results are bit-exact equals.

#include <cstddef>

namespace somn::kern {

enum class Backend { Scalar, Avx2 };

// Resolved once: AVX2 if the CPU supports it, overridable via SOMN_KERNEL=scalar|avx2.
Backend active_backend();
void set_backend(Backend b);
const char* backend_name(Backend b);

// c[M,N] = a[M,K] * b[K,N], row-major, c overwritten.
void matmul(const float* a, const float* b, float* c, int M, int K, int N);

// c[M,N] += a[M,K] * b[K,N].
void matmul_acc(const float* a, const float* b, float* c, int M, int K, int N);

void add(const float* a, const float* b, float* y, std::size_t n);
void sub(const float* a, const float* b, float* y, std::size_t n);
void mul(const float* a, const float* b, float* y, std::size_t n);
void scale(const float* a, float s, float* y, std::size_t n);
// y += s * x
void axpy(float* y, float s, const float* x, std::size_t n);

// Row reductions stay scalar (horizontal order must match everywhere).
void softmax_row(float* x, int n);              // in place
void layernorm_row(const float* x, float* y, int n, float eps);
void gelu(const float* x, float* y, std::size_t n);
void gelu_grad(const float* x, const float* gy, float* gx, std::size_t n);  // accumulates into gx
void relu(const float* x, float* y, std::size_t n);

// Rotary position rotation over even/odd pairs of one row; dim must be even.
// inverse=true applies the transposed rotation (used in backward).
void rope_row(const float* x, float* y, int dim, int pos, float base, bool inverse);

}  // namespace somn::kern
