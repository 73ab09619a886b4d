#include "somn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "somn/kernels.hpp"

namespace somn::ops {

bool debug_corrupt_backward = false;

namespace {

bool want_grad(const Tensor& a) { return a.requires_grad(); }

float* ensure_grad(const std::shared_ptr<TensorImpl>& impl) {
  if (impl->grad.empty()) impl->grad.assign(impl->data.size(), 0.0f);
  return impl->grad.data();
}

void record_unary(Tape& t, const Tensor& a, const Tensor& out, std::function<void()> fn) {
  t.record(TapeNode{{a.shared()}, out.shared(), std::move(fn)});
}

// true if b's shape is a strict suffix of a's (bias-style broadcast)
bool suffix_broadcast(const Shape& a, const Shape& b) {
  if (b.size() >= a.size()) return false;
  for (std::size_t i = 0; i < b.size(); ++i)
    if (b[b.size() - 1 - i] != a[a.size() - 1 - i]) return false;
  return true;
}

void check_rows(const Tensor& a, const char* op) {
  if (a.shape().empty()) throw ShapeError(std::string(op) + ": scalar input not supported");
}

int last_dim(const Tensor& a) { return a.shape().back(); }
int outer_rows(const Tensor& a) {
  return static_cast<int>(a.numel()) / last_dim(a);
}

Tensor binary_elementwise(Tape& t, const Tensor& a, const Tensor& b, const char* name,
                          void (*fwd)(const float*, const float*, float*, std::size_t),
                          int mode /*0=add,1=sub,2=mul*/) {
  const bool bcast = suffix_broadcast(a.shape(), b.shape());
  if (!bcast && a.shape() != b.shape())
    throw ShapeError(std::string(name) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  Tensor out = Tensor::zeros(a.shape(), want_grad(a) || want_grad(b));
  const std::size_t n = a.numel();
  const std::size_t bn = b.numel();
  if (!bcast) {
    fwd(a.data(), b.data(), out.data(), n);
  } else {
    for (std::size_t off = 0; off < n; off += bn) fwd(a.data() + off, b.data(), out.data() + off, bn);
  }
  if (out.requires_grad()) {
    auto ai = a.shared(), bi = b.shared(), oi = out.shared();
    t.record(TapeNode{{ai, bi}, oi, [ai, bi, oi, n, bn, bcast, mode]() {
      const float* gy = oi->grad.data();
      if (ai->requires_grad) {
        float* ga = ensure_grad(ai);
        if (mode == 2) {
          if (!bcast) {
            for (std::size_t i = 0; i < n; ++i) ga[i] += gy[i] * bi->data[i];
          } else {
            for (std::size_t i = 0; i < n; ++i) ga[i] += gy[i] * bi->data[i % bn];
          }
        } else {
          for (std::size_t i = 0; i < n; ++i) ga[i] += gy[i];
        }
      }
      if (bi->requires_grad) {
        float* gb = ensure_grad(bi);
        const float sgn = mode == 1 ? -1.0f : 1.0f;
        if (mode == 2) {
          if (!bcast) {
            for (std::size_t i = 0; i < n; ++i) gb[i] += gy[i] * ai->data[i];
          } else {
            for (std::size_t i = 0; i < n; ++i) gb[i % bn] += gy[i] * ai->data[i];
          }
        } else if (!bcast) {
          for (std::size_t i = 0; i < n; ++i) gb[i] += sgn * gy[i];
        } else {
          for (std::size_t i = 0; i < n; ++i) gb[i % bn] += sgn * gy[i];
        }
      }
    }});
  }
  return out;
}

}  // namespace

Tensor add(Tape& t, const Tensor& a, const Tensor& b) {
  return binary_elementwise(t, a, b, "add", &kern::add, 0);
}

Tensor sub(Tape& t, const Tensor& a, const Tensor& b) {
  return binary_elementwise(t, a, b, "sub", &kern::sub, 1);
}

Tensor mul(Tape& t, const Tensor& a, const Tensor& b) {
  return binary_elementwise(t, a, b, "mul", &kern::mul, 2);
}

Tensor scale(Tape& t, const Tensor& a, float s) {
  Tensor out = Tensor::zeros(a.shape(), want_grad(a));
  kern::scale(a.data(), s, out.data(), a.numel());
  if (out.requires_grad()) {
    auto ai = a.shared(), oi = out.shared();
    record_unary(t, a, out, [ai, oi, s]() {
      kern::axpy(ensure_grad(ai), s, oi->grad.data(), ai->data.size());
    });
  }
  return out;
}

Tensor matmul(Tape& t, const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2)
    throw ShapeError("matmul: expected 2-D operands, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  const int M = a.shape()[0], K = a.shape()[1];
  if (b.shape()[0] != K)
    throw ShapeError("matmul: inner dims differ, " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  const int N = b.shape()[1];
  Tensor out = Tensor::zeros({M, N}, want_grad(a) || want_grad(b));
  kern::matmul(a.data(), b.data(), out.data(), M, K, N);
  if (out.requires_grad()) {
    auto ai = a.shared(), bi = b.shared(), oi = out.shared();
    t.record(TapeNode{{ai, bi}, oi, [ai, bi, oi, M, K, N]() {
      const float* gy = oi->grad.data();
      if (ai->requires_grad) {
        // dA += dC * B^T
        std::vector<float> bt(static_cast<std::size_t>(N) * K);
        for (int k = 0; k < K; ++k)
          for (int j = 0; j < N; ++j) bt[static_cast<std::size_t>(j) * K + k] = bi->data[static_cast<std::size_t>(k) * N + j];
        kern::matmul_acc(gy, bt.data(), ensure_grad(ai), M, N, K);
      }
      if (bi->requires_grad) {
        // dB += A^T * dC
        std::vector<float> at(static_cast<std::size_t>(K) * M);
        for (int i = 0; i < M; ++i)
          for (int k = 0; k < K; ++k) at[static_cast<std::size_t>(k) * M + i] = ai->data[static_cast<std::size_t>(i) * K + k];
        float* gb = ensure_grad(bi);
        kern::matmul_acc(at.data(), gy, gb, K, M, N);
        if (debug_corrupt_backward)
          for (std::size_t i = 0; i < bi->data.size(); ++i) gb[i] *= 1.25f;
      }
    }});
  }
  return out;
}

Tensor transpose(Tape& t, const Tensor& a) {
  if (a.shape().size() != 2) throw ShapeError("transpose: expected 2-D, got " + shape_str(a.shape()));
  const int M = a.shape()[0], N = a.shape()[1];
  Tensor out = Tensor::zeros({N, M}, want_grad(a));
  for (int i = 0; i < M; ++i)
    for (int j = 0; j < N; ++j) out.data()[static_cast<std::size_t>(j) * M + i] = a.data()[static_cast<std::size_t>(i) * N + j];
  if (out.requires_grad()) {
    auto ai = a.shared(), oi = out.shared();
    record_unary(t, a, out, [ai, oi, M, N]() {
      float* ga = ensure_grad(ai);
      const float* gy = oi->grad.data();
      for (int i = 0; i < M; ++i)
        for (int j = 0; j < N; ++j) ga[static_cast<std::size_t>(i) * N + j] += gy[static_cast<std::size_t>(j) * M + i];
    });
  }
  return out;
}

Tensor relu(Tape& t, const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape(), want_grad(a));
  kern::relu(a.data(), out.data(), a.numel());
  if (out.requires_grad()) {
    auto ai = a.shared(), oi = out.shared();
    record_unary(t, a, out, [ai, oi]() {
      float* ga = ensure_grad(ai);
      const float* gy = oi->grad.data();
      for (std::size_t i = 0; i < ai->data.size(); ++i)
        if (ai->data[i] > 0.0f) ga[i] += gy[i];
    });
  }
  return out;
}

Tensor gelu(Tape& t, const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape(), want_grad(a));
  kern::gelu(a.data(), out.data(), a.numel());
  if (out.requires_grad()) {
    auto ai = a.shared(), oi = out.shared();
    record_unary(t, a, out, [ai, oi]() {
      float* ga = ensure_grad(ai);
      const float* gy = oi->grad.data();
      kern::gelu_grad(ai->data.data(), gy, ga, ai->data.size());
    });
  }
  return out;
}

Tensor layernorm(Tape& t, const Tensor& a, float eps) {
  check_rows(a, "layernorm");
  const int D = last_dim(a);
  const int R = outer_rows(a);
  Tensor out = Tensor::zeros(a.shape(), want_grad(a));
  for (int r = 0; r < R; ++r)
    kern::layernorm_row(a.data() + static_cast<std::size_t>(r) * D, out.data() + static_cast<std::size_t>(r) * D, D, eps);
  if (out.requires_grad()) {
    auto ai = a.shared(), oi = out.shared();
    record_unary(t, a, out, [ai, oi, D, R, eps]() {
      float* ga = ensure_grad(ai);
      const float* gy = oi->grad.data();
      const float* y = oi->data.data();
      const float* x = ai->data.data();
      for (int r = 0; r < R; ++r) {
        const std::size_t off = static_cast<std::size_t>(r) * D;
        float mean = 0.0f;
        for (int i = 0; i < D; ++i) mean += x[off + i];
        mean /= static_cast<float>(D);
        float var = 0.0f;
        for (int i = 0; i < D; ++i) {
          const float d = x[off + i] - mean;
          var += d * d;
        }
        var /= static_cast<float>(D);
        const float inv = 1.0f / std::sqrt(var + eps);
        float gmean = 0.0f, gdot = 0.0f;
        for (int i = 0; i < D; ++i) {
          gmean += gy[off + i];
          gdot += gy[off + i] * y[off + i];
        }
        gmean /= static_cast<float>(D);
        gdot /= static_cast<float>(D);
        for (int i = 0; i < D; ++i)
          ga[off + i] += inv * (gy[off + i] - gmean - y[off + i] * gdot);
      }
    });
  }
  return out;
}

Tensor softmax(Tape& t, const Tensor& a) {
  check_rows(a, "softmax");
  const int D = last_dim(a);
  const int R = outer_rows(a);
  Tensor out = Tensor::zeros(a.shape(), want_grad(a));
  std::memcpy(out.data(), a.data(), sizeof(float) * a.numel());
  for (int r = 0; r < R; ++r) kern::softmax_row(out.data() + static_cast<std::size_t>(r) * D, D);
  if (out.requires_grad()) {
    auto ai = a.shared(), oi = out.shared();
    record_unary(t, a, out, [ai, oi, D, R]() {
      float* ga = ensure_grad(ai);
      const float* gy = oi->grad.data();
      const float* y = oi->data.data();
      for (int r = 0; r < R; ++r) {
        const std::size_t off = static_cast<std::size_t>(r) * D;
        float dot = 0.0f;
        for (int i = 0; i < D; ++i) dot += gy[off + i] * y[off + i];
        for (int i = 0; i < D; ++i) ga[off + i] += y[off + i] * (gy[off + i] - dot);
      }
    });
  }
  return out;
}

Tensor concat_rows(Tape& t, const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: empty input list");
  const int N = parts[0].shape().size() == 2 ? parts[0].shape()[1] : 1;
  int rows = 0;
  bool rg = false;
  for (const auto& p : parts) {
    if (p.shape().size() != 2 || p.shape()[1] != N)
      throw ShapeError("concat_rows: incompatible shape " + shape_str(p.shape()));
    rows += p.shape()[0];
    rg = rg || p.requires_grad();
  }
  Tensor out = Tensor::zeros({rows, N}, rg);
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::memcpy(out.data() + off, p.data(), sizeof(float) * p.numel());
    off += p.numel();
  }
  if (rg) {
    std::vector<std::shared_ptr<TensorImpl>> ins;
    for (const auto& p : parts) ins.push_back(p.shared());
    auto oi = out.shared();
    t.record(TapeNode{ins, oi, [ins, oi]() {
      const float* gy = oi->grad.data();
      std::size_t o = 0;
      for (const auto& p : ins) {
        if (p->requires_grad) kern::axpy(ensure_grad(p), 1.0f, gy + o, p->data.size());
        o += p->data.size();
      }
    }});
  }
  return out;
}

Tensor concat_cols(Tape& t, const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: empty input list");
  const int M = parts[0].shape()[0];
  int cols = 0;
  bool rg = false;
  for (const auto& p : parts) {
    if (p.shape().size() != 2 || p.shape()[0] != M)
      throw ShapeError("concat_cols: incompatible shape " + shape_str(p.shape()));
    cols += p.shape()[1];
    rg = rg || p.requires_grad();
  }
  Tensor out = Tensor::zeros({M, cols}, rg);
  int coff = 0;
  for (const auto& p : parts) {
    const int pc = p.shape()[1];
    for (int i = 0; i < M; ++i)
      std::memcpy(out.data() + static_cast<std::size_t>(i) * cols + coff,
                  p.data() + static_cast<std::size_t>(i) * pc, sizeof(float) * pc);
    coff += pc;
  }
  if (rg) {
    std::vector<std::shared_ptr<TensorImpl>> ins;
    for (const auto& p : parts) ins.push_back(p.shared());
    auto oi = out.shared();
    t.record(TapeNode{ins, oi, [ins, oi, M, cols]() {
      const float* gy = oi->grad.data();
      int co = 0;
      for (const auto& p : ins) {
        const int pc = p->shape[1];
        if (p->requires_grad) {
          float* gp = ensure_grad(p);
          for (int i = 0; i < M; ++i)
            for (int j = 0; j < pc; ++j)
              gp[static_cast<std::size_t>(i) * pc + j] += gy[static_cast<std::size_t>(i) * cols + co + j];
        }
        co += pc;
      }
    }});
  }
  return out;
}

Tensor slice_rows(Tape& t, const Tensor& a, int start, int len) {
  if (a.shape().size() != 2) throw ShapeError("slice_rows: expected 2-D, got " + shape_str(a.shape()));
  const int M = a.shape()[0], N = a.shape()[1];
  if (start < 0 || len <= 0 || start + len > M)
    throw IndexError("slice_rows: range [" + std::to_string(start) + "," + std::to_string(start + len) +
                     ") out of " + std::to_string(M) + " rows");
  Tensor out = Tensor::zeros({len, N}, want_grad(a));
  std::memcpy(out.data(), a.data() + static_cast<std::size_t>(start) * N, sizeof(float) * out.numel());
  if (out.requires_grad()) {
    auto ai = a.shared(), oi = out.shared();
    record_unary(t, a, out, [ai, oi, start, N]() {
      kern::axpy(ensure_grad(ai) + static_cast<std::size_t>(start) * N, 1.0f, oi->grad.data(), oi->data.size());
    });
  }
  return out;
}

Tensor slice_cols(Tape& t, const Tensor& a, int start, int len) {
  if (a.shape().size() != 2) throw ShapeError("slice_cols: expected 2-D, got " + shape_str(a.shape()));
  const int M = a.shape()[0], N = a.shape()[1];
  if (start < 0 || len <= 0 || start + len > N)
    throw IndexError("slice_cols: range [" + std::to_string(start) + "," + std::to_string(start + len) +
                     ") out of " + std::to_string(N) + " cols");
  Tensor out = Tensor::zeros({M, len}, want_grad(a));
  for (int i = 0; i < M; ++i)
    std::memcpy(out.data() + static_cast<std::size_t>(i) * len,
                a.data() + static_cast<std::size_t>(i) * N + start, sizeof(float) * len);
  if (out.requires_grad()) {
    auto ai = a.shared(), oi = out.shared();
    record_unary(t, a, out, [ai, oi, start, len, M, N]() {
      float* ga = ensure_grad(ai);
      const float* gy = oi->grad.data();
      for (int i = 0; i < M; ++i)
        for (int j = 0; j < len; ++j)
          ga[static_cast<std::size_t>(i) * N + start + j] += gy[static_cast<std::size_t>(i) * len + j];
    });
  }
  return out;
}

Tensor embedding(Tape& t, const Tensor& table, const std::vector<int>& ids) {
  if (table.shape().size() != 2) throw ShapeError("embedding: table must be 2-D");
  const int V = table.shape()[0], D = table.shape()[1];
  for (int id : ids)
    if (id < 0 || id >= V)
      throw IndexError("embedding: id " + std::to_string(id) + " out of vocab " + std::to_string(V));
  const int T = static_cast<int>(ids.size());
  Tensor out = Tensor::zeros({T, D}, want_grad(table));
  for (int i = 0; i < T; ++i)
    std::memcpy(out.data() + static_cast<std::size_t>(i) * D,
                table.data() + static_cast<std::size_t>(ids[i]) * D, sizeof(float) * D);
  if (out.requires_grad()) {
    auto ti = table.shared(), oi = out.shared();
    t.record(TapeNode{{ti}, oi, [ti, oi, ids, D]() {
      float* gt = ensure_grad(ti);
      const float* gy = oi->grad.data();
      for (std::size_t i = 0; i < ids.size(); ++i)
        kern::axpy(gt + static_cast<std::size_t>(ids[i]) * D, 1.0f, gy + i * D, D);
    }});
  }
  return out;
}

Tensor rope(Tape& t, const Tensor& a, const std::vector<int>& positions, float base) {
  if (a.shape().size() != 2) throw ShapeError("rope: expected 2-D, got " + shape_str(a.shape()));
  const int T = a.shape()[0], D = a.shape()[1];
  if (static_cast<int>(positions.size()) != T)
    throw ShapeError("rope: positions size " + std::to_string(positions.size()) + " != rows " + std::to_string(T));
  if (D % 2 != 0) throw ShapeError("rope: dim must be even, got " + std::to_string(D));
  Tensor out = Tensor::zeros(a.shape(), want_grad(a));
  for (int i = 0; i < T; ++i)
    kern::rope_row(a.data() + static_cast<std::size_t>(i) * D, out.data() + static_cast<std::size_t>(i) * D, D, positions[i], base, false);
  if (out.requires_grad()) {
    auto ai = a.shared(), oi = out.shared();
    record_unary(t, a, out, [ai, oi, positions, D, base]() {
      float* ga = ensure_grad(ai);
      const float* gy = oi->grad.data();
      std::vector<float> tmp(D);
      for (std::size_t i = 0; i < positions.size(); ++i) {
        kern::rope_row(gy + i * D, tmp.data(), D, positions[i], base, true);
        for (int j = 0; j < D; ++j) ga[i * D + j] += tmp[j];
      }
    });
  }
  return out;
}

Tensor reshape(Tape& t, const Tensor& a, const Shape& shape) {
  if (shape_numel(shape) != a.numel())
    throw ShapeError("reshape: numel mismatch " + shape_str(a.shape()) + " -> " + shape_str(shape));
  Tensor out = Tensor::from(shape, a.vec(), want_grad(a));
  if (out.requires_grad()) {
    auto ai = a.shared(), oi = out.shared();
    record_unary(t, a, out, [ai, oi]() {
      kern::axpy(ensure_grad(ai), 1.0f, oi->grad.data(), ai->data.size());
    });
  }
  return out;
}

Tensor sum(Tape& t, const Tensor& a) {
  float s = 0.0f;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a.data()[i];
  Tensor out = Tensor::scalar(s, want_grad(a));
  if (out.requires_grad()) {
    auto ai = a.shared(), oi = out.shared();
    record_unary(t, a, out, [ai, oi]() {
      float* ga = ensure_grad(ai);
      const float g = oi->grad[0];
      for (std::size_t i = 0; i < ai->data.size(); ++i) ga[i] += g;
    });
  }
  return out;
}

Tensor mean(Tape& t, const Tensor& a) {
  return scale(t, sum(t, a), 1.0f / static_cast<float>(a.numel()));
}

Tensor cross_entropy(Tape& t, const Tensor& logits, int target) {
  const auto& sh = logits.shape();
  if (!(sh.size() == 1 || (sh.size() == 2 && sh[0] == 1)))
    throw ShapeError("cross_entropy: logits must be [V] or [1,V], got " + shape_str(sh));
  const int V = sh.back();
  if (target < 0 || target >= V)
    throw IndexError("cross_entropy: target " + std::to_string(target) + " out of vocab " + std::to_string(V));
  const float* z = logits.data();
  float mx = z[0];
  for (int i = 1; i < V; ++i) mx = std::max(mx, z[i]);
  float lse = 0.0f;
  for (int i = 0; i < V; ++i) lse += std::exp(z[i] - mx);
  const float loss = std::log(lse) + mx - z[target];
  Tensor out = Tensor::scalar(loss, want_grad(logits));
  if (out.requires_grad()) {
    auto li = logits.shared(), oi = out.shared();
    t.record(TapeNode{{li}, oi, [li, oi, target, V]() {
      float* gl = ensure_grad(li);
      const float g = oi->grad[0];
      std::vector<float> p(li->data.begin(), li->data.end());
      kern::softmax_row(p.data(), V);
      for (int i = 0; i < V; ++i) gl[i] += g * p[i];
      gl[target] -= g;
    }});
  }
  return out;
}

Tensor mse(Tape& t, const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape())
    throw ShapeError("mse: shape mismatch " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
  const std::size_t n = pred.numel();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const float d = pred.data()[i] - target.data()[i];
    acc += static_cast<double>(d) * d;
  }
  Tensor out = Tensor::scalar(static_cast<float>(acc / static_cast<double>(n)),
                              want_grad(pred) || want_grad(target));
  if (out.requires_grad()) {
    auto pi = pred.shared(), ti = target.shared(), oi = out.shared();
    t.record(TapeNode{{pi, ti}, oi, [pi, ti, oi, n]() {
      const float g = oi->grad[0] * 2.0f / static_cast<float>(n);
      if (pi->requires_grad) {
        float* gp = ensure_grad(pi);
        for (std::size_t i = 0; i < n; ++i) gp[i] += g * (pi->data[i] - ti->data[i]);
      }
      if (ti->requires_grad) {
        float* gt = ensure_grad(ti);
        for (std::size_t i = 0; i < n; ++i) gt[i] -= g * (pi->data[i] - ti->data[i]);
      }
    }});
  }
  return out;
}

Tensor masked_mse(Tape& t, const Tensor& pred, const Tensor& target, const Tensor& mask) {
  if (pred.shape() != target.shape() || pred.shape() != mask.shape())
    throw ShapeError("masked_mse: shape mismatch " + shape_str(pred.shape()) + " / " +
                     shape_str(target.shape()) + " / " + shape_str(mask.shape()));
  const std::size_t n = pred.numel();
  double wsum = 0.0, acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const float d = pred.data()[i] - target.data()[i];
    acc += static_cast<double>(mask.data()[i]) * d * d;
    wsum += mask.data()[i];
  }
  if (wsum <= 0.0) throw ContractError("masked_mse: mask weight is zero");
  Tensor out = Tensor::scalar(static_cast<float>(acc / wsum), want_grad(pred));
  if (out.requires_grad()) {
    auto pi = pred.shared(), ti = target.shared(), mi = mask.shared(), oi = out.shared();
    const float invw = static_cast<float>(1.0 / wsum);
    t.record(TapeNode{{pi}, oi, [pi, ti, mi, oi, n, invw]() {
      float* gp = ensure_grad(pi);
      const float g = oi->grad[0] * 2.0f * invw;
      for (std::size_t i = 0; i < n; ++i)
        gp[i] += g * mi->data[i] * (pi->data[i] - ti->data[i]);
    }});
  }
  return out;
}

Tensor clamp_max(Tape& t, const Tensor& a, float cap) {
  Tensor out = Tensor::zeros(a.shape(), want_grad(a));
  for (std::size_t i = 0; i < a.numel(); ++i) out.data()[i] = std::min(a.data()[i], cap);
  if (out.requires_grad()) {
    auto ai = a.shared(), oi = out.shared();
    record_unary(t, a, out, [ai, oi, cap]() {
      float* ga = ensure_grad(ai);
      const float* gy = oi->grad.data();
      for (std::size_t i = 0; i < ai->data.size(); ++i)
        if (ai->data[i] < cap) ga[i] += gy[i];
    });
  }
  return out;
}

Tensor weighted_sum(Tape& t, const std::vector<Tensor>& terms, const std::vector<float>& weights) {
  if (terms.size() != weights.size()) throw ContractError("weighted_sum: terms/weights size mismatch");
  if (terms.empty()) throw ContractError("weighted_sum: empty term list");
  float s = 0.0f;
  bool rg = false;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (!terms[i].is_scalar()) throw ContractError("weighted_sum: non-scalar term");
    s += weights[i] * terms[i].item();
    rg = rg || terms[i].requires_grad();
  }
  Tensor out = Tensor::scalar(s, rg);
  if (rg) {
    std::vector<std::shared_ptr<TensorImpl>> ins;
    for (const auto& p : terms) ins.push_back(p.shared());
    auto oi = out.shared();
    t.record(TapeNode{ins, oi, [ins, oi, weights]() {
      const float g = oi->grad[0];
      for (std::size_t i = 0; i < ins.size(); ++i)
        if (ins[i]->requires_grad) ensure_grad(ins[i])[0] += g * weights[i];
    }});
  }
  return out;
}

Tensor mean_of(Tape& t, const std::vector<Tensor>& terms) {
  std::vector<float> w(terms.size(), 1.0f / static_cast<float>(terms.size()));
  return weighted_sum(t, terms, w);
}

}  // namespace somn::ops
