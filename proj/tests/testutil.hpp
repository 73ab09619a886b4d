#pragma once

// Shared test helpers: finite-difference gradient oracle.

#include <cmath>
#include <functional>
#include <vector>

#include "somn/rng.hpp"
#include "somn/tensor.hpp"

namespace somn::testutil {

struct FdReport {
  double max_rel_err = 0.0;
  int probes = 0;
  std::string worst;
};

// Agreement rule: |ad - fd| <= 1e-5 counts as exact, otherwise the relative
// error |ad - fd| / max(|ad|, |fd|) is reported.
inline double fd_rel_err(double ad, double fd) {
  const double diff = std::abs(ad - fd);
  if (diff <= 1e-5) return 0.0;
  return diff / std::max(std::abs(ad), std::abs(fd));
}

// loss() must rebuild the computation from current parameter values.
// grads must already be populated (one backward pass before the call).
template <typename Loss>
FdReport fd_check(const std::vector<std::pair<std::string, Tensor>>& params, Loss&& loss, Rng& rng,
                  int probes, float h = 1e-2f) {
  FdReport rep;
  std::vector<std::pair<int, int>> flat;  // (param index, element)
  for (int pi = 0; pi < static_cast<int>(params.size()); ++pi)
    for (int i = 0; i < static_cast<int>(params[pi].second.numel()); ++i) flat.push_back({pi, i});
  for (int probe = 0; probe < probes; ++probe) {
    const auto [pi, i] = flat[rng.next_u64() % flat.size()];
    Tensor t = params[pi].second;
    float* wv = t.data();
    const float saved = wv[i];
    wv[i] = saved + h;
    const double lp = loss();
    wv[i] = saved - h;
    const double lm = loss();
    wv[i] = saved;
    const double fd = (lp - lm) / (2.0 * static_cast<double>(h));
    const double ad = t.grad_vec().empty() ? 0.0 : t.grad_vec()[i];
    const double err = fd_rel_err(ad, fd);
    if (err > rep.max_rel_err) {
      rep.max_rel_err = err;
      rep.worst = params[pi].first + "[" + std::to_string(i) + "]";
    }
    rep.probes += 1;
  }
  return rep;
}

}  // namespace somn::testutil
