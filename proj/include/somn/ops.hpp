#pragma once

// Autodiff ops. Every op computes the forward value through the shared
// kernels in somn::kern and, when any input requires grad, records a backward
// closure on the tape. Broadcasting is limited to a trailing-suffix operand
// (bias-style); matmul is 2-D row-major.

#include <vector>

#include "somn/tensor.hpp"

namespace somn::ops {

// test hook: when true, gelu's backward rule is deliberately wrong
// (negative control for gradient checking)
extern bool debug_corrupt_backward;

Tensor add(Tape& t, const Tensor& a, const Tensor& b);
Tensor sub(Tape& t, const Tensor& a, const Tensor& b);
Tensor mul(Tape& t, const Tensor& a, const Tensor& b);
Tensor scale(Tape& t, const Tensor& a, float s);
Tensor matmul(Tape& t, const Tensor& a, const Tensor& b);
Tensor transpose(Tape& t, const Tensor& a);
Tensor relu(Tape& t, const Tensor& a);
Tensor gelu(Tape& t, const Tensor& a);
Tensor layernorm(Tape& t, const Tensor& a, float eps = 1e-5f);
Tensor softmax(Tape& t, const Tensor& a);
Tensor concat_rows(Tape& t, const std::vector<Tensor>& parts);
Tensor concat_cols(Tape& t, const std::vector<Tensor>& parts);
Tensor slice_rows(Tape& t, const Tensor& a, int start, int len);
Tensor slice_cols(Tape& t, const Tensor& a, int start, int len);
Tensor embedding(Tape& t, const Tensor& table, const std::vector<int>& ids);
// rotary rotation of each row by its position
Tensor rope(Tape& t, const Tensor& a, const std::vector<int>& positions, float base = 10000.0f);
Tensor reshape(Tape& t, const Tensor& a, const Shape& shape);

Tensor sum(Tape& t, const Tensor& a);
Tensor mean(Tape& t, const Tensor& a);
// -log softmax(logits)[target]; logits may be [V] or [1,V]
Tensor cross_entropy(Tape& t, const Tensor& logits, int target);
Tensor mse(Tape& t, const Tensor& pred, const Tensor& target);
// sum(mask * (pred-target)^2) / sum(mask); mask is grad-free, sum(mask) > 0
Tensor masked_mse(Tape& t, const Tensor& pred, const Tensor& target, const Tensor& mask);
Tensor clamp_max(Tape& t, const Tensor& a, float cap);
// weights.size() == terms.size(); scalar terms only
Tensor weighted_sum(Tape& t, const std::vector<Tensor>& terms, const std::vector<float>& weights);
Tensor mean_of(Tape& t, const std::vector<Tensor>& terms);

}  // namespace somn::ops
