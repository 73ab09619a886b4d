#pragma once

// Dense f32 tensors and the reverse-mode tape. A Tensor is a cheap handle;
// the tape records backward closures in creation order and replays them in
// reverse. Tapes are rebuilt per training step.

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "somn/error.hpp"

namespace somn {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

struct TensorImpl {
  Shape shape;
  std::vector<float> data;
  bool requires_grad = false;
  std::vector<float> grad;  // empty until touched by backward
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor from(const Shape& shape, std::vector<float> data, bool requires_grad = false);
  static Tensor scalar(float v, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(p_); }
  const Shape& shape() const { return p_->shape; }
  std::size_t numel() const { return p_->data.size(); }
  bool is_scalar() const { return p_->data.size() == 1; }

  float* data() { return p_->data.data(); }
  const float* data() const { return p_->data.data(); }
  std::vector<float>& vec() { return p_->data; }
  const std::vector<float>& vec() const { return p_->data; }

  bool requires_grad() const { return p_->requires_grad; }
  bool has_grad() const { return !p_->grad.empty(); }
  // allocates a zero grad buffer on first use
  float* grad();
  const std::vector<float>& grad_vec() const { return p_->grad; }
  void zero_grad();
  float item() const;

  TensorImpl* impl() const { return p_.get(); }
  std::shared_ptr<TensorImpl> shared() const { return p_; }

  // throws NumericError naming `what` if data (or grad) holds NaN/Inf
  void check_finite(const std::string& what, bool include_grad = false) const;

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> p) : p_(std::move(p)) {}
  std::shared_ptr<TensorImpl> p_;
};

struct TapeNode {
  // inputs/output kept for topology introspection; backward does the work
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::shared_ptr<TensorImpl> output;
  std::function<void()> backward;
};

class Tape {
 public:
  void record(TapeNode node) { nodes_.push_back(std::move(node)); }
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  // Seeds root grad with 1 and runs every node once, in reverse order.
  void backward(const Tensor& root);

 private:
  std::vector<TapeNode> nodes_;
};

}  // namespace somn
