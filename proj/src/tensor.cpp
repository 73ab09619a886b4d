#include "somn/tensor.hpp"

#include <cmath>
#include <sstream>

namespace somn {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << "]";
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  for (int d : shape)
    if (d <= 0) throw ShapeError("tensor extent must be positive, got shape " + shape_str(shape));
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape;
  impl->data.assign(shape_numel(shape), 0.0f);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::from(const Shape& shape, std::vector<float> data, bool requires_grad) {
  if (shape_numel(shape) != data.size())
    throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                     shape_str(shape));
  Tensor t = zeros(shape, requires_grad);
  t.p_->data = std::move(data);
  return t;
}

Tensor Tensor::scalar(float v, bool requires_grad) {
  return from({1}, {v}, requires_grad);
}

float* Tensor::grad() {
  if (p_->grad.empty()) p_->grad.assign(p_->data.size(), 0.0f);
  return p_->grad.data();
}

void Tensor::zero_grad() { p_->grad.assign(p_->data.size(), 0.0f); }

float Tensor::item() const {
  if (p_->data.size() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(p_->shape));
  return p_->data[0];
}

void Tensor::check_finite(const std::string& what, bool include_grad) const {
  for (float v : p_->data)
    if (!std::isfinite(v)) throw NumericError("non-finite value in " + what);
  if (include_grad)
    for (float v : p_->grad)
      if (!std::isfinite(v)) throw NumericError("non-finite gradient in " + what);
}

void Tape::backward(const Tensor& root) {
  if (!root.is_scalar())
    throw ContractError("backward root must be scalar, got shape " + shape_str(root.shape()));
  if (!root.requires_grad())
    throw ContractError("backward root does not require grad");
  root.impl()->grad.assign(1, 1.0f);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->output && it->output->grad.empty()) continue;  // not reachable from root
    it->backward();
  }
}

}  // namespace somn
