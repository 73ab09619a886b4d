#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "somn/tensor.hpp"

namespace somn {

// All trainable tensors, keyed by canonical name, iterated in insertion order.
class ParameterStore {
 public:
  Tensor add(const std::string& name, Tensor t);
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool has(const std::string& name) const { return index_.count(name) != 0; }
  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return names_.size(); }
  std::size_t total_params() const;

  void zero_grads();       // allocates + zeroes every grad buffer
  float grad_norm() const; // global L2 over all grads (missing buffers count as zero)
  void clip_grads(float max_norm);
  void check_finite(bool include_grads) const;

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, Tensor> map_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct AdamState {
  long step_count = 0;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float epsilon = 1e-8f;
  float learning_rate = 1e-3f;
  std::unordered_map<std::string, std::vector<float>> m, v;
};

// Standard Adam with bias correction. Requires every parameter to carry a
// populated grad buffer; zeroes grads afterwards.
void adam_step(ParameterStore& params, AdamState& state);

}  // namespace somn
