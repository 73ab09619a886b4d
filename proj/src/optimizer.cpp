#include "somn/optimizer.hpp"

#include <cmath>

namespace somn {

Tensor ParameterStore::add(const std::string& name, Tensor t) {
  if (has(name)) throw ContractError("parameter already registered: " + name);
  names_.push_back(name);
  map_.emplace(name, t);
  index_.emplace(name, names_.size() - 1);
  return t;
}

Tensor& ParameterStore::get(const std::string& name) {
  auto it = map_.find(name);
  if (it == map_.end()) throw ContractError("unknown parameter: " + name);
  return it->second;
}

const Tensor& ParameterStore::get(const std::string& name) const {
  auto it = map_.find(name);
  if (it == map_.end()) throw ContractError("unknown parameter: " + name);
  return it->second;
}

std::size_t ParameterStore::total_params() const {
  std::size_t n = 0;
  for (const auto& name : names_) n += map_.at(name).numel();
  return n;
}

void ParameterStore::zero_grads() {
  for (const auto& name : names_) map_.at(name).zero_grad();
}

float ParameterStore::grad_norm() const {
  double acc = 0.0;
  for (const auto& name : names_)
    for (float g : map_.at(name).grad_vec()) acc += static_cast<double>(g) * g;
  return static_cast<float>(std::sqrt(acc));
}

void ParameterStore::clip_grads(float max_norm) {
  const float norm = grad_norm();
  if (norm <= max_norm || norm == 0.0f) return;
  const float s = max_norm / norm;
  for (const auto& name : names_) {
    Tensor& t = const_cast<Tensor&>(static_cast<const ParameterStore*>(this)->get(name));
    if (!t.has_grad()) continue;
    float* g = t.grad();
    for (std::size_t i = 0; i < t.numel(); ++i) g[i] *= s;
  }
}

void ParameterStore::check_finite(bool include_grads) const {
  for (const auto& name : names_) map_.at(name).check_finite(name, include_grads);
}

void adam_step(ParameterStore& params, AdamState& state) {
  for (const auto& name : params.names()) {
    if (!params.get(name).has_grad())
      throw ContractError("adam_step: missing gradient for parameter " + name);
  }
  state.step_count += 1;
  const float bc1 = 1.0f - std::pow(state.beta1, static_cast<float>(state.step_count));
  const float bc2 = 1.0f - std::pow(state.beta2, static_cast<float>(state.step_count));
  for (const auto& name : params.names()) {
    Tensor& t = params.get(name);
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.empty()) m.assign(t.numel(), 0.0f);
    if (v.empty()) v.assign(t.numel(), 0.0f);
    const float* g = t.grad();
    float* w = t.data();
    for (std::size_t i = 0; i < t.numel(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0f - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0f - state.beta2) * g[i] * g[i];
      const float mhat = m[i] / bc1;
      const float vhat = v[i] / bc2;
      w[i] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
  params.zero_grads();
}

}  // namespace somn
