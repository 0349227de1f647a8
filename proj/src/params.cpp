#include "borderflow/params.hpp"

#include <cmath>

namespace borderflow {

Parameter& ParameterSet::add(const std::string& name, Array init) {
  if (params_.count(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
  Parameter p;
  p.grad = Array(init.shape(), 0.0);
  p.value = std::move(init);
  return params_.emplace(name, std::move(p)).first->second;
}

Parameter& ParameterSet::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return it->second;
}

const Parameter& ParameterSet::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return it->second;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, p] : params_) n += p.value.size();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& [_, p] : params_) {
    p.grad.fill(0.0);
    p.grad_ready = true;
  }
}

Array glorot_uniform(const Shape& shape, std::size_t fan_in, std::size_t fan_out, Rng& rng, double gain) {
  const double bound = gain * std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-bound, bound);
  Array a(shape);
  for (auto& v : a.values()) v = u(rng);
  return a;
}

Array standard_normal(const Shape& shape, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Array a(shape);
  for (auto& v : a.values()) v = n(rng);
  return a;
}

}  // namespace borderflow
