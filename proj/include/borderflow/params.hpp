#pragma once

#include <map>
#include <random>
#include <string>

#include "borderflow/array.hpp"

namespace borderflow {

struct Parameter {
  Array value;
  Array grad;
  // Set once a backward pass (or zero_grad) has populated the accumulator;
  // cleared by the optimizer after consuming it.
  bool grad_ready = false;
};

// Named trainable arrays with gradient accumulators of identical shape.
// Iteration order is the lexicographic order of identifiers, which keeps
// checkpoints and optimizer updates deterministic.
class ParameterSet {
 public:
  using Map = std::map<std::string, Parameter>;

  Parameter& add(const std::string& name, Array init);
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;

  void zero_grad();

  Map::iterator begin() { return params_.begin(); }
  Map::iterator end() { return params_.end(); }
  Map::const_iterator begin() const { return params_.begin(); }
  Map::const_iterator end() const { return params_.end(); }

 private:
  Map params_;
};

using Rng = std::mt19937_64;

// Uniform(-bound, bound) with bound = gain * sqrt(6 / (fan_in + fan_out)).
Array glorot_uniform(const Shape& shape, std::size_t fan_in, std::size_t fan_out, Rng& rng, double gain = 1.0);
Array standard_normal(const Shape& shape, Rng& rng);

}  // namespace borderflow
