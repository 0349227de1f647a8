#pragma once

#include <map>
#include <string>

#include "borderflow/params.hpp"

namespace borderflow {

struct LrSchedule {
  enum class Kind { constant, cosine };
  Kind kind = Kind::constant;
  double initial = 1e-3;
  double minimum = 0.0;
  long total_steps = 0;

  static LrSchedule constant_lr(double lr) { return {Kind::constant, lr, lr, 0}; }
  static LrSchedule cosine(double initial, double minimum, long total) { return {Kind::cosine, initial, minimum, total}; }
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  LrSchedule schedule = LrSchedule::constant_lr(1e-3);
};

struct Moments {
  Array first;
  Array second;
};

class OptimizerState {
 public:
  OptimizerState() = default;
  OptimizerState(const ParameterSet& params, AdamConfig config);

  const AdamConfig& config() const { return config_; }
  long step() const { return step_; }
  const std::map<std::string, Moments>& moments() const { return moments_; }

  // For checkpoint restore.
  void restore(long step, std::map<std::string, Moments> moments);

 private:
  friend void adam_step(ParameterSet& params, OptimizerState& state);
  AdamConfig config_;
  long step_ = 0;
  std::map<std::string, Moments> moments_;
};

// lr(step) = min + (initial - min) * (1 + cos(pi * step / total)) / 2 for cosine,
// the initial rate otherwise. Throws std::out_of_range when step exceeds total.
double cosine_annealed_lr(const LrSchedule& schedule, long step);

// Learning rate the next adam_step will use.
double current_lr(const OptimizerState& state);

// One bias-corrected Adam update at t = step + 1, then clears the gradients.
// Throws std::logic_error if any parameter lacks a populated gradient.
void adam_step(ParameterSet& params, OptimizerState& state);

}  // namespace borderflow
