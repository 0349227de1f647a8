#include "borderflow/optim.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace borderflow {

OptimizerState::OptimizerState(const ParameterSet& params, AdamConfig config) : config_(config) {
  if (!(config_.beta1 > 0.0 && config_.beta1 < 1.0) || !(config_.beta2 > 0.0 && config_.beta2 < 1.0) ||
      !(config_.eps > 0.0))
    throw std::invalid_argument("adam: require 0 < beta1, beta2 < 1 and eps > 0");
  if (!(config_.schedule.initial > 0.0)) throw std::invalid_argument("adam: learning rate must be positive");
  for (const auto& [name, p] : params)
    moments_.emplace(name, Moments{Array(p.value.shape(), 0.0), Array(p.value.shape(), 0.0)});
}

void OptimizerState::restore(long step, std::map<std::string, Moments> moments) {
  if (step < 0) throw std::invalid_argument("adam: negative step count");
  for (const auto& [name, m] : moments_) {
    auto it = moments.find(name);
    if (it == moments.end() || it->second.first.shape() != m.first.shape() ||
        it->second.second.shape() != m.second.shape())
      throw std::invalid_argument("adam: restored moments do not match parameter '" + name + "'");
  }
  step_ = step;
  moments_ = std::move(moments);
}

double cosine_annealed_lr(const LrSchedule& schedule, long step) {
  if (schedule.kind == LrSchedule::Kind::constant) return schedule.initial;
  if (step < 0 || step > schedule.total_steps)
    throw std::out_of_range("cosine schedule: step " + std::to_string(step) + " outside [0, " +
                            std::to_string(schedule.total_steps) + "]");
  if (step == 0) return schedule.initial;
  if (step == schedule.total_steps) return schedule.minimum;
  const double phase = std::numbers::pi * static_cast<double>(step) / static_cast<double>(schedule.total_steps);
  return schedule.minimum + 0.5 * (schedule.initial - schedule.minimum) * (1.0 + std::cos(phase));
}

double current_lr(const OptimizerState& state) { return cosine_annealed_lr(state.config().schedule, state.step()); }

void adam_step(ParameterSet& params, OptimizerState& state) {
  for (const auto& [name, p] : params) {
    if (!p.grad_ready) throw std::logic_error("adam: no gradient for parameter '" + name + "'");
    if (!state.moments_.count(name)) throw std::logic_error("adam: parameter '" + name + "' unknown to optimizer");
  }
  const double lr = current_lr(state);
  const long t = state.step_ + 1;
  const auto& cfg = state.config_;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (auto& [name, p] : params) {
    Moments& m = state.moments_.at(name);
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m.first[i] = cfg.beta1 * m.first[i] + (1.0 - cfg.beta1) * g;
      m.second[i] = cfg.beta2 * m.second[i] + (1.0 - cfg.beta2) * g * g;
      const double mhat = m.first[i] / c1;
      const double vhat = m.second[i] / c2;
      p.value[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
    p.grad.fill(0.0);
    p.grad_ready = false;
  }
  state.step_ = t;
}

}  // namespace borderflow
