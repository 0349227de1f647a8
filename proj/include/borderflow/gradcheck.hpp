#pragma once

#include <functional>
#include <string>
#include <vector>

#include "borderflow/autodiff.hpp"

namespace borderflow {

// Builds a scalar on the given tape; parameters enter through tape.parameter().
using Program = std::function<Var(Tape&)>;

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-6;
  // Relative error is |analytic - numeric| / max(|analytic|, |numeric|, floor).
  double floor = 1e-3;
  // 0 checks every coordinate; otherwise an evenly strided subset per parameter.
  std::size_t max_coords_per_param = 0;
  // Called on the analytic gradients before comparison (fault injection in tests).
  std::function<void(ParameterSet&)> analytic_hook;
};

struct CoordinateError {
  std::string param;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  std::vector<std::pair<std::string, double>> per_param;  // max relative error per parameter
  std::vector<CoordinateError> failures;
  bool passed() const { return failures.empty(); }
};

// Central differences (f(p+h) - f(p-h)) / 2h against reverse-mode gradients.
// Leaves parameter values untouched and gradient accumulators zeroed.
GradCheckReport finite_difference_check(const Program& program, ParameterSet& params,
                                        const GradCheckOptions& options = {});

}  // namespace borderflow
