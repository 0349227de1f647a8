#include "borderflow/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace borderflow {
namespace {

double evaluate(const Program& program) {
  Tape tape;
  return program(tape).value().item();
}

}  // namespace

GradCheckReport finite_difference_check(const Program& program, ParameterSet& params,
                                        const GradCheckOptions& options) {
  if (!(options.step > 0.0)) throw std::invalid_argument("gradcheck: step must be positive");
  params.zero_grad();
  {
    Tape tape;
    Var out = program(tape);
    tape.backward(out);
  }
  if (options.analytic_hook) options.analytic_hook(params);

  GradCheckReport report;
  for (auto& [name, p] : params) {
    const Array analytic = p.grad;
    const std::size_t n = p.value.size();
    std::size_t stride = 1;
    if (options.max_coords_per_param && n > options.max_coords_per_param)
      stride = (n + options.max_coords_per_param - 1) / options.max_coords_per_param;
    double worst = 0.0;
    for (std::size_t i = 0; i < n; i += stride) {
      const double saved = p.value[i];
      p.value[i] = saved + options.step;
      const double up = evaluate(program);
      p.value[i] = saved - options.step;
      const double down = evaluate(program);
      p.value[i] = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double a = analytic[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
      const double rel = std::abs(a - numeric) / denom;
      worst = std::max(worst, rel);
      ++report.coords_checked;
      if (!(rel < options.tolerance)) report.failures.push_back({name, i, a, numeric, rel});
    }
    report.per_param.emplace_back(name, worst);
    report.max_rel_error = std::max(report.max_rel_error, worst);
  }
  params.zero_grad();
  return report;
}

}  // namespace borderflow
