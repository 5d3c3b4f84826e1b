#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "recapd/autodiff.hpp"

namespace recapd {

struct GradCheckOptions {
  /// Central-difference step.
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Denominator floor of the relative error. Gradients whose magnitude is
  /// below this are effectively compared in absolute terms.
  double abs_floor = 1e-6;
};

struct ParameterCheck {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckReport {
  std::vector<ParameterCheck> params;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

/// Builds a scalar loss on the given tape. Must reference the checked
/// parameters through Tape::param and must be deterministic.
using ScalarFunction = std::function<Var(Tape&)>;

inline double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

/// Compares reverse-mode gradients against central finite differences for
/// every element of every parameter.
inline GradCheckReport grad_check(const ScalarFunction& f, std::span<Parameter* const> params,
                                  const GradCheckOptions& opts = {}) {
  if (!(opts.step > 0.0)) throw ValueError("grad_check: step must be positive");
  auto evaluate = [&f]() {
    Tape tape;
    const double v = f(tape).value()[0];
    if (!std::isfinite(v)) throw NumericError("grad_check: function produced a non-finite value");
    return v;
  };

  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape;
    Var loss = f(tape);
    if (!std::isfinite(loss.value()[0])) throw NumericError("grad_check: function produced a non-finite value");
    tape.backward(loss);
  }
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (Parameter* p : params) analytic.push_back(p->grad);

  GradCheckReport report;
  report.tolerance = opts.tolerance;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = *params[pi];
    ParameterCheck check;
    check.name = p.name;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double orig = p.value[i];
      p.value[i] = orig + opts.step;
      const double up = evaluate();
      p.value[i] = orig - opts.step;
      const double down = evaluate();
      p.value[i] = orig;
      const double numeric = (up - down) / (2.0 * opts.step);
      const double err = relative_error(analytic[pi][i], numeric, opts.abs_floor);
      if (i == 0 || err > check.max_rel_error) {
        check.max_rel_error = err;
        check.worst_index = i;
        check.analytic = analytic[pi][i];
        check.numeric = numeric;
      }
    }
    report.max_rel_error = std::max(report.max_rel_error, check.max_rel_error);
    report.params.push_back(std::move(check));
  }
  report.passed = report.max_rel_error < opts.tolerance;
  return report;
}

}  // namespace recapd
