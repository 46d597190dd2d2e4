#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "embvos/tape.hpp"

namespace embvos {

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  Index worst_index = -1;
  double analytic = 0.0;
  double numeric = 0.0;
  Index checked = 0;
};

/// Compares backward() against central differences for every entry of
/// every parameter. The error per entry is
/// |analytic - numeric| / max(1, |numeric|).
///
/// f must build its graph on the given tape (binding params through
/// Tape::parameter) and be deterministic.
template <typename T = double>
GradCheckReport grad_check_report(const std::function<Var<T>(Tape<T>&)>& f,
                                  const std::vector<Parameter<T>*>& params, double eps = 1e-6) {
  if (!(eps >= 1e-7 && eps <= 1e-4)) throw ContractError("grad_check: eps must lie in [1e-7, 1e-4]");
  auto evaluate = [&f]() {
    Tape<T> tape;
    const T v = f(tape).value()[0];
    if (!std::isfinite(static_cast<double>(v))) throw NumericError("grad_check: non-finite function value");
    return static_cast<double>(v);
  };

  for (Parameter<T>* p : params) p->zero_grad();
  {
    Tape<T> tape;
    Var<T> out = f(tape);
    if (!std::isfinite(static_cast<double>(out.value()[0])))
      throw NumericError("grad_check: non-finite function value");
    tape.backward(out);
  }

  GradCheckReport report;
  for (Parameter<T>* p : params) {
    for (Index i = 0; i < p->value.size(); ++i) {
      const T saved = p->value[i];
      p->value[i] = saved + static_cast<T>(eps);
      const double plus = evaluate();
      p->value[i] = saved - static_cast<T>(eps);
      const double minus = evaluate();
      p->value[i] = saved;
      const double numeric = (plus - minus) / (2.0 * eps);
      const double analytic = static_cast<double>(p->grad[i]);
      if (!std::isfinite(analytic)) throw NumericError("grad_check: non-finite analytic gradient");
      const double err = std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
      ++report.checked;
      if (err > report.max_relative_error || report.worst_index < 0) {
        report.max_relative_error = std::max(report.max_relative_error, err);
        if (err >= report.max_relative_error) {
          report.worst_parameter = p->name;
          report.worst_index = i;
          report.analytic = analytic;
          report.numeric = numeric;
        }
      }
    }
  }
  return report;
}

template <typename T = double>
double grad_check(const std::function<Var<T>(Tape<T>&)>& f, const std::vector<Parameter<T>*>& params,
                  double eps = 1e-6) {
  return grad_check_report<T>(f, params, eps).max_relative_error;
}

}  // namespace embvos
