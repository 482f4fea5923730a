#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "mrnn/diffcore/tape.hpp"

namespace mrnn {

struct NamedArray {
  std::string name;
  Array value;
};

/// Worst-case disagreement between analytic and central-difference gradients
/// for one parameter.
struct ParameterGradError {
  std::string name;
  std::size_t size = 0;
  double max_abs_error = 0.0;
  double max_rel_error = 0.0;
};

struct GradReport {
  double step = 0.0;
  double rel_floor = 0.0;
  std::vector<ParameterGradError> parameters;

  double max_abs_error() const {
    double m = 0.0;
    for (const auto& p : parameters) m = std::max(m, p.max_abs_error);
    return m;
  }
  double max_rel_error() const {
    double m = 0.0;
    for (const auto& p : parameters) m = std::max(m, p.max_rel_error);
    return m;
  }
  bool passed(double tolerance) const { return max_rel_error() <= tolerance; }
};

/// Builds a scalar on the given tape from parameter leaves (same order as
/// the parameter list handed to finite_diff_check).
using ScalarFunction = std::function<Var(Tape&, const std::vector<Var>&)>;

namespace detail {

inline double evaluate_scalar(const ScalarFunction& f, const std::vector<NamedArray>& params) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (const auto& p : params) leaves.push_back(tape.constant(p.value));
  const Var out = f(tape, leaves);
  if (out.value().size() != 1) throw UsageError("finite_diff_check: function is not scalar");
  return out.value()[0];
}

}  // namespace detail

/// Compares reverse-mode gradients of `f` with central differences
/// (f(x+h) - f(x-h)) / 2h for every coordinate of every parameter.
/// Relative error per coordinate is |a - n| / max(|a|, |n|, rel_floor).
inline GradReport finite_diff_check(const ScalarFunction& f, std::vector<NamedArray> params,
                                    double step = 1e-5, double rel_floor = 1e-6) {
  GradReport report;
  report.step = step;
  report.rel_floor = rel_floor;

  Tape tape;
  std::vector<Var> leaves;
  for (const auto& p : params) leaves.push_back(tape.parameter(p.value));
  const Var out = f(tape, leaves);
  tape.backward(out);
  const double base = out.value()[0];

  if (detail::evaluate_scalar(f, params) != base || detail::evaluate_scalar(f, params) != base) {
    throw CheckError("finite_diff_check: forward function is not deterministic");
  }

  for (std::size_t p = 0; p < params.size(); ++p) {
    const Array analytic = tape.grad(leaves[p]);
    ParameterGradError err;
    err.name = params[p].name;
    err.size = analytic.size();
    auto values = params[p].value.data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double original = values[i];
      values[i] = original + step;
      const double plus = detail::evaluate_scalar(f, params);
      values[i] = original - step;
      const double minus = detail::evaluate_scalar(f, params);
      values[i] = original;
      const double numeric = (plus - minus) / (2.0 * step);
      const double a = analytic[i];
      const double abs_err = std::abs(a - numeric);
      const double denom = std::max({std::abs(a), std::abs(numeric), rel_floor});
      err.max_abs_error = std::max(err.max_abs_error, abs_err);
      err.max_rel_error = std::max(err.max_rel_error, abs_err / denom);
    }
    report.parameters.push_back(std::move(err));
  }
  return report;
}

}  // namespace mrnn
