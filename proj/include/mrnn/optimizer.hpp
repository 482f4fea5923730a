#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "mrnn/diffcore/array.hpp"

namespace mrnn {

struct AdamHypers {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
  bool decoupled_weight_decay = false;
};

/// First/second moment accumulators, one per parameter array.
struct OptimizerState {
  AdamHypers hypers;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> first;
  std::vector<std::vector<double>> second;

  static OptimizerState for_shapes(const std::vector<std::size_t>& sizes, AdamHypers hypers) {
    OptimizerState s;
    s.hypers = hypers;
    for (std::size_t n : sizes) {
      s.first.emplace_back(n, 0.0);
      s.second.emplace_back(n, 0.0);
    }
    return s;
  }
};

/// One bias-corrected ADAM update. Weight decay is added to the gradient
/// (g + wd * theta) before the moment updates unless decoupled, in which
/// case theta is shrunk by lr * wd after the step.
inline void adam_step(const std::vector<Array*>& params, const std::vector<Array>& grads, OptimizerState& state) {
  if (params.size() != grads.size() || params.size() != state.first.size()) {
    throw ShapeError("adam_step: parameter, gradient and moment counts differ");
  }
  const AdamHypers& h = state.hypers;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(h.beta1, t);
  const double c2 = 1.0 - std::pow(h.beta2, t);
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto theta = params[p]->data();
    const auto g = grads[p].data();
    auto& m = state.first[p];
    auto& v = state.second[p];
    if (g.size() != theta.size() || m.size() != theta.size()) throw ShapeError("adam_step: shape mismatch");
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double old = theta[i];
      const double gi = h.decoupled_weight_decay ? g[i] : g[i] + h.weight_decay * old;
      m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * gi;
      v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * gi * gi;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      theta[i] = old - h.learning_rate * mhat / (std::sqrt(vhat) + h.epsilon);
      if (h.decoupled_weight_decay) theta[i] -= h.learning_rate * h.weight_decay * old;
    }
  }
}

}  // namespace mrnn
