#pragma once

#include <random>

#include "mrnn/diffcore/gradcheck.hpp"
#include "mrnn/model.hpp"

namespace mrnn {

/// Finite-difference check of d dist / d theta for one pair, over every
/// learnable array of the model. Batch norm runs in eval mode so the
/// forward function stays deterministic under perturbation.
inline GradReport check_model_gradients(const MrnnModel& model, const Array& query, const Array& doc,
                                        double step = 1e-5, double rel_floor = 1e-6) {
  const ScalarFunction f = [&](Tape& tape, const std::vector<Var>& leaves) {
    const BoundModel bound = assemble_bound(model, leaves);
    return forward_pair(tape, bound, model, query, doc).dist;
  };
  return finite_diff_check(f, model.named_parameters(), step, rel_floor);
}

/// Uniform(-1, 1) token matrix, handy for probes and checks.
inline Array random_tokens(std::size_t length, std::size_t width, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Array a(Shape{length, width});
  for (double& v : a.data()) v = u(rng);
  return a;
}

}  // namespace mrnn
