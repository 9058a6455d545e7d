// Central finite-difference gradient checking at f64. The checker is the
// independent oracle for every differentiable operation: it re-evaluates the
// forward pass through fresh tapes and never reuses the analytic path.
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cdsp/autodiff.hpp"

namespace cdsp {

// Builds a scalar loss from leaves that were created on `tape`.
using GraphBuilder =
    std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

// Compares backward() gradients of `build` against central finite differences
// for every element of every input with wrt[i] set. Returns the maximum
// relative error max(|fd - analytic| / max(1, |fd|, |analytic|)).
double finite_diff_max_rel_err(std::vector<TensorData<double>> inputs,
                               const std::vector<bool>& wrt, const GraphBuilder& build,
                               double h = 1e-5);

struct GradCheckResult {
  std::string name;
  int instances = 0;
  double max_rel_err = 0.0;
  bool pass = false;
};

// Named finite-difference suites over random instances: tensor primitives,
// every supervision loss (both entropy sign modes), and the rectification
// pipeline end to end. `tolerance` applies per instance.
std::vector<GradCheckResult> run_all_grad_checks(int instances = 20, uint64_t seed = 20240901,
                                                 double tolerance = 1e-4);

}  // namespace cdsp
