#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "lrasr/params.hpp"

namespace lrasr::nn {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // "<input>[<flat index>]" of the worst coordinate
  int coords_checked = 0;
};

// Relative error used throughout: |a - n| / max(|a|, |n|, 1e-5). The floor
// keeps vanishing gradients from turning finite-difference round-off into
// huge ratios.
double relative_error(double analytic, double numeric);

using InputClosure = std::function<Var(Tape<double>&, std::span<const Var>)>;

// Compares the analytic gradient of a scalar closure against central
// differences (f(x+eps) - f(x-eps)) / 2eps. max_coords <= 0 checks every
// coordinate; otherwise a seeded sample of that many per input.
GradCheckResult grad_check(const InputClosure& f, std::vector<Matrix<double>> inputs,
                           double eps = 1e-5, int max_coords = 0, uint64_t seed = 0);

using StoreClosure = std::function<Var(ParamBinding<double>&)>;

// Same, for every trainable tensor of a parameter store. Gradients of frozen
// tensors are not checked.
GradCheckResult grad_check(const StoreClosure& f, ParamStore<double>& store,
                           double eps = 1e-5, int max_coords = 0, uint64_t seed = 0);

}  // namespace lrasr::nn
