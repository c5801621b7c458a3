#pragma once

#include <functional>
#include <vector>

#include "lcl/numerics/tape.hpp"

namespace lcl {

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t entries = 0;
};

/// Compares reverse-mode gradients of `loss` against central differences for
/// every entry of every parameter. `loss` builds a scalar on the given tape
/// from the current parameter values. Relative error per entry is
/// |analytic - fd| / (|analytic| + |fd| + 1e-10).
GradCheckResult grad_check(const std::function<Var(Tape&)>& loss, const std::vector<Parameter*>& params,
                           double eps = 1e-6);

}  // namespace lcl
