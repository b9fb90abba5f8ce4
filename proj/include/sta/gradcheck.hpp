#pragma once

#include <functional>
#include <span>

#include "sta/autodiff.hpp"

namespace sta {

// Builds a scalar loss from leaf Vars bound to the given inputs, in order.
// Must be a pure function of the graph and the current input values, since
// the checker re-evaluates it many times.
using GradCheckFn = std::function<Var(Graph&, std::span<const Var>)>;

// Compares reverse-mode gradients against central finite differences for
// every entry of every input. Returns the maximum relativized error
// |analytic - numeric| / max(1, |analytic|, |numeric|).
//
// Inputs are restricted to at most 64 elements each (contract error
// otherwise) to keep the finite-difference sweep honest and fast; the step
// must lie in (0, 1e-3].
double grad_check(const GradCheckFn& f, std::span<Tensor> inputs, double step = 1e-5);

}  // namespace sta
