#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "driftlab/autodiff.hpp"

namespace driftlab::ad {

/// Builds a scalar from leaves bound to the given tape.
using ScalarGraph = std::function<Var(Tape& tape, const std::vector<Var>& inputs)>;

struct GradCheckReport {
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    std::string worst; // "input i, element j"
    int checked = 0;
    /// Entries left out because the difference quotient was not self-consistent.
    int inconsistent = 0;
};

struct GradCheckOptions {
    /// Step relative to max(1, |x|); near cbrt(machine epsilon), where truncation and rounding balance.
    double step = 1e-5;
    /// Entries whose gradients are below floor * max|grad| are compared against that floor.
    double floor = 1e-4;
    /// Check at most this many entries per input (evenly strided); <= 0 checks all.
    int max_entries = 0;
    /// When positive, entries whose central differences at step and step/2 differ by more than this
    /// (relative) are counted in `inconsistent` instead of compared, e.g. a ReLU kink inside the stencil.
    double consistency = 0.0;
};

/**
 * Compares reverse-mode gradients of f against central finite differences
 * (f(x+e) - f(x-e)) / 2e.
 */
GradCheckReport gradient_check(const ScalarGraph& f, const std::vector<Tensor>& inputs,
                               const GradCheckOptions& options = {});

} // namespace driftlab::ad
