#pragma once

#include <cstddef>
#include <vector>

#include "qvnn/model.hpp"

namespace qvnn {

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t checked = 0;   // components compared
    std::size_t excluded = 0;  // components skipped as kink-adjacent or unmeasurable
};

// Compares the backward pass against central finite differences of the cross-entropy
// loss for every real component of every parameter. Relative error uses
// |a-b| / max(|a|, |b|, 1e-8). Components where the loss is locally non-smooth
// (a relu kink or pooling-argmax flip inside the +/- epsilon bracket) are detected by
// the curvature probe |L+ + L- - 2 L0| > epsilon^1.5 and excluded from the maximum, as
// are components whose gradient is below the finite-difference rounding resolution
// (for example a conv bias that a following batch norm cancels exactly).
// Requires all dropout rates to be zero so the loss is a deterministic function of
// the parameters; training-mode batch-norm statistics are recomputed from the same
// batch on every probe, so they need no special handling.
GradCheckResult finite_diff_check(Model& model, const QTensor& input, const std::vector<int>& labels,
                                  double epsilon = 1e-5);

}  // namespace qvnn
