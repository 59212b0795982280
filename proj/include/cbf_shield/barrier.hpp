#pragma once

#include <vector>

#include "cbf_shield/core.hpp"

namespace cbf {

// Affine-in-u derivative coefficients of a barrier at one maximizer time:
// Bdot(x, u) = lf + lg * u. One row per maximizer feeds one QP constraint.
struct BarrierRow {
    double lf = 0.0;
    Row3 lg = Row3::Zero();
    double t = 0.0;  // maximizer time the row was evaluated at
};

// Common shape both barrier constructions reduce to for the safety filter.
struct BarrierConstraint {
    double value = 0.0;
    std::vector<BarrierRow> rows;
};

}  // namespace cbf
