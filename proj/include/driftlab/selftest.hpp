#pragma once

#include <string>
#include <vector>

namespace driftlab {

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

/// Fast invariant suite over every module (interpolation, orbits, mass, gradients, losses, round trips).
std::vector<CheckResult> run_selftest();

} // namespace driftlab
