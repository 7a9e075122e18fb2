#include "driftlab/geometry.hpp"

#include <string>

#include "driftlab/error.hpp"

namespace driftlab {

double wrap_signed(double value, double period) {
    return value - period * std::round(value / period);
}

double wrap_into(double value, double origin, double period) {
    double r = std::fmod(value - origin, period);
    if (r < 0.0) {
        r += period;
    }
    if (r >= period) {
        r = 0.0;
    }
    return origin + r;
}

void GridSpec::validate() const {
    if (nx < 4 || ny < 4) {
        throw ConfigError("grid needs nx, ny >= 4 (got " + std::to_string(nx) + "x" + std::to_string(ny) + ")");
    }
    if (!(h > 0.0) || !std::isfinite(h)) {
        throw ConfigError("grid cell size h must be positive");
    }
    if (!(delta > 0.0) || !std::isfinite(delta)) {
        throw ConfigError("grid time step delta must be positive");
    }
    if (k_steps < 1) {
        throw ConfigError("grid needs k_steps >= 1");
    }
    if (!std::isfinite(x0) || !std::isfinite(y0)) {
        throw ConfigError("grid origin must be finite");
    }
}

Vec2 GridSpec::wrap(Vec2 p) const {
    return {wrap_into(p.x, x0, width()), wrap_into(p.y, y0, height())};
}

Vec2 GridSpec::displacement(Vec2 from, Vec2 to) const {
    return {wrap_signed(to.x - from.x, width()), wrap_signed(to.y - from.y, height())};
}

} // namespace driftlab
