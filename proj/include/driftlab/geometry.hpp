#pragma once

#include <cmath>
#include <cstddef>

namespace driftlab {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;

    friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
    friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
    friend Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
    friend Vec2 operator*(Vec2 a, double s) { return {s * a.x, s * a.y}; }
    friend bool operator==(Vec2 a, Vec2 b) = default;

    double norm() const { return std::hypot(x, y); }
    double squared_norm() const { return x * x + y * y; }
};

/// Shortest signed representative of `value` modulo `period`, in [-period/2, period/2].
double wrap_signed(double value, double period);

/// Representative of `value` in [origin, origin + period).
double wrap_into(double value, double origin, double period);

/**
 * Regular planar grid on a doubly periodic domain, in kilometers and hours.
 *
 * Values live at cell centers: cell (row, col) is centered at
 * (x0 + (col + 0.5) h, y0 + (row + 0.5) h). Snapshots are spaced by `delta`
 * hours and there are k_steps + 1 of them.
 */
struct GridSpec {
    int nx = 32;
    int ny = 32;
    double h = 10.0;
    double delta = 6.0;
    int k_steps = 36;
    double x0 = 0.0;
    double y0 = 0.0;

    /// Throws ConfigError when an invariant is violated.
    void validate() const;

    double width() const { return nx * h; }
    double height() const { return ny * h; }
    double duration() const { return k_steps * delta; }
    int snapshots() const { return k_steps + 1; }
    std::size_t cells() const { return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny); }

    Vec2 cell_center(int row, int col) const { return {x0 + (col + 0.5) * h, y0 + (row + 0.5) * h}; }
    Vec2 wrap(Vec2 p) const;
    /// Shortest periodic displacement from `from` to `to`.
    Vec2 displacement(Vec2 from, Vec2 to) const;
    double distance(Vec2 a, Vec2 b) const { return displacement(a, b).norm(); }

    friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

} // namespace driftlab
