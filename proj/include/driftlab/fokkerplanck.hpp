#pragma once

#include <string>
#include <vector>

#include "driftlab/autodiff.hpp"
#include "driftlab/field.hpp"
#include "driftlab/geometry.hpp"

namespace driftlab {

/// Probability mass per cell for a run of snapshots, laid out [snapshot][row][col].
struct DensityGrid {
    GridSpec spec;
    int snapshots = 0;
    std::vector<double> p;

    std::vector<double> slice(int k) const;
    double mass(int k) const;
};

/**
 * Initial mass around r0.
 *
 * sigma_km == 0 splits the unit mass bilinearly over the four nearest cell
 * centers; sigma_km > 0 uses a periodic (minimum-image) Gaussian renormalized
 * to total mass 1.
 */
DensityGrid init_density(const GridSpec& spec, Vec2 r0, double sigma_km);

/// Number of upwind substeps per delta: dt = min(delta, 0.5 h / vmax), split evenly into delta.
int upwind_substeps(const GridSpec& spec, double vmax);

/**
 * First-order upwind finite-volume transport of the mass by the field.
 *
 * Face velocities are averages of the two adjacent cell centers, evaluated at
 * the substep midpoint time. The flux form conserves mass exactly up to
 * rounding. Returns K+1 snapshots, the first equal to p0.
 */
DensityGrid propagate_density(const VelocityField& field, const DensityGrid& p0);

/// Circular-mean expected position of one (ny, nx) mass slice; throws DegenerateError on zero mass.
Vec2 expected_position(const GridSpec& spec, const std::vector<double>& slice);

/// Expected positions of every snapshot.
std::vector<Vec2> expected_track(const DensityGrid& density);

/// Differentiable propagation: u, v (K+1, ny, nx) and p0 (ny, nx) -> mass (K+1, ny, nx).
ad::Var propagate_density_op(const GridSpec& spec, const ad::Var& u, const ad::Var& v, const ad::Var& p0);

/// Periodic axes of the grid, for ad::soft_argmax.
ad::PeriodicAxis x_axis_of(const GridSpec& spec);
ad::PeriodicAxis y_axis_of(const GridSpec& spec);

/// CSV with header `t,row,col,mass`.
std::string density_csv(const DensityGrid& density);
/// "DPDF": magic, u32 version=1, u32 nx, ny, snapshots, f64 h, delta, x0, y0, masses.
std::vector<char> encode_density(const DensityGrid& density);
DensityGrid decode_density(std::vector<char> bytes, const std::string& what = "density");

} // namespace driftlab
