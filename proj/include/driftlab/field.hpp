#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "driftlab/geometry.hpp"

namespace driftlab {

/**
 * Time sequence of gridded (u, v) velocities in km/h.
 *
 * Arrays have shape (K+1, ny, nx) laid out [time][row][col]. Fields are
 * immutable once built; use the generators or from_arrays().
 */
class VelocityField {
  public:
    VelocityField() = default;
    /// Validates shapes and finiteness, then records vmax.
    static VelocityField from_arrays(const GridSpec& spec, std::vector<double> u, std::vector<double> v);

    const GridSpec& spec() const { return spec_; }
    const std::vector<double>& u() const { return u_; }
    const std::vector<double>& v() const { return v_; }
    /// Max over all snapshots and cells of sqrt(u^2 + v^2).
    double vmax() const { return vmax_; }

    std::size_t index(int k, int row, int col) const {
        return (static_cast<std::size_t>(k) * spec_.ny + row) * spec_.nx + col;
    }
    double u_at(int k, int row, int col) const { return u_[index(k, row, col)]; }
    double v_at(int k, int row, int col) const { return v_[index(k, row, col)]; }

    friend bool operator==(const VelocityField&, const VelocityField&) = default;

  private:
    GridSpec spec_;
    std::vector<double> u_;
    std::vector<double> v_;
    double vmax_ = 0.0;
};

struct VorticityField {
    GridSpec spec;
    std::vector<double> zeta; // (K+1, ny, nx), 1/h
};

/// Bilinear in space (periodic), linear in time. Throws RangeError for t outside [0, K*delta].
Vec2 sample_velocity(const VelocityField& field, Vec2 pos, double t);

/// Same as sample_velocity without the range check; t is clamped to [0, K*delta].
Vec2 sample_velocity_clamped(const VelocityField& field, Vec2 pos, double t);

VelocityField make_uniform(const GridSpec& spec, Vec2 velocity);

/**
 * Time-periodic double gyre.
 *
 * psi = A (Ly/2) sin(pi f(X, t)) sin(pi Y), f = a X^2 + b X with
 * a = eps sin(omega t), b = 1 - 2 eps sin(omega t). X spans [0, 2) across the
 * domain width and Y spans [0, 2) across its height, so the classic [0,2]x[0,1]
 * box and its mirror image tile the periodic domain. omega is in rad/h.
 */
VelocityField make_double_gyre(const GridSpec& spec, double amplitude, double eps, double omega);

/// Analytic double-gyre velocity at a point (the generator's source of truth).
Vec2 double_gyre_velocity(const GridSpec& spec, double amplitude, double eps, double omega, Vec2 pos, double t);

/// u = -omega (y - yc), v = omega (x - xc), evaluated with unwrapped coordinates.
VelocityField make_solid_rotation(const GridSpec& spec, double omega, Vec2 center);

/// Gaussian vortex psi = sign * gamma * exp(-d^2 / (2 R^2)), center moving at `drift`.
struct Eddy {
    Vec2 center;       // km at t = 0
    Vec2 drift;        // km/h
    double radius = 1; // km
    double gamma = 0;  // km^2/h, signed
};

/// Random eddy parameters; peak speeds are drawn around `peak_speed` km/h.
std::vector<Eddy> random_eddies(const GridSpec& spec, int n_eddies, std::uint64_t seed, double peak_speed = 1.0);

/// Velocity of a superposition of eddies, summed over the 3x3 periodic images.
Vec2 eddy_velocity(const GridSpec& spec, const std::vector<Eddy>& eddies, Vec2 pos, double t);
/// Analytic relative vorticity (Laplacian of psi) of the same superposition.
double eddy_vorticity(const GridSpec& spec, const std::vector<Eddy>& eddies, Vec2 pos, double t);

VelocityField make_eddy_field(const GridSpec& spec, const std::vector<Eddy>& eddies);
VelocityField make_random_eddies(const GridSpec& spec, int n_eddies, std::uint64_t seed, double peak_speed = 1.0);

/// Pointwise sum of two fields on the same grid.
VelocityField add_fields(const VelocityField& a, const VelocityField& b);
/// Field translated by an integer number of cells (periodic).
VelocityField shift_field(const VelocityField& field, int shift_cols, int shift_rows);

/// Centered-difference curl dv/dx - du/dy with periodic wrap.
VorticityField vorticity(const VelocityField& field);

/// Raster format "DRFT": magic, u32 version=1, u32 nx, ny, k_plus_1, f64 h, delta, x0, y0, u block, v block.
std::vector<char> encode_field(const VelocityField& field);
VelocityField decode_field(std::vector<char> bytes, const std::string& what = "field");
void write_field(const VelocityField& field, const std::string& path);
VelocityField read_field(const std::string& path);

/// CSV with header `t,row,col,zeta`; `step < 0` exports every snapshot.
std::string vorticity_csv(const VorticityField& zeta, int step = -1);

} // namespace driftlab
