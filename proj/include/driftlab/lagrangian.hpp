#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "driftlab/field.hpp"
#include "driftlab/geometry.hpp"

namespace driftlab {

/// K+1 positions recorded every delta hours, wrapped into the periodic domain.
struct Trajectory {
    GridSpec spec;
    std::vector<Vec2> positions;

    int steps() const { return static_cast<int>(positions.size()) - 1; }
};

struct Ensemble {
    std::vector<Vec2> seeds;
    std::vector<Trajectory> trajectories;

    std::size_t size() const { return trajectories.size(); }
    /// Grid shared by all members; throws ShapeError on an empty ensemble.
    const GridSpec& spec() const;
};

enum class Integrator { rk4, euler };

Integrator parse_integrator(const std::string& name);
std::string to_string(Integrator integrator);

inline constexpr int kDefaultSubsteps = 6;

/// Classical RK4 with internal step delta / substeps; throws NumericalError on blow-up.
Trajectory advect_rk4(const VelocityField& field, Vec2 r0, int substeps_per_delta = kDefaultSubsteps);
/// Forward Euler with the same recording convention.
Trajectory advect_euler(const VelocityField& field, Vec2 r0, int substeps_per_delta = kDefaultSubsteps);
Trajectory advect(const VelocityField& field, Vec2 r0, Integrator integrator, int substeps_per_delta);

/// Independent advection per seed, in seed order; parallel over seeds.
Ensemble advect_ensemble(const VelocityField& field, std::span<const Vec2> seeds,
                         Integrator integrator = Integrator::rk4, int substeps_per_delta = kDefaultSubsteps);

/// n_per_seed points uniform in the disk of radius_km around each seed, grouped by seed.
std::vector<Vec2> perturb_seeds(std::span<const Vec2> seeds, double radius_km, int n_per_seed,
                                std::uint64_t rng_seed);

/// Seeds uniform over the domain.
std::vector<Vec2> uniform_seeds(const GridSpec& spec, int n, std::uint64_t rng_seed);

/// CSV with header `traj_id,step,t_hours,x_km,y_km`.
std::string ensemble_csv(const Ensemble& ensemble);
Ensemble ensemble_from_csv(const std::string& text, const GridSpec& spec);

/**
 * Binary ensemble "DTRJ": magic, u32 version=1, u32 nx, ny, k_plus_1, f64 h,
 * delta, x0, y0, u32 n_traj, seeds (n_traj x 2 f64), positions
 * [traj][step][x,y] f64.
 */
std::vector<char> encode_ensemble(const Ensemble& ensemble);
Ensemble decode_ensemble(std::vector<char> bytes, const std::string& what = "ensemble");
void write_ensemble(const Ensemble& ensemble, const std::string& path);
Ensemble read_ensemble(const std::string& path);

} // namespace driftlab
