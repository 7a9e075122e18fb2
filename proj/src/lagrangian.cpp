#include "driftlab/lagrangian.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "driftlab/binary_io.hpp"
#include "driftlab/error.hpp"
#include "driftlab/parallel.hpp"

namespace driftlab {
namespace {

constexpr std::uint32_t kEnsembleVersion = 1;

template <class Step>
Trajectory integrate(const VelocityField& field, Vec2 r0, int substeps, Step&& step) {
    if (substeps < 1) {
        throw ConfigError("substeps_per_delta must be >= 1");
    }
    const GridSpec& spec = field.spec();
    const double dt = spec.delta / substeps;
    Trajectory traj{spec, {}};
    traj.positions.reserve(static_cast<std::size_t>(spec.snapshots()));
    traj.positions.push_back(r0);
    Vec2 r = r0;
    for (int k = 0; k < spec.k_steps; ++k) {
        for (int s = 0; s < substeps; ++s) {
            const double t = k * spec.delta + s * dt;
            r = step(r, t, dt);
        }
        if (!std::isfinite(r.x) || !std::isfinite(r.y)) {
            throw NumericalError("advection blew up at step " + std::to_string(k + 1));
        }
        r = spec.wrap(r);
        traj.positions.push_back(r);
    }
    return traj;
}

} // namespace

const GridSpec& Ensemble::spec() const {
    if (trajectories.empty()) {
        throw ShapeError("empty ensemble has no grid");
    }
    return trajectories.front().spec;
}

Integrator parse_integrator(const std::string& name) {
    if (name == "rk4") {
        return Integrator::rk4;
    }
    if (name == "euler") {
        return Integrator::euler;
    }
    throw ConfigError("unknown integrator '" + name + "' (expected rk4 or euler)");
}

std::string to_string(Integrator integrator) { return integrator == Integrator::rk4 ? "rk4" : "euler"; }

Trajectory advect_rk4(const VelocityField& field, Vec2 r0, int substeps_per_delta) {
    return integrate(field, r0, substeps_per_delta, [&](Vec2 r, double t, double dt) {
        const Vec2 k1 = sample_velocity_clamped(field, r, t);
        const Vec2 k2 = sample_velocity_clamped(field, r + (0.5 * dt) * k1, t + 0.5 * dt);
        const Vec2 k3 = sample_velocity_clamped(field, r + (0.5 * dt) * k2, t + 0.5 * dt);
        const Vec2 k4 = sample_velocity_clamped(field, r + dt * k3, t + dt);
        return r + (dt / 6.0) * (k1 + 2.0 * (k2 + k3) + k4);
    });
}

Trajectory advect_euler(const VelocityField& field, Vec2 r0, int substeps_per_delta) {
    return integrate(field, r0, substeps_per_delta,
                     [&](Vec2 r, double t, double dt) { return r + dt * sample_velocity_clamped(field, r, t); });
}

Trajectory advect(const VelocityField& field, Vec2 r0, Integrator integrator, int substeps_per_delta) {
    return integrator == Integrator::rk4 ? advect_rk4(field, r0, substeps_per_delta)
                                         : advect_euler(field, r0, substeps_per_delta);
}

Ensemble advect_ensemble(const VelocityField& field, std::span<const Vec2> seeds, Integrator integrator,
                         int substeps_per_delta) {
    if (seeds.empty()) {
        throw ConfigError("advect_ensemble needs at least one seed");
    }
    Ensemble ens;
    ens.seeds.assign(seeds.begin(), seeds.end());
    ens.trajectories.resize(seeds.size());
    parallel_for(seeds.size(), [&](std::size_t i) {
        ens.trajectories[i] = advect(field, seeds[i], integrator, substeps_per_delta);
    });
    return ens;
}

std::vector<Vec2> perturb_seeds(std::span<const Vec2> seeds, double radius_km, int n_per_seed,
                                std::uint64_t rng_seed) {
    if (!(radius_km > 0.0)) {
        throw ConfigError("perturbation radius must be positive");
    }
    std::mt19937_64 rng(rng_seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<Vec2> out;
    out.reserve(seeds.size() * static_cast<std::size_t>(std::max(0, n_per_seed)));
    for (const Vec2& s : seeds) {
        for (int i = 0; i < n_per_seed; ++i) {
            // sqrt of a uniform radius fraction gives a uniform density over the disk
            const double r = radius_km * std::sqrt(unit(rng));
            const double theta = 2.0 * std::numbers::pi * unit(rng);
            out.push_back({s.x + r * std::cos(theta), s.y + r * std::sin(theta)});
        }
    }
    return out;
}

std::vector<Vec2> uniform_seeds(const GridSpec& spec, int n, std::uint64_t rng_seed) {
    std::mt19937_64 rng(rng_seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<Vec2> out(static_cast<std::size_t>(std::max(0, n)));
    for (auto& p : out) {
        p.x = spec.x0 + unit(rng) * spec.width();
        p.y = spec.y0 + unit(rng) * spec.height();
    }
    return out;
}

std::string ensemble_csv(const Ensemble& ensemble) {
    std::ostringstream out;
    out.precision(17);
    out << "traj_id,step,t_hours,x_km,y_km\n";
    for (std::size_t i = 0; i < ensemble.trajectories.size(); ++i) {
        const Trajectory& t = ensemble.trajectories[i];
        for (std::size_t k = 0; k < t.positions.size(); ++k) {
            out << i << ',' << k << ',' << k * t.spec.delta << ',' << t.positions[k].x << ',' << t.positions[k].y
                << '\n';
        }
    }
    return out.str();
}

Ensemble ensemble_from_csv(const std::string& text, const GridSpec& spec) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line.rfind("traj_id,step,t_hours,x_km,y_km", 0) != 0) {
        throw FormatError("trajectory CSV: missing header traj_id,step,t_hours,x_km,y_km");
    }
    Ensemble ens;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        std::istringstream row(line);
        std::string cell;
        std::vector<double> values;
        while (std::getline(row, cell, ',')) {
            values.push_back(std::stod(cell));
        }
        if (values.size() != 5) {
            throw FormatError("trajectory CSV: expected 5 columns in '" + line + "'");
        }
        const auto id = static_cast<std::size_t>(values[0]);
        const auto step = static_cast<std::size_t>(values[1]);
        if (id == ens.trajectories.size()) {
            ens.trajectories.push_back(Trajectory{spec, {}});
        }
        if (id + 1 != ens.trajectories.size() || step != ens.trajectories[id].positions.size()) {
            throw FormatError("trajectory CSV: rows must be ordered by traj_id then step");
        }
        ens.trajectories[id].positions.push_back({values[3], values[4]});
    }
    for (const auto& t : ens.trajectories) {
        if (t.steps() != spec.k_steps) {
            throw FormatError("trajectory CSV: trajectory length does not match k_steps");
        }
        ens.seeds.push_back(t.positions.front());
    }
    return ens;
}

std::vector<char> encode_ensemble(const Ensemble& ensemble) {
    const GridSpec& s = ensemble.spec();
    BinaryWriter w;
    w.magic("DTRJ");
    w.u32(kEnsembleVersion);
    w.u32(static_cast<std::uint32_t>(s.nx));
    w.u32(static_cast<std::uint32_t>(s.ny));
    w.u32(static_cast<std::uint32_t>(s.snapshots()));
    w.f64(s.h);
    w.f64(s.delta);
    w.f64(s.x0);
    w.f64(s.y0);
    w.u32(static_cast<std::uint32_t>(ensemble.size()));
    for (std::size_t i = 0; i < ensemble.size(); ++i) {
        const Vec2 seed = i < ensemble.seeds.size() ? ensemble.seeds[i] : ensemble.trajectories[i].positions.front();
        w.f64(seed.x);
        w.f64(seed.y);
    }
    for (const auto& t : ensemble.trajectories) {
        if (!(t.spec == s) || t.steps() != s.k_steps) {
            throw ShapeError("ensemble members must share one grid and K+1 positions");
        }
        for (const Vec2& p : t.positions) {
            w.f64(p.x);
            w.f64(p.y);
        }
    }
    return w.bytes();
}

Ensemble decode_ensemble(std::vector<char> bytes, const std::string& what) {
    BinaryReader r(std::move(bytes), what);
    r.expect_magic("DTRJ");
    const std::uint32_t version = r.u32();
    if (version != kEnsembleVersion) {
        throw FormatError(what + ": unsupported DTRJ version " + std::to_string(version));
    }
    GridSpec s;
    s.nx = static_cast<int>(r.u32());
    s.ny = static_cast<int>(r.u32());
    const std::uint32_t k_plus_1 = r.u32();
    s.h = r.f64();
    s.delta = r.f64();
    s.x0 = r.f64();
    s.y0 = r.f64();
    if (k_plus_1 < 2) {
        throw FormatError(what + ": dimension mismatch, k_plus_1 must be >= 2");
    }
    s.k_steps = static_cast<int>(k_plus_1) - 1;
    try {
        s.validate();
    } catch (const ConfigError& e) {
        throw FormatError(what + ": dimension mismatch, " + e.what());
    }
    const std::uint32_t n = r.u32();
    if (r.remaining() < (static_cast<std::size_t>(n) * 2 + static_cast<std::size_t>(n) * k_plus_1 * 2) * 8) {
        throw FormatError(what + ": truncated payload for " + std::to_string(n) + " trajectories");
    }
    Ensemble ens;
    ens.seeds.resize(n);
    for (auto& p : ens.seeds) {
        p.x = r.f64();
        p.y = r.f64();
    }
    ens.trajectories.assign(n, Trajectory{s, std::vector<Vec2>(k_plus_1)});
    for (auto& t : ens.trajectories) {
        for (auto& p : t.positions) {
            p.x = r.f64();
            p.y = r.f64();
        }
    }
    r.expect_end();
    return ens;
}

void write_ensemble(const Ensemble& ensemble, const std::string& path) {
    write_file_bytes(path, encode_ensemble(ensemble));
}

Ensemble read_ensemble(const std::string& path) { return decode_ensemble(read_file_bytes(path), path); }

} // namespace driftlab
