#include "driftlab/field.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "driftlab/binary_io.hpp"
#include "driftlab/error.hpp"

namespace driftlab {
namespace {

constexpr double kPi = std::numbers::pi;
constexpr std::uint32_t kFieldVersion = 1;

int wrap_index(int i, int n) {
    i %= n;
    return i < 0 ? i + n : i;
}

struct Stencil {
    int i0, i1, j0, j1;
    double wx, wy;
};

Stencil stencil(const GridSpec& spec, Vec2 pos) {
    const Vec2 p = spec.wrap(pos);
    const double fx = (p.x - spec.x0) / spec.h - 0.5;
    const double fy = (p.y - spec.y0) / spec.h - 0.5;
    const double ix = std::floor(fx);
    const double iy = std::floor(fy);
    Stencil s{};
    s.wx = fx - ix;
    s.wy = fy - iy;
    s.i0 = wrap_index(static_cast<int>(ix), spec.nx);
    s.i1 = wrap_index(static_cast<int>(ix) + 1, spec.nx);
    s.j0 = wrap_index(static_cast<int>(iy), spec.ny);
    s.j1 = wrap_index(static_cast<int>(iy) + 1, spec.ny);
    return s;
}

double bilinear(const std::vector<double>& a, const GridSpec& spec, int k, const Stencil& s) {
    const std::size_t base = static_cast<std::size_t>(k) * spec.ny * spec.nx;
    auto at = [&](int row, int col) { return a[base + static_cast<std::size_t>(row) * spec.nx + col]; };
    const double bottom = (1.0 - s.wx) * at(s.j0, s.i0) + s.wx * at(s.j0, s.i1);
    const double top = (1.0 - s.wx) * at(s.j1, s.i0) + s.wx * at(s.j1, s.i1);
    return (1.0 - s.wy) * bottom + s.wy * top;
}

template <class Fn>
VelocityField sample_analytic(const GridSpec& spec, Fn&& velocity_at) {
    spec.validate();
    const std::size_t n = spec.cells() * spec.snapshots();
    std::vector<double> u(n), v(n);
    std::size_t idx = 0;
    for (int k = 0; k <= spec.k_steps; ++k) {
        const double t = k * spec.delta;
        for (int row = 0; row < spec.ny; ++row) {
            for (int col = 0; col < spec.nx; ++col, ++idx) {
                const Vec2 vel = velocity_at(spec.cell_center(row, col), t);
                u[idx] = vel.x;
                v[idx] = vel.y;
            }
        }
    }
    return VelocityField::from_arrays(spec, std::move(u), std::move(v));
}

Vec2 eddy_center(const GridSpec& spec, const Eddy& e, double t) { return spec.wrap(e.center + t * e.drift); }

template <class Fn>
void for_each_image(const GridSpec& spec, const Eddy& e, Vec2 pos, double t, Fn&& fn) {
    const Vec2 c = eddy_center(spec, e, t);
    const Vec2 p = spec.wrap(pos);
    for (int di = -1; di <= 1; ++di) {
        for (int dj = -1; dj <= 1; ++dj) {
            const Vec2 d{p.x - (c.x + di * spec.width()), p.y - (c.y + dj * spec.height())};
            fn(d, std::exp(-d.squared_norm() / (2.0 * e.radius * e.radius)));
        }
    }
}

} // namespace

VelocityField VelocityField::from_arrays(const GridSpec& spec, std::vector<double> u, std::vector<double> v) {
    spec.validate();
    const std::size_t n = spec.cells() * spec.snapshots();
    if (u.size() != n || v.size() != n) {
        throw ShapeError("velocity arrays must have (K+1)*ny*nx = " + std::to_string(n) + " values");
    }
    VelocityField f;
    f.spec_ = spec;
    f.u_ = std::move(u);
    f.v_ = std::move(v);
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(f.u_[i]) || !std::isfinite(f.v_[i])) {
            throw NumericalError("velocity field contains non-finite values at flat index " + std::to_string(i));
        }
        f.vmax_ = std::max(f.vmax_, std::hypot(f.u_[i], f.v_[i]));
    }
    return f;
}

Vec2 sample_velocity_clamped(const VelocityField& field, Vec2 pos, double t) {
    const GridSpec& spec = field.spec();
    const double s = std::clamp(t / spec.delta, 0.0, static_cast<double>(spec.k_steps));
    const int k0 = std::min(static_cast<int>(std::floor(s)), spec.k_steps - 1);
    const double wt = s - k0;
    const Stencil st = stencil(spec, pos);
    const double u = (1.0 - wt) * bilinear(field.u(), spec, k0, st) + wt * bilinear(field.u(), spec, k0 + 1, st);
    const double v = (1.0 - wt) * bilinear(field.v(), spec, k0, st) + wt * bilinear(field.v(), spec, k0 + 1, st);
    return {u, v};
}

Vec2 sample_velocity(const VelocityField& field, Vec2 pos, double t) {
    const GridSpec& spec = field.spec();
    const double tol = 1e-9 * spec.delta;
    if (!(t >= -tol && t <= spec.duration() + tol)) {
        std::ostringstream msg;
        msg << "sample time " << t << " h outside [0, " << spec.duration() << "]";
        throw RangeError(msg.str());
    }
    return sample_velocity_clamped(field, pos, t);
}

VelocityField make_uniform(const GridSpec& spec, Vec2 velocity) {
    return sample_analytic(spec, [&](Vec2, double) { return velocity; });
}

Vec2 double_gyre_velocity(const GridSpec& spec, double amplitude, double eps, double omega, Vec2 pos, double t) {
    const Vec2 p = spec.wrap(pos);
    const double X = 2.0 * (p.x - spec.x0) / spec.width();
    const double Y = 2.0 * (p.y - spec.y0) / spec.height();
    const double st = std::sin(omega * t);
    const double a = eps * st;
    const double b = 1.0 - 2.0 * eps * st;
    const double f = a * X * X + b * X;
    const double df = 2.0 * a * X + b;
    const double u = -kPi * amplitude * std::sin(kPi * f) * std::cos(kPi * Y);
    const double v = kPi * amplitude * (spec.height() / spec.width()) * std::cos(kPi * f) * df * std::sin(kPi * Y);
    return {u, v};
}

VelocityField make_double_gyre(const GridSpec& spec, double amplitude, double eps, double omega) {
    if (!(amplitude > 0.0)) {
        throw ConfigError("double gyre amplitude must be positive");
    }
    return sample_analytic(
        spec, [&](Vec2 p, double t) { return double_gyre_velocity(spec, amplitude, eps, omega, p, t); });
}

VelocityField make_solid_rotation(const GridSpec& spec, double omega, Vec2 center) {
    if (!(std::abs(omega) > 0.0)) {
        throw ConfigError("solid rotation needs |omega| > 0");
    }
    return sample_analytic(
        spec, [&](Vec2 p, double) { return Vec2{-omega * (p.y - center.y), omega * (p.x - center.x)}; });
}

std::vector<Eddy> random_eddies(const GridSpec& spec, int n_eddies, std::uint64_t seed, double peak_speed) {
    spec.validate();
    if (n_eddies < 1) {
        throw ConfigError("random eddies need n_eddies >= 1");
    }
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double extent = std::min(spec.width(), spec.height());
    const double r_lo = std::max(1.5 * spec.h, extent / 16.0);
    const double r_hi = std::max(r_lo, extent / 8.0);
    std::vector<Eddy> eddies;
    eddies.reserve(static_cast<std::size_t>(n_eddies));
    for (int i = 0; i < n_eddies; ++i) {
        Eddy e;
        e.center = {spec.x0 + unit(rng) * spec.width(), spec.y0 + unit(rng) * spec.height()};
        e.radius = r_lo + unit(rng) * (r_hi - r_lo);
        const double speed = peak_speed * (0.6 + 0.8 * unit(rng));
        const double sign = unit(rng) < 0.5 ? -1.0 : 1.0;
        // peak speed of a Gaussian vortex is gamma / R * exp(-1/2), reached at d = R
        e.gamma = sign * speed * e.radius * std::exp(0.5);
        e.drift = {0.2 * peak_speed * (2.0 * unit(rng) - 1.0), 0.2 * peak_speed * (2.0 * unit(rng) - 1.0)};
        eddies.push_back(e);
    }
    return eddies;
}

Vec2 eddy_velocity(const GridSpec& spec, const std::vector<Eddy>& eddies, Vec2 pos, double t) {
    Vec2 vel;
    for (const Eddy& e : eddies) {
        const double r2 = e.radius * e.radius;
        for_each_image(spec, e, pos, t, [&](Vec2 d, double g) {
            vel.x += e.gamma * d.y / r2 * g;
            vel.y -= e.gamma * d.x / r2 * g;
        });
    }
    return vel;
}

double eddy_vorticity(const GridSpec& spec, const std::vector<Eddy>& eddies, Vec2 pos, double t) {
    double zeta = 0.0;
    for (const Eddy& e : eddies) {
        const double r2 = e.radius * e.radius;
        for_each_image(spec, e, pos, t,
                       [&](Vec2 d, double g) { zeta += e.gamma * g * (d.squared_norm() / (r2 * r2) - 2.0 / r2); });
    }
    return zeta;
}

VelocityField make_eddy_field(const GridSpec& spec, const std::vector<Eddy>& eddies) {
    return sample_analytic(spec, [&](Vec2 p, double t) { return eddy_velocity(spec, eddies, p, t); });
}

VelocityField make_random_eddies(const GridSpec& spec, int n_eddies, std::uint64_t seed, double peak_speed) {
    return make_eddy_field(spec, random_eddies(spec, n_eddies, seed, peak_speed));
}

VelocityField add_fields(const VelocityField& a, const VelocityField& b) {
    if (!(a.spec() == b.spec())) {
        throw ShapeError("add_fields: grids differ");
    }
    std::vector<double> u = a.u(), v = a.v();
    for (std::size_t i = 0; i < u.size(); ++i) {
        u[i] += b.u()[i];
        v[i] += b.v()[i];
    }
    return VelocityField::from_arrays(a.spec(), std::move(u), std::move(v));
}

VelocityField shift_field(const VelocityField& field, int shift_cols, int shift_rows) {
    const GridSpec& spec = field.spec();
    std::vector<double> u(field.u().size()), v(field.v().size());
    for (int k = 0; k <= spec.k_steps; ++k) {
        for (int row = 0; row < spec.ny; ++row) {
            for (int col = 0; col < spec.nx; ++col) {
                const std::size_t src =
                    field.index(k, wrap_index(row - shift_rows, spec.ny), wrap_index(col - shift_cols, spec.nx));
                u[field.index(k, row, col)] = field.u()[src];
                v[field.index(k, row, col)] = field.v()[src];
            }
        }
    }
    return VelocityField::from_arrays(spec, std::move(u), std::move(v));
}

VorticityField vorticity(const VelocityField& field) {
    const GridSpec& spec = field.spec();
    VorticityField out{spec, std::vector<double>(field.u().size())};
    const double inv2h = 1.0 / (2.0 * spec.h);
    for (int k = 0; k <= spec.k_steps; ++k) {
        for (int row = 0; row < spec.ny; ++row) {
            const int up = wrap_index(row + 1, spec.ny);
            const int down = wrap_index(row - 1, spec.ny);
            for (int col = 0; col < spec.nx; ++col) {
                const int right = wrap_index(col + 1, spec.nx);
                const int left = wrap_index(col - 1, spec.nx);
                const double dvdx = (field.v_at(k, row, right) - field.v_at(k, row, left)) * inv2h;
                const double dudy = (field.u_at(k, up, col) - field.u_at(k, down, col)) * inv2h;
                out.zeta[field.index(k, row, col)] = dvdx - dudy;
            }
        }
    }
    return out;
}

std::vector<char> encode_field(const VelocityField& field) {
    const GridSpec& s = field.spec();
    BinaryWriter w;
    w.magic("DRFT");
    w.u32(kFieldVersion);
    w.u32(static_cast<std::uint32_t>(s.nx));
    w.u32(static_cast<std::uint32_t>(s.ny));
    w.u32(static_cast<std::uint32_t>(s.snapshots()));
    w.f64(s.h);
    w.f64(s.delta);
    w.f64(s.x0);
    w.f64(s.y0);
    w.f64s(field.u());
    w.f64s(field.v());
    return w.bytes();
}

VelocityField decode_field(std::vector<char> bytes, const std::string& what) {
    BinaryReader r(std::move(bytes), what);
    r.expect_magic("DRFT");
    const std::uint32_t version = r.u32();
    if (version != kFieldVersion) {
        throw FormatError(what + ": unsupported DRFT version " + std::to_string(version));
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
    const std::size_t n = s.cells() * s.snapshots();
    if (r.remaining() < 2 * n * sizeof(double)) {
        throw FormatError(what + ": truncated payload, expected " + std::to_string(2 * n) + " f64 values");
    }
    std::vector<double> u(n), v(n);
    r.f64s(u);
    r.f64s(v);
    r.expect_end();
    return VelocityField::from_arrays(s, std::move(u), std::move(v));
}

void write_field(const VelocityField& field, const std::string& path) { write_file_bytes(path, encode_field(field)); }

VelocityField read_field(const std::string& path) { return decode_field(read_file_bytes(path), path); }

std::string vorticity_csv(const VorticityField& zeta, int step) {
    const GridSpec& s = zeta.spec;
    std::ostringstream out;
    out.precision(17);
    out << "t,row,col,zeta\n";
    for (int k = 0; k <= s.k_steps; ++k) {
        if (step >= 0 && k != step) {
            continue;
        }
        for (int row = 0; row < s.ny; ++row) {
            for (int col = 0; col < s.nx; ++col) {
                out << k << ',' << row << ',' << col << ','
                    << zeta.zeta[(static_cast<std::size_t>(k) * s.ny + row) * s.nx + col] << '\n';
            }
        }
    }
    return out.str();
}

} // namespace driftlab
