#include "driftlab/fokkerplanck.hpp"

#include <cmath>
#include <memory>
#include <sstream>

#include "driftlab/binary_io.hpp"
#include "driftlab/error.hpp"

namespace driftlab {
namespace {

int wrap_index(int i, int n) {
    i %= n;
    return i < 0 ? i + n : i;
}

/// One unsplit upwind update of `p` into `out` with cell-centered velocities ut, vt.
void upwind_step(const GridSpec& s, const double* p, const double* ut, const double* vt, double courant,
                 double* out) {
    const int nx = s.nx, ny = s.ny;
    thread_local std::vector<double> fx, fy;
    fx.resize(s.cells());
    fy.resize(s.cells());
    // east and north face fluxes of every cell
    for (int r = 0; r < ny; ++r) {
        const int rn = wrap_index(r + 1, ny);
        for (int c = 0; c < nx; ++c) {
            const int cn = wrap_index(c + 1, nx);
            const std::size_t i = static_cast<std::size_t>(r) * nx + c;
            const std::size_t ix = static_cast<std::size_t>(r) * nx + cn;
            const std::size_t iy = static_cast<std::size_t>(rn) * nx + c;
            const double uf = 0.5 * (ut[i] + ut[ix]);
            fx[i] = courant * uf * (uf > 0.0 ? p[i] : p[ix]);
            const double vf = 0.5 * (vt[i] + vt[iy]);
            fy[i] = courant * vf * (vf > 0.0 ? p[i] : p[iy]);
        }
    }
    // gather in a fixed order per cell so the update is translation invariant bit for bit
    for (int r = 0; r < ny; ++r) {
        const int rs = wrap_index(r - 1, ny);
        for (int c = 0; c < nx; ++c) {
            const int cw = wrap_index(c - 1, nx);
            const std::size_t i = static_cast<std::size_t>(r) * nx + c;
            out[i] = p[i] - fx[i] + fx[static_cast<std::size_t>(r) * nx + cw] - fy[i] +
                     fy[static_cast<std::size_t>(rs) * nx + c];
        }
    }
}

/// Adjoint of upwind_step: accumulates into gp (w.r.t. p) and gu, gv (w.r.t. ut, vt).
void upwind_step_adjoint(const GridSpec& s, const double* p, const double* ut, const double* vt, double courant,
                         const double* lam, double* gp, double* gu, double* gv) {
    const int nx = s.nx, ny = s.ny;
    for (std::size_t i = 0; i < s.cells(); ++i) {
        gp[i] += lam[i];
    }
    for (int r = 0; r < ny; ++r) {
        const int rn = wrap_index(r + 1, ny);
        for (int c = 0; c < nx; ++c) {
            const int cn = wrap_index(c + 1, nx);
            const std::size_t i = static_cast<std::size_t>(r) * nx + c;
            const std::size_t ix = static_cast<std::size_t>(r) * nx + cn;
            const std::size_t iy = static_cast<std::size_t>(rn) * nx + c;

            const double ax = courant * (lam[ix] - lam[i]);
            const double uf = 0.5 * (ut[i] + ut[ix]);
            if (uf > 0.0) {
                gp[i] += ax * uf;
            } else {
                gp[ix] += ax * uf;
            }
            const double guf = ax * (uf > 0.0 ? p[i] : p[ix]);
            gu[i] += 0.5 * guf;
            gu[ix] += 0.5 * guf;

            const double ay = courant * (lam[iy] - lam[i]);
            const double vf = 0.5 * (vt[i] + vt[iy]);
            if (vf > 0.0) {
                gp[i] += ay * vf;
            } else {
                gp[iy] += ay * vf;
            }
            const double gvf = ay * (vf > 0.0 ? p[i] : p[iy]);
            gv[i] += 0.5 * gvf;
            gv[iy] += 0.5 * gvf;
        }
    }
}

double max_speed(const std::vector<double>& u, const std::vector<double>& v) {
    double m = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        m = std::max(m, std::hypot(u[i], v[i]));
    }
    return m;
}

/// Runs every substep, recording each intermediate state when `trace` is non-null.
std::vector<double> run_upwind(const GridSpec& s, const std::vector<double>& u, const std::vector<double>& v,
                               const std::vector<double>& p0, int substeps, std::vector<double>* trace) {
    const std::size_t cells = s.cells();
    const double dt = s.delta / substeps;
    const double courant = dt / s.h;
    std::vector<double> snaps(cells * s.snapshots());
    std::copy(p0.begin(), p0.end(), snaps.begin());
    std::vector<double> cur(p0), next(cells), ut(cells), vt(cells);
    if (trace) {
        trace->assign(cells * (static_cast<std::size_t>(s.k_steps) * substeps + 1), 0.0);
        std::copy(p0.begin(), p0.end(), trace->begin());
    }
    std::size_t step_index = 0;
    for (int k = 0; k < s.k_steps; ++k) {
        const double* u0 = u.data() + static_cast<std::size_t>(k) * cells;
        const double* v0 = v.data() + static_cast<std::size_t>(k) * cells;
        for (int sub = 0; sub < substeps; ++sub) {
            const double w = (sub + 0.5) / substeps;
            for (std::size_t i = 0; i < cells; ++i) {
                ut[i] = (1.0 - w) * u0[i] + w * u0[i + cells];
                vt[i] = (1.0 - w) * v0[i] + w * v0[i + cells];
            }
            upwind_step(s, cur.data(), ut.data(), vt.data(), courant, next.data());
            std::swap(cur, next);
            ++step_index;
            if (trace) {
                std::copy(cur.begin(), cur.end(), trace->begin() + static_cast<std::ptrdiff_t>(step_index * cells));
            }
        }
        for (std::size_t i = 0; i < cells; ++i) {
            if (!std::isfinite(cur[i])) {
                throw NumericalError("density propagation produced non-finite mass at step " + std::to_string(k + 1));
            }
        }
        std::copy(cur.begin(), cur.end(), snaps.begin() + static_cast<std::ptrdiff_t>((k + 1) * cells));
    }
    return snaps;
}

} // namespace

std::vector<double> DensityGrid::slice(int k) const {
    const std::size_t n = spec.cells();
    return {p.begin() + static_cast<std::ptrdiff_t>(k * n), p.begin() + static_cast<std::ptrdiff_t>((k + 1) * n)};
}

double DensityGrid::mass(int k) const {
    double m = 0.0;
    for (double v : slice(k)) {
        m += v;
    }
    return m;
}

DensityGrid init_density(const GridSpec& spec, Vec2 r0, double sigma_km) {
    spec.validate();
    if (!(sigma_km >= 0.0)) {
        throw ConfigError("init_density needs sigma_km >= 0");
    }
    DensityGrid d{spec, 1, std::vector<double>(spec.cells(), 0.0)};
    if (sigma_km == 0.0) {
        const Vec2 p = spec.wrap(r0);
        const double fx = (p.x - spec.x0) / spec.h - 0.5;
        const double fy = (p.y - spec.y0) / spec.h - 0.5;
        const double ix = std::floor(fx), iy = std::floor(fy);
        const double wx = fx - ix, wy = fy - iy;
        const int c0 = wrap_index(static_cast<int>(ix), spec.nx), c1 = wrap_index(static_cast<int>(ix) + 1, spec.nx);
        const int r0i = wrap_index(static_cast<int>(iy), spec.ny), r1i = wrap_index(static_cast<int>(iy) + 1, spec.ny);
        auto at = [&](int r, int c) -> double& { return d.p[static_cast<std::size_t>(r) * spec.nx + c]; };
        at(r0i, c0) += (1.0 - wx) * (1.0 - wy);
        at(r0i, c1) += wx * (1.0 - wy);
        at(r1i, c0) += (1.0 - wx) * wy;
        at(r1i, c1) += wx * wy;
        return d;
    }
    double total = 0.0;
    for (int r = 0; r < spec.ny; ++r) {
        for (int c = 0; c < spec.nx; ++c) {
            const double d2 = spec.displacement(r0, spec.cell_center(r, c)).squared_norm();
            const double m = std::exp(-d2 / (2.0 * sigma_km * sigma_km));
            d.p[static_cast<std::size_t>(r) * spec.nx + c] = m;
            total += m;
        }
    }
    if (!(total > 0.0)) {
        throw DegenerateError("init_density: Gaussian underflowed on every cell");
    }
    for (double& m : d.p) {
        m /= total;
    }
    return d;
}

int upwind_substeps(const GridSpec& spec, double vmax) {
    if (!(vmax > 0.0)) {
        return 1;
    }
    const double dt_max = 0.5 * spec.h / vmax;
    return std::max(1, static_cast<int>(std::ceil(spec.delta / dt_max - 1e-12)));
}

DensityGrid propagate_density(const VelocityField& field, const DensityGrid& p0) {
    const GridSpec& s = field.spec();
    if (!(p0.spec == s) || p0.p.size() < s.cells()) {
        throw ShapeError("propagate_density: initial density grid does not match the field");
    }
    std::vector<double> init(p0.p.begin(), p0.p.begin() + static_cast<std::ptrdiff_t>(s.cells()));
    for (double m : init) {
        if (!std::isfinite(m)) {
            throw NumericalError("propagate_density: non-finite initial mass");
        }
    }
    DensityGrid out{s, s.snapshots(), {}};
    out.p = run_upwind(s, field.u(), field.v(), init, upwind_substeps(s, field.vmax()), nullptr);
    return out;
}

ad::PeriodicAxis x_axis_of(const GridSpec& spec) { return {spec.x0, spec.width()}; }
ad::PeriodicAxis y_axis_of(const GridSpec& spec) { return {spec.y0, spec.height()}; }

Vec2 expected_position(const GridSpec& spec, const std::vector<double>& slice) {
    if (slice.size() != spec.cells()) {
        throw ShapeError("expected_position: slice size does not match the grid");
    }
    ad::Tape tape;
    const ad::Var p = tape.constant(ad::Tensor({spec.ny, spec.nx}, slice));
    const ad::Var xy = ad::soft_argmax(p, x_axis_of(spec), y_axis_of(spec));
    return {xy.value().data[0], xy.value().data[1]};
}

std::vector<Vec2> expected_track(const DensityGrid& density) {
    std::vector<Vec2> track;
    for (int k = 0; k < density.snapshots; ++k) {
        track.push_back(expected_position(density.spec, density.slice(k)));
    }
    return track;
}

ad::Var propagate_density_op(const GridSpec& spec, const ad::Var& u, const ad::Var& v, const ad::Var& p0) {
    const ad::Shape field_shape{spec.snapshots(), spec.ny, spec.nx};
    if (u.shape() != field_shape || v.shape() != field_shape || p0.shape() != ad::Shape{spec.ny, spec.nx}) {
        throw ShapeError("propagate_density_op: expected u, v " + ad::shape_str(field_shape) + " and p0 (ny, nx)");
    }
    const int substeps = upwind_substeps(spec, max_speed(u.value().data, v.value().data));
    auto trace = std::make_shared<std::vector<double>>();
    std::vector<double> snaps = run_upwind(spec, u.value().data, v.value().data, p0.value().data, substeps,
                                           trace.get());
    ad::Tape& tape = u.tape();
    const int uid = u.id(), vid = v.id();
    return tape.record(
        ad::Tensor(field_shape, std::move(snaps)), {u, v, p0},
        [&tape, spec, uid, vid, substeps, trace](const ad::Tensor& g, ad::GradSlots gi) {
            const std::size_t cells = spec.cells();
            const auto& uu = tape.value(uid).data;
            const auto& vv = tape.value(vid).data;
            const double courant = spec.delta / substeps / spec.h;
            std::vector<double> lam(g.data.end() - static_cast<std::ptrdiff_t>(cells), g.data.end());
            std::vector<double> lam_prev(cells), ut(cells), vt(cells), gut(cells), gvt(cells);
            std::size_t step_index = static_cast<std::size_t>(spec.k_steps) * substeps;
            for (int k = spec.k_steps - 1; k >= 0; --k) {
                const double* u0 = uu.data() + static_cast<std::size_t>(k) * cells;
                const double* v0 = vv.data() + static_cast<std::size_t>(k) * cells;
                for (int sub = substeps - 1; sub >= 0; --sub) {
                    --step_index;
                    const double w = (sub + 0.5) / substeps;
                    for (std::size_t i = 0; i < cells; ++i) {
                        ut[i] = (1.0 - w) * u0[i] + w * u0[i + cells];
                        vt[i] = (1.0 - w) * v0[i] + w * v0[i + cells];
                    }
                    std::fill(lam_prev.begin(), lam_prev.end(), 0.0);
                    std::fill(gut.begin(), gut.end(), 0.0);
                    std::fill(gvt.begin(), gvt.end(), 0.0);
                    upwind_step_adjoint(spec, trace->data() + step_index * cells, ut.data(), vt.data(), courant,
                                        lam.data(), lam_prev.data(), gut.data(), gvt.data());
                    for (std::size_t i = 0; i < cells; ++i) {
                        if (gi[0]) {
                            gi[0]->data[static_cast<std::size_t>(k) * cells + i] += (1.0 - w) * gut[i];
                            gi[0]->data[static_cast<std::size_t>(k + 1) * cells + i] += w * gut[i];
                        }
                        if (gi[1]) {
                            gi[1]->data[static_cast<std::size_t>(k) * cells + i] += (1.0 - w) * gvt[i];
                            gi[1]->data[static_cast<std::size_t>(k + 1) * cells + i] += w * gvt[i];
                        }
                    }
                    std::swap(lam, lam_prev);
                }
                // the recorded snapshot k feeds the loss directly
                for (std::size_t i = 0; i < cells; ++i) {
                    lam[i] += g.data[static_cast<std::size_t>(k) * cells + i];
                }
            }
            if (gi[2]) {
                for (std::size_t i = 0; i < cells; ++i) {
                    gi[2]->data[i] += lam[i];
                }
            }
        });
}

std::string density_csv(const DensityGrid& density) {
    const GridSpec& s = density.spec;
    std::ostringstream out;
    out.precision(17);
    out << "t,row,col,mass\n";
    for (int k = 0; k < density.snapshots; ++k) {
        for (int r = 0; r < s.ny; ++r) {
            for (int c = 0; c < s.nx; ++c) {
                out << k << ',' << r << ',' << c << ','
                    << density.p[(static_cast<std::size_t>(k) * s.ny + r) * s.nx + c] << '\n';
            }
        }
    }
    return out.str();
}

std::vector<char> encode_density(const DensityGrid& density) {
    const GridSpec& s = density.spec;
    BinaryWriter w;
    w.magic("DPDF");
    w.u32(1);
    w.u32(static_cast<std::uint32_t>(s.nx));
    w.u32(static_cast<std::uint32_t>(s.ny));
    w.u32(static_cast<std::uint32_t>(density.snapshots));
    w.f64(s.h);
    w.f64(s.delta);
    w.f64(s.x0);
    w.f64(s.y0);
    w.f64s(density.p);
    return w.bytes();
}

DensityGrid decode_density(std::vector<char> bytes, const std::string& what) {
    BinaryReader r(std::move(bytes), what);
    r.expect_magic("DPDF");
    if (const auto version = r.u32(); version != 1) {
        throw FormatError(what + ": unsupported DPDF version " + std::to_string(version));
    }
    DensityGrid d;
    d.spec.nx = static_cast<int>(r.u32());
    d.spec.ny = static_cast<int>(r.u32());
    d.snapshots = static_cast<int>(r.u32());
    d.spec.h = r.f64();
    d.spec.delta = r.f64();
    d.spec.x0 = r.f64();
    d.spec.y0 = r.f64();
    d.spec.k_steps = std::max(1, d.snapshots - 1);
    try {
        d.spec.validate();
    } catch (const ConfigError& e) {
        throw FormatError(what + ": dimension mismatch, " + e.what());
    }
    const std::size_t n = d.spec.cells() * static_cast<std::size_t>(d.snapshots);
    if (r.remaining() < n * 8) {
        throw FormatError(what + ": truncated payload");
    }
    d.p.resize(n);
    r.f64s(d.p);
    r.expect_end();
    return d;
}

} // namespace driftlab
