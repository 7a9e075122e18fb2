#include "driftlab/selftest.hpp"

#include <cmath>
#include <sstream>

#include "driftlab/driftnet.hpp"
#include "driftlab/error.hpp"
#include "driftlab/field.hpp"
#include "driftlab/fokkerplanck.hpp"
#include "driftlab/gradcheck.hpp"
#include "driftlab/lagrangian.hpp"
#include "driftlab/metrics.hpp"
#include "driftlab/training.hpp"

namespace driftlab {
namespace {

constexpr double kPi = 3.14159265358979323846;

std::string fmt(double x) {
    std::ostringstream out;
    out.precision(3);
    out << std::scientific << x;
    return out.str();
}

GridSpec small_grid(int n, int k) {
    GridSpec s;
    s.nx = s.ny = n;
    s.k_steps = k;
    return s;
}

CheckResult interpolation_identity() {
    const GridSpec s = small_grid(8, 2);
    const VelocityField f = make_random_eddies(s, 3, 11);
    double err = 0.0;
    for (int k = 0; k <= s.k_steps; ++k) {
        for (int row = 0; row < s.ny; ++row) {
            for (int col = 0; col < s.nx; ++col) {
                const Vec2 got = sample_velocity(f, s.cell_center(row, col), k * s.delta);
                const std::size_t i = f.index(k, row, col);
                err = std::max({err, std::abs(got.x - f.u()[i]), std::abs(got.y - f.v()[i])});
            }
        }
    }
    const Vec2 p{13.7, 55.1};
    const Vec2 a = sample_velocity(f, p, 4.0);
    const Vec2 b = sample_velocity(f, p + Vec2{s.width(), -s.height()}, 4.0);
    err = std::max({err, std::abs(a.x - b.x), std::abs(a.y - b.y)});
    return {"field: nodal interpolation and periodic wrap", err < 1e-12, "max error " + fmt(err)};
}

CheckResult rotation_orbit() {
    GridSpec s = small_grid(16, 1);
    const double omega = 0.02;
    const double period = 2.0 * kPi / omega;
    s.delta = period;
    const Vec2 c{80.0, 80.0};
    const VelocityField f = make_solid_rotation(s, omega, c);
    const Vec2 r0{110.0, 80.0};
    const int substeps = static_cast<int>(std::ceil(omega * period / 0.039));
    const Trajectory t = advect_rk4(f, r0, substeps);
    const double radius = (t.positions.back() - c).norm();
    const double rel = std::abs(radius - 30.0) / 30.0;
    return {"lagrangian: RK4 solid-rotation orbit radius", rel < 1e-8, "relative drift " + fmt(rel)};
}

CheckResult density_mass() {
    const GridSpec s = small_grid(16, 4);
    const VelocityField f = make_random_eddies(s, 4, 5);
    const DensityGrid d = propagate_density(f, init_density(s, {63.0, 91.0}, 0.0));
    double err = 0.0;
    for (int k = 0; k < d.snapshots; ++k) {
        err = std::max(err, std::abs(d.mass(k) - 1.0));
    }
    return {"fokkerplanck: mass conservation", err < 1e-12, "max |mass - 1| " + fmt(err)};
}

CheckResult op_gradients() {
    const GridSpec s = small_grid(6, 2);
    ad::Tensor x = ad::Tensor::zeros({2, 6, 6});
    ad::Tensor w = ad::Tensor::zeros({3, 2, 3, 3});
    ad::Tensor b = ad::Tensor::zeros({3});
    for (std::size_t i = 0; i < x.size(); ++i) {
        x.data[i] = std::sin(0.7 * static_cast<double>(i) + 0.3);
    }
    for (std::size_t i = 0; i < w.size(); ++i) {
        w.data[i] = 0.3 * std::cos(1.3 * static_cast<double>(i));
    }
    b.data = {0.1, -0.2, 0.05};
    const ad::Tensor readout({3, 2}, {0.7, -0.4, 1.1, 0.2, -0.5, 0.9});
    const ad::ScalarGraph f = [&](ad::Tape& tape, const std::vector<ad::Var>& in) {
        const ad::Var y = ad::tanh(ad::conv2d(in[0], in[1], in[2]));
        const ad::Var p = ad::spatial_softmax(y, 1.0);
        const ad::Var xy = ad::soft_argmax(p, x_axis_of(s), y_axis_of(s));
        return ad::sum(ad::mul(xy, tape.constant(readout)));
    };
    const ad::GradCheckReport r = ad::gradient_check(f, {x, w, b});
    return {"autodiff: conv2d/softmax/soft-argmax gradients", r.max_rel_error < 1e-6,
            "max relative error " + fmt(r.max_rel_error)};
}

CheckResult loss_identities() {
    const GridSpec s = small_grid(32, 4);
    Trajectory ref{s, {}}, frozen{s, {}}, offset{s, {}};
    for (int j = 0; j <= 4; ++j) {
        ref.positions.push_back({50.0 + 10.0 * j, 70.0});
        frozen.positions.push_back({50.0, 70.0});
        offset.positions.push_back(ref.positions.back() + Vec2{3.0, 4.0});
    }
    const double zero = total_loss({ref}, {ref}, 0.2, 0.8);
    const double liu = loss_liu({ref}, {frozen});
    const Ensemble a{{ref.positions.front()}, {ref}}, b{{offset.positions.front()}, {offset}};
    const double rmse = rmse_positions(a, b, 2);
    const bool ok = zero == 0.0 && std::abs(liu - 1.0) < 1e-9 && std::abs(rmse - 5.0) < 1e-12;
    return {"training/metrics: loss identities", ok,
            "total(ref,ref)=" + fmt(zero) + " liu=" + fmt(liu) + " rmse=" + fmt(rmse)};
}

CheckResult field_round_trip() {
    const GridSpec s = small_grid(8, 3);
    const VelocityField f = make_double_gyre(s, 0.4, 0.2, 0.1);
    const VelocityField g = decode_field(encode_field(f));
    bool truncated = false;
    std::vector<char> bytes = encode_field(f);
    bytes.resize(bytes.size() - 8);
    try {
        decode_field(bytes);
    } catch (const FormatError&) {
        truncated = true;
    }
    return {"field: binary round trip and truncation", f == g && truncated, ""};
}

CheckResult network_equivariance() {
    const GridSpec s = small_grid(12, 3);
    const VelocityField f = make_random_eddies(s, 2, 3);
    const DriftNet net = make_driftnet(s, DriftNetConfig{}, f.vmax(), 9);
    const Vec2 r0{41.0, 57.0};
    const Trajectory a = forward(net, f, r0);
    const Trajectory again = forward(net, f, r0);
    const Trajectory b = forward(net, shift_field(f, 2, 1), s.wrap(r0 + Vec2{2 * s.h, s.h}));
    double err = 0.0;
    for (std::size_t j = 0; j < a.positions.size(); ++j) {
        const Vec2 d = s.displacement(a.positions[j] + Vec2{2 * s.h, s.h}, b.positions[j]);
        err = std::max(err, d.norm());
    }
    bool same = true;
    for (std::size_t j = 0; j < a.positions.size(); ++j) {
        same = same && a.positions[j] == again.positions[j];
    }
    return {"driftnet: determinism and translation equivariance", same && err < 1e-9, "shift error " + fmt(err)};
}

} // namespace

std::vector<CheckResult> run_selftest() {
    std::vector<CheckResult (*)()> checks{interpolation_identity, rotation_orbit,   density_mass,
                                          op_gradients,           loss_identities,  field_round_trip,
                                          network_equivariance};
    std::vector<CheckResult> out;
    for (auto check : checks) {
        try {
            out.push_back(check());
        } catch (const std::exception& e) {
            out.push_back({"(check raised)", false, e.what()});
        }
    }
    return out;
}

} // namespace driftlab
