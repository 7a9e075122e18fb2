#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "driftlab/error.hpp"
#include "driftlab/gradcheck.hpp"
#include "driftlab/inversion.hpp"
#include "test_support.hpp"

using namespace driftlab;
using driftlab::testing::grid;

namespace {

// everywhere-positive flow so no upwind face switches direction inside a stencil
VelocityField smooth_flow(const GridSpec& s, std::uint64_t seed) {
    return add_fields(make_uniform(s, {0.8, 0.6}), make_random_eddies(s, 3, seed, 0.25));
}

ad::Tensor full_tensor(const GridSpec& s, const std::vector<double>& data) {
    return ad::Tensor({s.snapshots(), s.ny, s.nx}, data);
}

Trajectory shifted(const Trajectory& t, Vec2 d) {
    Trajectory out = t;
    for (std::size_t k = 1; k < out.positions.size(); ++k) {
        out.positions[k] = t.spec.wrap(out.positions[k] + d);
    }
    return out;
}

/// positions = base + a * sum(du) on both axes: a one-dimensional quadratic problem.
GraphSimulator linear_simulator(const VelocityField& base, const Trajectory& base_track, double a) {
    double base_sum = 0.0;
    for (double x : base.u()) {
        base_sum += x;
    }
    return [base_sum, base_track, a](const ad::Var& u, const ad::Var&, Vec2) {
        ad::Tape& tape = u.tape();
        const int n = static_cast<int>(base_track.positions.size());
        std::vector<double> flat;
        for (const Vec2& p : base_track.positions) {
            flat.push_back(p.x);
            flat.push_back(p.y);
        }
        const ad::Var s = ad::sub(ad::reshape(ad::sum(u), {1}), tape.constant(ad::Tensor({1}, {base_sum})));
        const ad::Var shift = ad::reshape(ad::broadcast_leading(s, 2 * n), {n, 2});
        return ad::add(tape.constant(ad::Tensor({n, 2}, flat)), ad::scale(shift, a));
    };
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

TEST(InversionConfig, Validation) {
    InversionConfig c;
    EXPECT_EQ(c.n_steps, 200);
    EXPECT_DOUBLE_EQ(c.step_size, 5e-2);
    EXPECT_NO_THROW(c.validate());
    c.n_steps = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.step_size = 0.0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.l2_weight = -1.0;
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(InversionLoss, CellUnitsSkipSeedAndWrap) {
    const GridSpec s = grid(16, 5, 10.0);
    Trajectory target{s, {}};
    std::vector<double> flat;
    for (int k = 0; k <= 5; ++k) {
        target.positions.push_back({155.0, 3.0});
        // one cell east every step except the seed; y crosses the seam by 1 km
        flat.push_back(k == 0 ? 100.0 : 5.0);
        flat.push_back(k == 0 ? 50.0 : 159.0);
    }
    ad::Tape tape;
    const ad::Var sim = tape.constant(ad::Tensor({6, 2}, flat));
    const ad::Var du = tape.constant(ad::Tensor({2}, {1.0, 2.0}));
    const ad::Var dv = tape.constant(ad::Tensor({2}, {0.0, 3.0}));
    EXPECT_NEAR(inversion_loss(sim, target, du, dv, 0.0).value().data[0], 5 * (1.0 + 0.16), 1e-12);
    EXPECT_NEAR(inversion_loss(sim, target, du, dv, 0.5).value().data[0], 5 * 1.16 + 0.5 * 14.0, 1e-12);
    EXPECT_THROW(inversion_loss(ad::slice(sim, 0, 0, 5), target, du, dv, 0.0), ShapeError);
}

TEST(Inversion, ExactTargetLeavesAnomalyAtZero) {
    const GridSpec s = grid(16, 4);
    const VelocityField f = smooth_flow(s, 1);
    const Trajectory target = run_simulator(oracle_simulator(s), f, {60.0, 70.0});
    InversionConfig c;
    c.n_steps = 5;
    const InversionResult r = invert_through_oracle(f, target, c);
    EXPECT_LT(r.loss.front(), 1e-20);
    EXPECT_LT(r.anomaly.norm(), 1e-6);
    EXPECT_FALSE(r.diverged);
    EXPECT_TRUE(r.warnings.empty());
}

TEST(Inversion, OracleGradientMatchesFiniteDifferences) {
    const GridSpec s = grid(16, 4);
    const VelocityField f = smooth_flow(s, 2);
    const Trajectory target = shifted(run_simulator(oracle_simulator(s), f, {60.0, 70.0}), {12.0, -7.0});
    const GraphSimulator sim = oracle_simulator(s);
    const ad::ScalarGraph g = [&](ad::Tape& tape, const std::vector<ad::Var>& in) {
        const ad::Var u = ad::add(tape.constant(full_tensor(s, f.u())), in[0]);
        const ad::Var v = ad::add(tape.constant(full_tensor(s, f.v())), in[1]);
        return inversion_loss(sim(u, v, target.positions.front()), target, in[0], in[1], 0.3);
    };
    const ad::Shape shape{5, 16, 16};
    ad::GradCheckOptions o;
    o.step = 1e-5;
    o.max_entries = 200;
    const ad::GradCheckReport rep =
        ad::gradient_check(g, {driftlab::testing::random_tensor(shape, 3, -0.05, 0.05),
                               driftlab::testing::random_tensor(shape, 4, -0.05, 0.05)},
                           o);
    EXPECT_GT(rep.checked, 300);
    EXPECT_LT(rep.max_rel_error, 1e-5) << rep.worst;
}

TEST(Inversion, NetworkGradientMatchesFiniteDifferences) {
    const GridSpec s = grid(16, 4);
    const VelocityField f = smooth_flow(s, 5);
    DriftNetConfig nc;
    nc.leaky_slope = 1.0; // smooth network: every entry must agree
    nc.temperature = 0.05;
    const DriftNet net = make_driftnet(s, nc, f.vmax(), 9);
    const Trajectory target = shifted(forward(net, f, {80.0, 80.0}), {5.0, 5.0});
    const GraphSimulator sim = network_simulator(net);
    const ad::ScalarGraph g = [&](ad::Tape& tape, const std::vector<ad::Var>& in) {
        const ad::Var u = ad::add(tape.constant(full_tensor(s, f.u())), in[0]);
        const ad::Var v = ad::add(tape.constant(full_tensor(s, f.v())), in[1]);
        return inversion_loss(sim(u, v, target.positions.front()), target, in[0], in[1], 0.0);
    };
    const ad::Shape shape{5, 16, 16};
    ad::GradCheckOptions o;
    o.step = 1e-5;
    o.max_entries = 60;
    const ad::GradCheckReport rep = ad::gradient_check(
        g, {ad::Tensor::zeros(shape), driftlab::testing::random_tensor(shape, 6, -0.05, 0.05)}, o);
    EXPECT_GT(rep.checked, 100);
    EXPECT_LT(rep.max_rel_error, 1e-5) << rep.worst;
}

TEST(Inversion, QuadraticProblemFollowsExactRecursion) {
    const GridSpec s = grid(8, 3);
    const VelocityField base = make_uniform(s, {0.3, 0.1});
    const Trajectory track = advect_rk4(base, {40.0, 40.0});
    const Vec2 offset{6.0, 6.0};
    const Trajectory target = shifted(track, offset);
    const double a = 0.02, l2 = 0.05, h2 = s.h * s.h;
    InversionConfig c;
    c.n_steps = 25;
    c.step_size = 0.2;
    c.l2_weight = l2;
    const InversionResult r = invert_with(linear_simulator(base, track, a), base, target, c);

    // every du entry moves together: d <- d - step * (4K a (aMd - c)/h^2 + 2 l2 d); dv never moves
    const double m = static_cast<double>(s.snapshots()) * s.cells();
    const int k = s.k_steps;
    double d = 0.0;
    for (int i = 0; i <= c.n_steps; ++i) {
        const double mis = a * m * d - offset.x;
        const double loss = 2.0 * k * mis * mis / h2 + l2 * m * d * d;
        ASSERT_NEAR(r.loss[static_cast<std::size_t>(i)], loss, 1e-9 * std::max(1.0, loss)) << i;
        if (i < c.n_steps) {
            d -= c.step_size * (4.0 * k * a * mis / h2 + 2.0 * l2 * d);
        }
    }
    for (std::size_t i = 0; i < r.anomaly.du.size(); ++i) {
        ASSERT_NEAR(r.anomaly.du[i], d, 1e-12);
        ASSERT_EQ(r.anomaly.dv[i], 0.0);
    }
    for (std::size_t i = 1; i < r.best_loss.size(); ++i) {
        EXPECT_LE(r.best_loss[i], r.best_loss[i - 1]);
        EXPECT_EQ(r.best_loss[i], std::min(r.best_loss[i - 1], r.loss[i]));
    }

    // nothing to correct
    const InversionResult still = invert_with(linear_simulator(base, track, a), base, track, c);
    EXPECT_EQ(still.anomaly.norm(), 0.0);
    EXPECT_EQ(still.loss.back(), 0.0);
}

TEST(Inversion, DivergenceIsReported) {
    const GridSpec s = grid(8, 3);
    const VelocityField base = make_uniform(s, {0.3, 0.1});
    const Trajectory track = advect_rk4(base, {40.0, 40.0});
    InversionConfig c;
    c.n_steps = 40;
    c.step_size = 0.05; // gain |1 - step * 4K a^2 M / h^2| = 1.5
    const double m = static_cast<double>(s.snapshots()) * s.cells();
    const double a = std::sqrt(2.5 * 100.0 / (0.05 * 4.0 * 3 * m));
    const InversionResult r = invert_with(linear_simulator(base, track, a), base, shifted(track, {4.0, 4.0}), c);
    EXPECT_TRUE(r.diverged);
    ASSERT_EQ(r.warnings.size(), 1u);
    EXPECT_NE(r.warnings[0].find("diverg"), std::string::npos);
    EXPECT_EQ(r.best_loss.back(), r.loss.front());
}

TEST(Inversion, ErrorsOnMismatch) {
    const GridSpec s = grid(8, 3);
    const VelocityField f = make_uniform(s, {0.3, 0.1});
    const Trajectory t = advect_rk4(f, {40.0, 40.0});
    EXPECT_THROW(invert_through_oracle(make_uniform(grid(8, 4), {0.3, 0.1}), t, {}), ShapeError);
    Trajectory outside = t;
    outside.positions[0] = {-5.0, 10.0};
    EXPECT_THROW(invert_through_oracle(f, outside, {}), RangeError);
    const DriftNet net = make_driftnet(grid(16, 3), {}, 1.0, 1);
    EXPECT_THROW(invert(net, f, t, {}), ShapeError);
}

TEST(Inversion, NetworkParametersAreFrozen) {
    const GridSpec s = grid(16, 4);
    const VelocityField f = smooth_flow(s, 7);
    const DriftNet net = make_driftnet(s, {}, f.vmax(), 4);
    const ParamStore before = net.params;
    const Trajectory target = shifted(forward(net, f, {80.0, 80.0}), {8.0, 0.0});
    InversionConfig c;
    c.n_steps = 4;
    const InversionResult r = invert(net, f, target, c);
    EXPECT_TRUE(net.params == before);
    EXPECT_GT(r.anomaly.norm(), 0.0);
    EXPECT_LE(r.best_loss.back(), r.loss.front());
}

TEST(Inversion, OracleRecoversUniformBias) {
    const GridSpec s = grid(24, 12);
    const VelocityField base = make_random_eddies(s, 3, 11, 0.3);
    const VelocityField truth = add_fields(base, make_uniform(s, {0.5, 0.0}));
    const Trajectory target = run_simulator(oracle_simulator(s), truth, {60.0, 120.0});
    InversionConfig c;
    c.time_constant = true;
    c.step_size = 2e-2;
    c.n_steps = 150;
    const InversionResult r = invert_through_oracle(base, target, c);
    EXPECT_LE(r.best_loss.back(), 0.5 * r.loss.front());
    // mean correction over the cells the target passes through
    double su = 0.0, sv = 0.0;
    int n = 0;
    for (int row = 0; row < s.ny; ++row) {
        for (int col = 0; col < s.nx; ++col) {
            const Vec2 c0 = s.cell_center(row, col);
            bool near = false;
            for (const Vec2& p : target.positions) {
                near = near || s.distance(c0, p) <= 1.5 * s.h;
            }
            if (near) {
                su += r.anomaly.du[static_cast<std::size_t>(row * s.nx + col)];
                sv += r.anomaly.dv[static_cast<std::size_t>(row * s.nx + col)];
                ++n;
            }
        }
    }
    ASSERT_GT(n, 0);
    EXPECT_NEAR(su / n, 0.5, 0.15);
    EXPECT_LT(std::abs(sv / n), 0.15);
    // shared across snapshots
    const std::size_t plane = s.cells();
    EXPECT_EQ(r.anomaly.du[3], r.anomaly.du[5 * plane + 3]);
}

TEST(AnomalyReport, ZeroAnomalyAndCorrectedTrack) {
    const GridSpec s = grid(16, 4);
    const VelocityField f = smooth_flow(s, 8);
    const Trajectory target = shifted(run_simulator(oracle_simulator(s), f, {60.0, 70.0}), {6.0, 3.0});

    InversionResult none;
    none.anomaly = AnomalyField::zeros(s);
    none.loss = {1.0};
    none.best_loss = {1.0};
    const AnomalyReport z = anomaly_report(none, f, target, oracle_value_simulator());
    for (double w : z.anomaly_vorticity.zeta) {
        EXPECT_EQ(w, 0.0);
    }
    EXPECT_EQ(z.corrected.positions, z.baseline.positions);

    InversionConfig c;
    c.n_steps = 10;
    const InversionResult r = invert_through_oracle(f, target, c);
    const AnomalyReport rep = anomaly_report(r, f, target, oracle_value_simulator());
    const Trajectory direct = run_simulator(oracle_simulator(s), r.anomaly.apply(f), target.positions.front());
    for (std::size_t k = 0; k < direct.positions.size(); ++k) {
        EXPECT_NEAR(rep.corrected.positions[k].x, direct.positions[k].x, 1e-9);
        EXPECT_NEAR(rep.corrected.positions[k].y, direct.positions[k].y, 1e-9);
    }
    const InversionResult again = invert_through_oracle(f, target, c);
    EXPECT_EQ(again.loss, r.loss);
    EXPECT_EQ(again.anomaly.du, r.anomaly.du);

    const auto dir = driftlab::testing::scratch_dir("anomaly_report");
    write_anomaly_report(rep, dir.string());
    for (const char* name : {"anomaly.drft", "loss.csv", "trajectories.csv", "vorticity_anomaly.csv",
                             "vorticity_corrected.csv", "vorticity_anomaly.svg", "vorticity_corrected.svg",
                             "summary.json"}) {
        EXPECT_TRUE(std::filesystem::exists(dir / name)) << name;
    }
    const auto j = nlohmann::json::parse(slurp(dir / "summary.json"));
    EXPECT_EQ(j.at("steps").get<int>(), 10);
    EXPECT_DOUBLE_EQ(j.at("final_loss").get<double>(), r.loss.back());
    EXPECT_EQ(read_field((dir / "anomaly.drft").string()).u(), r.anomaly.du);
    const std::string loss = slurp(dir / "loss.csv");
    EXPECT_EQ(loss.substr(0, loss.find('\n')), "step,loss,best_loss");
}
