#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <random>
#include <sstream>

#include "driftlab/error.hpp"
#include "driftlab/metrics.hpp"
#include "driftlab/training.hpp"
#include "test_support.hpp"

using namespace driftlab;
using driftlab::testing::grid;

namespace {

constexpr double kPi = 3.14159265358979323846;

Ensemble make_ensemble(const std::vector<Trajectory>& ts) {
    Ensemble e;
    for (const auto& t : ts) {
        e.seeds.push_back(t.positions.front());
        e.trajectories.push_back(t);
    }
    return e;
}

Ensemble shifted(const Ensemble& e, Vec2 d) {
    Ensemble out = e;
    for (auto& t : out.trajectories) {
        for (Vec2& p : t.positions) {
            p = t.spec.wrap(p + d);
        }
    }
    for (Vec2& s : out.seeds) {
        s = e.spec().wrap(s + d);
    }
    return out;
}

Trajectory circle(const GridSpec& s, Vec2 c, double radius, double period_steps, double phase) {
    Trajectory t{s, {}};
    for (int k = 0; k <= s.k_steps; ++k) {
        const double a = 2 * kPi * k / period_steps + phase;
        t.positions.push_back(c + Vec2{radius * std::cos(a), radius * std::sin(a)});
    }
    return t;
}

Ensemble random_walks(const GridSpec& s, int n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> pos(0.0, s.width()), step(-8.0, 8.0);
    std::vector<Trajectory> ts;
    for (int i = 0; i < n; ++i) {
        Trajectory t{s, {{pos(rng), pos(rng)}}};
        for (int k = 0; k < s.k_steps; ++k) {
            t.positions.push_back(s.wrap(t.positions.back() + Vec2{step(rng), step(rng)}));
        }
        ts.push_back(t);
    }
    return make_ensemble(ts);
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

TEST(Quantile, LinearInterpolation) {
    EXPECT_DOUBLE_EQ(quantile({4.0, 1.0, 3.0, 2.0}, 0.25), 1.75);
    EXPECT_DOUBLE_EQ(quantile({4.0, 1.0, 3.0, 2.0}, 0.5), 2.5);
    EXPECT_DOUBLE_EQ(quantile({4.0, 1.0, 3.0, 2.0}, 0.0), 1.0);
    EXPECT_DOUBLE_EQ(quantile({4.0, 1.0, 3.0, 2.0}, 1.0), 4.0);
    EXPECT_DOUBLE_EQ(quantile({7.0}, 0.75), 7.0);
    EXPECT_THROW(quantile({}, 0.5), ShapeError);
}

TEST(SeparationCurve, IdenticalIsZeroAndOffsetIsFlat) {
    const GridSpec s = grid(32, 6);
    const Ensemble ref = random_walks(s, 9, 1);
    const SeparationCurve z = separation_curve(ref, ref);
    ASSERT_EQ(z.mean.size(), 7u);
    for (std::size_t k = 0; k < z.mean.size(); ++k) {
        EXPECT_EQ(z.mean[k], 0.0);
        EXPECT_EQ(z.q1[k], 0.0);
        EXPECT_EQ(z.q3[k], 0.0);
    }
    const SeparationCurve f = separation_curve(ref, shifted(ref, {3.0, 4.0}));
    for (std::size_t k = 0; k < f.mean.size(); ++k) {
        EXPECT_NEAR(f.mean[k], 5.0, 1e-9);
        EXPECT_NEAR(f.q1[k], 5.0, 1e-9);
        EXPECT_NEAR(f.q3[k], 5.0, 1e-9);
    }
    EXPECT_THROW(separation_curve(ref, random_walks(s, 8, 2)), ShapeError);
    EXPECT_THROW(separation_curve(ref, random_walks(grid(32, 5), 9, 2)), ShapeError);
}

TEST(SeparationCurve, BoundedAndOrdered) {
    const GridSpec s = grid(16, 10);
    const SeparationCurve c = separation_curve(random_walks(s, 50, 3), random_walks(s, 50, 4));
    const double bound = 0.5 * std::hypot(s.width(), s.height());
    for (std::size_t k = 0; k < c.mean.size(); ++k) {
        EXPECT_GE(c.q1[k], 0.0);
        EXPECT_LE(c.q1[k], c.q3[k]);
        EXPECT_LE(c.mean[k], bound);
    }
}

TEST(Rmse, OffsetAndConsistencyWithMse) {
    const GridSpec s = grid(32, 4);
    std::vector<Trajectory> a, b;
    for (int i = 0; i < 5; ++i) {
        Trajectory t{s, {}}, u{s, {}};
        for (int k = 0; k <= 4; ++k) {
            const Vec2 p{static_cast<double>(20 + 7 * i + 3 * k), static_cast<double>(40 + 11 * k)};
            t.positions.push_back(p);
            u.positions.push_back(p + Vec2{3.0, 4.0});
        }
        a.push_back(t);
        b.push_back(u);
    }
    const Ensemble ra = make_ensemble(a), rb = make_ensemble(b);
    EXPECT_EQ(rmse_positions(ra, ra, 2), 0.0);
    for (int k = 0; k <= 4; ++k) {
        EXPECT_EQ(rmse_positions(ra, rb, k), 5.0);
    }
    EXPECT_EQ(rmse_positions(ra, rb), 5.0);
    EXPECT_THROW(rmse_positions(ra, rb, 5), RangeError);

    const Ensemble x = random_walks(s, 12, 5), y = random_walks(s, 12, 6);
    EXPECT_NEAR(rmse_positions(x, y), std::sqrt(loss_mse(x.trajectories, y.trajectories)), 1e-12);
}

TEST(Autocorrelation, CircularMotionGivesCosine) {
    GridSpec s = grid(64, 240);
    const double period = 24.0;
    std::vector<Trajectory> ts;
    for (int i = 0; i < 4; ++i) {
        ts.push_back(circle(s, {320.0, 320.0}, 50.0 + 10 * i, period, 0.7 * i));
    }
    const Autocorrelation r = velocity_autocorrelation(make_ensemble(ts), 30);
    EXPECT_EQ(r.included_u, 4);
    EXPECT_EQ(r.excluded_u, 0);
    ASSERT_EQ(r.r_u.size(), 31u);
    EXPECT_DOUBLE_EQ(r.r_u[0], 1.0);
    EXPECT_DOUBLE_EQ(r.r_v[0], 1.0);
    const double n = s.k_steps; // velocity samples
    for (int tau = 0; tau <= 30; ++tau) {
        // biased estimator of a sinusoid over whole periods: (1 - tau/N) cos(2 pi tau / P)
        const double expect = (1.0 - tau / n) * std::cos(2 * kPi * tau / period);
        EXPECT_NEAR(r.r_u[static_cast<std::size_t>(tau)], expect, 0.01) << tau;
        EXPECT_NEAR(r.r_v[static_cast<std::size_t>(tau)], expect, 0.01) << tau;
        EXPECT_NEAR(r.r_u[static_cast<std::size_t>(tau)], std::cos(2 * kPi * tau / period), 0.15) << tau;
    }
}

TEST(Autocorrelation, UniformMotionIsExcluded) {
    const GridSpec s = grid(32, 8);
    std::vector<Trajectory> ts;
    Trajectory line{s, {}};
    for (int k = 0; k <= 8; ++k) {
        line.positions.push_back(s.wrap({10.0 + 7.0 * k, 20.0 + 3.0 * k}));
    }
    ts.push_back(line);
    ts.push_back(circle(s, {160.0, 160.0}, 40.0, 6.0, 0.0));
    const Autocorrelation r = velocity_autocorrelation(make_ensemble(ts), 3);
    EXPECT_EQ(r.excluded_u, 1);
    EXPECT_EQ(r.excluded_v, 1);
    EXPECT_EQ(r.included_u, 1);
    EXPECT_DOUBLE_EQ(r.r_u[0], 1.0);
    EXPECT_THROW(velocity_autocorrelation(make_ensemble(ts), 8), RangeError);
    EXPECT_THROW(velocity_autocorrelation(make_ensemble({circle(grid(8, 1), {40, 40}, 5, 4, 0)}), 0), ConfigError);
}

TEST(LagrangianTimescale, RectangleTriangleAndCrossing) {
    const double delta = 6.0;
    EXPECT_DOUBLE_EQ(lagrangian_timescale(std::vector<double>(9, 1.0), delta), 8 * delta / 24.0);
    std::vector<double> tri;
    for (int tau = 0; tau <= 10; ++tau) {
        tri.push_back(std::max(0.0, 1.0 - tau / 4.0));
    }
    EXPECT_DOUBLE_EQ(lagrangian_timescale(tri, delta), 4 * delta / 2 / 24.0);
    // crossing between lags 1 and 2 at 1.5: 0.75 + 0.125 lags, later negative lobes ignored
    EXPECT_DOUBLE_EQ(lagrangian_timescale({1.0, 0.5, -0.5, 0.9}, delta), 0.875 * delta / 24.0);
}

TEST(LagrangianStats, PositiveOnSteadyGyre) {
    const GridSpec s = grid(32, 36);
    const VelocityField f = make_double_gyre(s, 0.5, 0.0, 0.1);
    const Ensemble e = advect_ensemble(f, uniform_seeds(s, 40, 3));
    const LagrangianStats st = lagrangian_stats(e, 20);
    EXPECT_GT(st.t_u, 0.0);
    EXPECT_GT(st.t_v, 0.0);
    EXPECT_TRUE(std::isfinite(st.t_u) && std::isfinite(st.t_v));
    EXPECT_GT(st.acf.included_u, 30);
}

TEST(Evaluate, TranslationInvariantAndPersistence) {
    const GridSpec s = grid(32, 12);
    const VelocityField f = make_random_eddies(s, 4, 8, 1.5);
    const Ensemble ref = advect_ensemble(f, uniform_seeds(s, 30, 1));
    const Ensemble sim = advect_ensemble(f, uniform_seeds(s, 30, 1), Integrator::euler, 1);
    const MetricsReport a = evaluate_ensembles(ref, sim);
    const MetricsReport b = evaluate_ensembles(shifted(ref, {37.0, -55.0}), shifted(sim, {37.0, -55.0}));
    EXPECT_NEAR(a.final_separation, b.final_separation, 1e-9);
    EXPECT_NEAR(a.rmse_all, b.rmse_all, 1e-9);
    EXPECT_NEAR(a.liu, b.liu, 1e-9);
    EXPECT_NEAR(a.ref_stats.t_u, b.ref_stats.t_u, 1e-9);
    EXPECT_NEAR(a.sim_stats.t_v, b.sim_stats.t_v, 1e-9);
    for (std::size_t k = 0; k < a.separation.mean.size(); ++k) {
        EXPECT_NEAR(a.separation.q3[k], b.separation.q3[k], 1e-9);
    }
    double persistence = 0.0;
    for (const auto& t : ref.trajectories) {
        persistence += s.distance(t.positions.front(), t.positions.back());
    }
    EXPECT_NEAR(a.persistence_final_separation, persistence / 30, 1e-9);
    EXPECT_EQ(a.n_traj, 30);
    EXPECT_EQ(a.delta_hours, s.delta);

    const MetricsReport z = evaluate_ensembles(ref, ref);
    EXPECT_EQ(z.final_separation, 0.0);
    EXPECT_EQ(z.rmse_all, 0.0);
    EXPECT_EQ(z.liu, 0.0);
}

TEST(Evaluate, ReportFiles) {
    const GridSpec s = grid(16, 8);
    const VelocityField f = make_random_eddies(s, 3, 2);
    const Ensemble ref = advect_ensemble(f, uniform_seeds(s, 10, 4));
    const MetricsReport r = evaluate_ensembles(ref, advect_ensemble(f, uniform_seeds(s, 10, 4), Integrator::euler, 1));
    const auto dir = driftlab::testing::scratch_dir("metrics_report");
    write_metrics_report(r, dir.string());
    const auto j = nlohmann::json::parse(slurp(dir / "metrics.json"));
    EXPECT_EQ(j.at("n_traj").get<int>(), 10);
    EXPECT_DOUBLE_EQ(j.at("final_separation_km").get<double>(), r.final_separation);
    EXPECT_DOUBLE_EQ(j.at("liu_index").get<double>(), r.liu);
    const std::string sep = slurp(dir / "separation.csv");
    EXPECT_EQ(sep.substr(0, sep.find('\n')), "step,t_hours,mean,q1,q3,rmse");
    EXPECT_EQ(std::count(sep.begin(), sep.end(), '\n'), 10);
    const std::string acf = slurp(dir / "autocorrelation.csv");
    EXPECT_EQ(acf.substr(0, acf.find('\n')), "lag,t_hours,ref_u,ref_v,sim_u,sim_v");
    for (const char* svg : {"separation.svg", "autocorrelation.svg"}) {
        const std::string text = slurp(dir / svg);
        EXPECT_EQ(text.rfind("<svg", 0), 0u) << svg;
        EXPECT_NE(text.find("</svg>"), std::string::npos);
    }
    EXPECT_EQ(metrics_json(r), metrics_json(evaluate_ensembles(ref, advect_ensemble(f, uniform_seeds(s, 10, 4),
                                                                                     Integrator::euler, 1))));
}
