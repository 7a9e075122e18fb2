#include "driftlab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>

#include <json.hpp>

#include "driftlab/binary_io.hpp"
#include "driftlab/error.hpp"
#include "driftlab/svg.hpp"
#include "driftlab/training.hpp"

namespace driftlab {
namespace {

void require_matched(const Ensemble& ref, const Ensemble& sim) {
    if (ref.trajectories.empty() || ref.trajectories.size() != sim.trajectories.size()) {
        throw ShapeError("metrics: ensembles must be non-empty and of equal size");
    }
    const std::size_t n = ref.trajectories.front().positions.size();
    for (std::size_t i = 0; i < ref.trajectories.size(); ++i) {
        if (ref.trajectories[i].positions.size() != n || sim.trajectories[i].positions.size() != n) {
            throw ShapeError("metrics: trajectory " + std::to_string(i) + " length mismatch");
        }
    }
}

std::vector<double> component_acf(const std::vector<double>& x, int max_lag, bool& ok) {
    const std::size_t n = x.size();
    double mean = 0.0;
    for (double v : x) {
        mean += v;
    }
    mean /= static_cast<double>(n);
    std::vector<double> c(x.size());
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        c[i] = x[i] - mean;
        var += c[i] * c[i];
    }
    std::vector<double> r(static_cast<std::size_t>(max_lag) + 1, 0.0);
    // relative threshold: constant velocity leaves only rounding noise after mean removal
    double scale = 0.0;
    for (double v : x) {
        scale += v * v;
    }
    ok = var > 1e-20 * std::max(scale, 1e-300) && var > 0.0;
    if (!ok) {
        return r;
    }
    for (int lag = 0; lag <= max_lag; ++lag) {
        double s = 0.0;
        for (std::size_t i = 0; i + static_cast<std::size_t>(lag) < n; ++i) {
            s += c[i] * c[i + lag];
        }
        r[static_cast<std::size_t>(lag)] = s / var;
    }
    return r;
}

} // namespace

double quantile(std::vector<double> values, double q) {
    if (values.empty()) {
        throw ShapeError("quantile of an empty sample");
    }
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double w = pos - static_cast<double>(lo);
    return values[lo] + w * (values[hi] - values[lo]);
}

SeparationCurve separation_curve(const Ensemble& ref, const Ensemble& sim) {
    require_matched(ref, sim);
    const GridSpec& spec = ref.trajectories.front().spec;
    const std::size_t steps = ref.trajectories.front().positions.size();
    SeparationCurve curve;
    std::vector<double> d(ref.trajectories.size());
    for (std::size_t j = 0; j < steps; ++j) {
        double sum = 0.0;
        for (std::size_t i = 0; i < d.size(); ++i) {
            d[i] = spec.distance(ref.trajectories[i].positions[j], sim.trajectories[i].positions[j]);
            sum += d[i];
        }
        curve.mean.push_back(sum / static_cast<double>(d.size()));
        curve.q1.push_back(quantile(d, 0.25));
        curve.q3.push_back(quantile(d, 0.75));
    }
    return curve;
}

double rmse_positions(const Ensemble& ref, const Ensemble& sim, int step) {
    require_matched(ref, sim);
    const GridSpec& spec = ref.trajectories.front().spec;
    const int steps = static_cast<int>(ref.trajectories.front().positions.size());
    if (step < 0 || step >= steps) {
        throw RangeError("rmse_positions: step " + std::to_string(step) + " outside 0.." + std::to_string(steps - 1));
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < ref.trajectories.size(); ++i) {
        sum += spec.displacement(ref.trajectories[i].positions[step], sim.trajectories[i].positions[step])
                   .squared_norm();
    }
    return std::sqrt(sum / static_cast<double>(ref.trajectories.size()));
}

double rmse_positions(const Ensemble& ref, const Ensemble& sim) {
    require_matched(ref, sim);
    return std::sqrt(loss_mse(ref.trajectories, sim.trajectories));
}

Autocorrelation velocity_autocorrelation(const Ensemble& ensemble, int max_lag) {
    if (ensemble.trajectories.empty()) {
        throw ShapeError("velocity_autocorrelation: empty ensemble");
    }
    const GridSpec& spec = ensemble.trajectories.front().spec;
    if (spec.k_steps < 2) {
        throw ConfigError("velocity_autocorrelation needs K >= 2");
    }
    const int n_vel = spec.k_steps;
    if (max_lag < 0 || max_lag > n_vel - 1) {
        throw RangeError("velocity_autocorrelation: max_lag must lie in 0.." + std::to_string(n_vel - 1));
    }
    Autocorrelation out;
    out.r_u.assign(static_cast<std::size_t>(max_lag) + 1, 0.0);
    out.r_v.assign(static_cast<std::size_t>(max_lag) + 1, 0.0);
    std::vector<double> u(static_cast<std::size_t>(n_vel)), v(static_cast<std::size_t>(n_vel));
    for (const auto& traj : ensemble.trajectories) {
        if (static_cast<int>(traj.positions.size()) != n_vel + 1) {
            throw ShapeError("velocity_autocorrelation: trajectories must share K");
        }
        for (int j = 0; j < n_vel; ++j) {
            const Vec2 d = spec.displacement(traj.positions[j], traj.positions[j + 1]);
            u[j] = d.x / spec.delta;
            v[j] = d.y / spec.delta;
        }
        bool ok = false;
        const auto ru = component_acf(u, max_lag, ok);
        if (ok) {
            ++out.included_u;
            for (std::size_t l = 0; l < ru.size(); ++l) {
                out.r_u[l] += ru[l];
            }
        } else {
            ++out.excluded_u;
        }
        const auto rv = component_acf(v, max_lag, ok);
        if (ok) {
            ++out.included_v;
            for (std::size_t l = 0; l < rv.size(); ++l) {
                out.r_v[l] += rv[l];
            }
        } else {
            ++out.excluded_v;
        }
    }
    for (double& r : out.r_u) {
        r = out.included_u > 0 ? r / out.included_u : 0.0;
    }
    for (double& r : out.r_v) {
        r = out.included_v > 0 ? r / out.included_v : 0.0;
    }
    return out;
}

double lagrangian_timescale(const std::vector<double>& r, double delta_hours) {
    double area = 0.0;
    for (std::size_t i = 1; i < r.size(); ++i) {
        const double a = r[i - 1], b = r[i];
        if (b <= 0.0) {
            if (a > 0.0) {
                area += 0.5 * a * (a / (a - b));
            }
            break;
        }
        area += 0.5 * (a + b);
    }
    return std::max(0.0, area) * delta_hours / 24.0;
}

LagrangianStats lagrangian_stats(const Ensemble& ensemble, int max_lag) {
    LagrangianStats s;
    s.acf = velocity_autocorrelation(ensemble, max_lag);
    const double delta = ensemble.trajectories.front().spec.delta;
    s.t_u = s.acf.included_u > 0 ? lagrangian_timescale(s.acf.r_u, delta) : 0.0;
    s.t_v = s.acf.included_v > 0 ? lagrangian_timescale(s.acf.r_v, delta) : 0.0;
    return s;
}

MetricsReport evaluate_ensembles(const Ensemble& ref, const Ensemble& sim) {
    require_matched(ref, sim);
    const GridSpec& spec = ref.trajectories.front().spec;
    const int steps = static_cast<int>(ref.trajectories.front().positions.size());
    MetricsReport r;
    r.n_traj = static_cast<int>(ref.trajectories.size());
    r.delta_hours = spec.delta;
    r.separation = separation_curve(ref, sim);
    for (int j = 0; j < steps; ++j) {
        r.rmse.push_back(rmse_positions(ref, sim, j));
    }
    r.rmse_all = rmse_positions(ref, sim);
    r.liu = loss_liu(ref.trajectories, sim.trajectories);
    r.final_separation = r.separation.mean.back();
    double pers = 0.0;
    for (const auto& t : ref.trajectories) {
        pers += spec.distance(t.positions.front(), t.positions.back());
    }
    r.persistence_final_separation = pers / static_cast<double>(r.n_traj);
    if (spec.k_steps >= 2) {
        r.ref_stats = lagrangian_stats(ref, spec.k_steps - 1);
        r.sim_stats = lagrangian_stats(sim, spec.k_steps - 1);
    }
    return r;
}

std::string metrics_json(const MetricsReport& r) {
    nlohmann::ordered_json j;
    j["n_traj"] = r.n_traj;
    j["delta_hours"] = r.delta_hours;
    j["final_separation_km"] = r.final_separation;
    j["final_separation_q1_km"] = r.separation.q1.back();
    j["final_separation_q3_km"] = r.separation.q3.back();
    j["persistence_final_separation_km"] = r.persistence_final_separation;
    j["liu_index"] = r.liu;
    j["rmse_km"] = r.rmse_all;
    j["rmse_final_km"] = r.rmse.back();
    j["lagrangian_timescale_days"] = {
        {"ref_u", r.ref_stats.t_u},
        {"ref_v", r.ref_stats.t_v},
        {"sim_u", r.sim_stats.t_u},
        {"sim_v", r.sim_stats.t_v},
        {"abs_diff_u", std::abs(r.ref_stats.t_u - r.sim_stats.t_u)},
        {"abs_diff_v", std::abs(r.ref_stats.t_v - r.sim_stats.t_v)},
    };
    j["autocorrelation_excluded"] = {
        {"ref_u", r.ref_stats.acf.excluded_u},
        {"ref_v", r.ref_stats.acf.excluded_v},
        {"sim_u", r.sim_stats.acf.excluded_u},
        {"sim_v", r.sim_stats.acf.excluded_v},
    };
    j["separation_mean_km"] = r.separation.mean;
    return j.dump(2) + "\n";
}

std::string separation_csv(const MetricsReport& r) {
    std::ostringstream out;
    out.precision(17);
    out << "step,t_hours,mean,q1,q3,rmse\n";
    for (std::size_t j = 0; j < r.separation.mean.size(); ++j) {
        out << j << ',' << static_cast<double>(j) * r.delta_hours << ',' << r.separation.mean[j] << ','
            << r.separation.q1[j] << ',' << r.separation.q3[j] << ',' << r.rmse[j] << '\n';
    }
    return out.str();
}

std::string autocorrelation_csv(const MetricsReport& r) {
    std::ostringstream out;
    out.precision(17);
    out << "lag,t_hours,ref_u,ref_v,sim_u,sim_v\n";
    for (std::size_t l = 0; l < r.ref_stats.acf.r_u.size(); ++l) {
        out << l << ',' << static_cast<double>(l) * r.delta_hours << ',' << r.ref_stats.acf.r_u[l] << ','
            << r.ref_stats.acf.r_v[l] << ',' << r.sim_stats.acf.r_u[l] << ',' << r.sim_stats.acf.r_v[l] << '\n';
    }
    return out.str();
}

std::string separation_svg(const MetricsReport& r) {
    svg::Series s{"mean (q1-q3 band)", {}, r.separation.mean, r.separation.q1, r.separation.q3};
    for (std::size_t j = 0; j < r.separation.mean.size(); ++j) {
        s.x.push_back(static_cast<double>(j) * r.delta_hours / 24.0);
    }
    return svg::line_chart({s}, {"Separation distance", "time (days)", "separation (km)"});
}

std::string autocorrelation_svg(const MetricsReport& r) {
    std::vector<double> lag;
    for (std::size_t l = 0; l < r.ref_stats.acf.r_u.size(); ++l) {
        lag.push_back(static_cast<double>(l) * r.delta_hours / 24.0);
    }
    return svg::line_chart({{"ref R_u", lag, r.ref_stats.acf.r_u, {}, {}},
                            {"ref R_v", lag, r.ref_stats.acf.r_v, {}, {}},
                            {"sim R_u", lag, r.sim_stats.acf.r_u, {}, {}},
                            {"sim R_v", lag, r.sim_stats.acf.r_v, {}, {}}},
                           {"Velocity autocorrelation", "lag (days)", "R"});
}

void write_metrics_report(const MetricsReport& report, const std::string& dir) {
    const std::filesystem::path p(dir);
    std::filesystem::create_directories(p);
    write_text_file((p / "metrics.json").string(), metrics_json(report));
    write_text_file((p / "separation.csv").string(), separation_csv(report));
    write_text_file((p / "autocorrelation.csv").string(), autocorrelation_csv(report));
    write_text_file((p / "separation.svg").string(), separation_svg(report));
    write_text_file((p / "autocorrelation.svg").string(), autocorrelation_svg(report));
}

} // namespace driftlab
