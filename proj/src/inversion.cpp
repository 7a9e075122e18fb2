#include "driftlab/inversion.hpp"

#include <cmath>
#include <filesystem>
#include <sstream>

#include <json.hpp>

#include "driftlab/binary_io.hpp"
#include "driftlab/error.hpp"
#include "driftlab/fokkerplanck.hpp"
#include "driftlab/svg.hpp"

namespace driftlab {
namespace {

ad::Tensor positions_tensor(const Trajectory& t) {
    ad::Tensor out = ad::Tensor::zeros({static_cast<int>(t.positions.size()), 2});
    for (std::size_t i = 0; i < t.positions.size(); ++i) {
        out.data[2 * i] = t.positions[i].x;
        out.data[2 * i + 1] = t.positions[i].y;
    }
    return out;
}

std::vector<double> first_plane(const VorticityField& z) {
    const auto n = static_cast<long>(z.spec.nx) * z.spec.ny;
    return {z.zeta.begin(), z.zeta.begin() + n};
}

svg::Polyline track_overlay(const Trajectory& t, const std::string& label, const std::string& color) {
    svg::Polyline line{label, {}, {}, color};
    // unwrap so seam crossings draw as continuous paths
    Vec2 p = t.positions.front();
    for (std::size_t i = 0; i < t.positions.size(); ++i) {
        if (i > 0) {
            p = p + t.spec.displacement(t.positions[i - 1], t.positions[i]);
        }
        line.col.push_back((p.x - t.spec.x0) / t.spec.h);
        line.row.push_back((p.y - t.spec.y0) / t.spec.h);
    }
    return line;
}

} // namespace

void InversionConfig::validate() const {
    if (n_steps < 1) {
        throw ConfigError("inversion n_steps must be >= 1");
    }
    if (!(step_size > 0.0)) {
        throw ConfigError("inversion step_size must be > 0");
    }
    if (!(l2_weight >= 0.0)) {
        throw ConfigError("inversion l2_weight must be >= 0");
    }
}

AnomalyField AnomalyField::zeros(const GridSpec& spec) {
    const std::size_t n = static_cast<std::size_t>(spec.snapshots()) * static_cast<std::size_t>(spec.cells());
    return {spec, std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
}

VelocityField AnomalyField::as_field() const { return VelocityField::from_arrays(spec, du, dv); }

VelocityField AnomalyField::apply(const VelocityField& base) const {
    if (!(base.spec() == spec)) {
        throw ShapeError("anomaly grid does not match the base field");
    }
    return add_fields(base, as_field());
}

double AnomalyField::norm() const {
    double s = 0.0;
    for (std::size_t i = 0; i < du.size(); ++i) {
        s += du[i] * du[i] + dv[i] * dv[i];
    }
    return std::sqrt(s);
}

ad::Var inversion_loss(const ad::Var& sim, const Trajectory& target, const ad::Var& du, const ad::Var& dv,
                       double l2_weight) {
    const int n = static_cast<int>(target.positions.size());
    if (sim.shape() != ad::Shape{n, 2}) {
        throw ShapeError("inversion_loss: simulated positions " + ad::shape_str(sim.shape()) +
                         " do not match the target length");
    }
    const GridSpec& spec = target.spec;
    const ad::Var r = sim.tape().constant(positions_tensor(target));
    const ad::Var d = ad::wrap_signed(ad::sub(ad::slice(sim, 0, 1, n), ad::slice(r, 0, 1, n)),
                                      {spec.width(), spec.height()});
    ad::Var loss = ad::scale(ad::sum_squares(d), 1.0 / (spec.h * spec.h));
    if (l2_weight > 0.0) {
        loss = ad::add(loss, ad::scale(ad::add(ad::sum_squares(du), ad::sum_squares(dv)), l2_weight));
    }
    return loss;
}

InversionResult invert_with(const GraphSimulator& simulate, const VelocityField& field, const Trajectory& target,
                            const InversionConfig& config) {
    config.validate();
    const GridSpec& spec = field.spec();
    if (!(target.spec == spec) || target.steps() != spec.k_steps) {
        throw ShapeError("inversion target does not match the field grid");
    }
    const Vec2 r0 = target.positions.front();
    if (!(spec.wrap(r0) == r0)) {
        throw RangeError("inversion target must start inside the domain");
    }
    const int snaps = spec.snapshots();
    const ad::Shape full{snaps, spec.ny, spec.nx};
    const ad::Shape param_shape = config.time_constant ? ad::Shape{spec.ny, spec.nx} : full;
    ad::Tensor du = ad::Tensor::zeros(param_shape), dv = ad::Tensor::zeros(param_shape);

    InversionResult result;
    double initial = 0.0, best = std::numeric_limits<double>::infinity();
    int above = 0;
    for (int step = 0; step <= config.n_steps; ++step) {
        ad::Tape tape;
        const ad::Var pdu = tape.leaf(du, true);
        const ad::Var pdv = tape.leaf(dv, true);
        const ad::Var edu = config.time_constant ? ad::broadcast_leading(pdu, snaps) : pdu;
        const ad::Var edv = config.time_constant ? ad::broadcast_leading(pdv, snaps) : pdv;
        const ad::Var u = ad::add(tape.constant(ad::Tensor(full, field.u())), edu);
        const ad::Var v = ad::add(tape.constant(ad::Tensor(full, field.v())), edv);
        const ad::Var sim = simulate(u, v, r0);
        const ad::Var loss = inversion_loss(sim, target, pdu, pdv, config.l2_weight);
        const double value = loss.value().data[0];
        if (!std::isfinite(value)) {
            throw NumericalError("inversion: non-finite loss at step " + std::to_string(step));
        }
        if (step == 0) {
            initial = value;
        }
        best = std::min(best, value);
        result.loss.push_back(value);
        result.best_loss.push_back(best);
        above = value > 10.0 * initial ? above + 1 : 0;
        if (above == 20 && !result.diverged) {
            result.diverged = true;
            result.warnings.push_back("inversion diverging: loss above 10x its initial value for 20 steps (step " +
                                      std::to_string(step) + ")");
        }
        if (step == config.n_steps) {
            break;
        }
        const ad::Gradients g = tape.backward(loss);
        const ad::Tensor& gu = g.of(pdu);
        const ad::Tensor& gv = g.of(pdv);
        for (std::size_t i = 0; i < du.data.size(); ++i) {
            du.data[i] -= config.step_size * gu.data[i];
            dv.data[i] -= config.step_size * gv.data[i];
        }
    }

    result.anomaly = AnomalyField::zeros(spec);
    const std::size_t plane = static_cast<std::size_t>(spec.cells());
    for (int k = 0; k < snaps; ++k) {
        for (std::size_t i = 0; i < plane; ++i) {
            const std::size_t src = config.time_constant ? i : k * plane + i;
            result.anomaly.du[k * plane + i] = du.data[src];
            result.anomaly.dv[k * plane + i] = dv.data[src];
        }
    }
    return result;
}

GraphSimulator network_simulator(const DriftNet& net) {
    return [&net](const ad::Var& u, const ad::Var& v, Vec2 r0) {
        const ParamVars pv = bind_params(u.tape(), net.params, false);
        return forward_graph(net, pv, u, v, r0);
    };
}

GraphSimulator oracle_simulator(const GridSpec& spec) {
    return [spec](const ad::Var& u, const ad::Var& v, Vec2 r0) {
        const DensityGrid p0 = init_density(spec, r0, 0.0);
        const ad::Var p = u.tape().constant(ad::Tensor({spec.ny, spec.nx}, p0.p));
        const ad::Var density = propagate_density_op(spec, u, v, p);
        return ad::soft_argmax(density, x_axis_of(spec), y_axis_of(spec));
    };
}

InversionResult invert(const DriftNet& net, const VelocityField& field, const Trajectory& target,
                       const InversionConfig& config) {
    if (!(net.spec == field.spec())) {
        throw ShapeError("invert: network grid does not match the field");
    }
    return invert_with(network_simulator(net), field, target, config);
}

InversionResult invert_through_oracle(const VelocityField& field, const Trajectory& target,
                                      const InversionConfig& config) {
    return invert_with(oracle_simulator(field.spec()), field, target, config);
}

Trajectory run_simulator(const GraphSimulator& simulate, const VelocityField& field, Vec2 r0) {
    ad::Tape tape;
    const GridSpec& spec = field.spec();
    const ad::Shape full{spec.snapshots(), spec.ny, spec.nx};
    const ad::Var sim = simulate(tape.constant(ad::Tensor(full, field.u())), tape.constant(ad::Tensor(full, field.v())), r0);
    return to_trajectory(spec, sim.value());
}

Simulator network_value_simulator(const DriftNet& net) {
    return [&net](const VelocityField& field, Vec2 r0) { return forward(net, field, r0); };
}

Simulator oracle_value_simulator() {
    return [](const VelocityField& field, Vec2 r0) {
        const DensityGrid d = propagate_density(field, init_density(field.spec(), r0, 0.0));
        return Trajectory{field.spec(), expected_track(d)};
    };
}

AnomalyReport anomaly_report(const InversionResult& result, const VelocityField& base, const Trajectory& target,
                             const Simulator& simulate) {
    AnomalyReport r;
    r.anomaly = result.anomaly;
    const VelocityField corrected = result.anomaly.apply(base);
    r.anomaly_vorticity = vorticity(result.anomaly.as_field());
    r.corrected_vorticity = vorticity(corrected);
    r.target = target;
    r.baseline = simulate(base, target.positions.front());
    r.corrected = simulate(corrected, target.positions.front());
    r.loss = result.loss;
    r.best_loss = result.best_loss;
    return r;
}

void write_anomaly_report(const AnomalyReport& report, const std::string& dir) {
    const std::filesystem::path p(dir);
    std::filesystem::create_directories(p);
    const GridSpec& spec = report.anomaly.spec;
    write_field(report.anomaly.as_field(), (p / "anomaly.drft").string());

    std::ostringstream loss;
    loss.precision(17);
    loss << "step,loss,best_loss\n";
    for (std::size_t i = 0; i < report.loss.size(); ++i) {
        loss << i << ',' << report.loss[i] << ',' << report.best_loss[i] << '\n';
    }
    write_text_file((p / "loss.csv").string(), loss.str());

    Ensemble tracks;
    for (const Trajectory* t : {&report.target, &report.baseline, &report.corrected}) {
        tracks.seeds.push_back(t->positions.front());
        tracks.trajectories.push_back(*t);
    }
    write_text_file((p / "trajectories.csv").string(), ensemble_csv(tracks));

    const std::vector<svg::Polyline> overlays{track_overlay(report.target, "target", "#000000"),
                                              track_overlay(report.baseline, "baseline", "#808080"),
                                              track_overlay(report.corrected, "corrected", "#2ca02c")};
    write_text_file((p / "vorticity_anomaly.csv").string(), vorticity_csv(report.anomaly_vorticity, 0));
    write_text_file((p / "vorticity_corrected.csv").string(), vorticity_csv(report.corrected_vorticity, 0));
    write_text_file((p / "vorticity_anomaly.svg").string(),
                    svg::heatmap(first_plane(report.anomaly_vorticity), spec.nx, spec.ny, "Anomaly vorticity at t0", overlays));
    write_text_file((p / "vorticity_corrected.svg").string(),
                    svg::heatmap(first_plane(report.corrected_vorticity), spec.nx, spec.ny, "Corrected-field vorticity at t0",
                                 overlays));

    nlohmann::ordered_json j;
    j["steps"] = report.loss.empty() ? 0 : report.loss.size() - 1;
    j["initial_loss"] = report.loss.empty() ? 0.0 : report.loss.front();
    j["final_loss"] = report.loss.empty() ? 0.0 : report.loss.back();
    j["anomaly_norm"] = report.anomaly.norm();
    j["baseline_final_separation_km"] = spec.distance(report.baseline.positions.back(), report.target.positions.back());
    j["corrected_final_separation_km"] =
        spec.distance(report.corrected.positions.back(), report.target.positions.back());
    write_text_file((p / "summary.json").string(), j.dump(2) + "\n");
}

} // namespace driftlab
