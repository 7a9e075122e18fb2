#pragma once

#include <functional>
#include <string>
#include <vector>

#include "driftlab/autodiff.hpp"
#include "driftlab/driftnet.hpp"
#include "driftlab/field.hpp"
#include "driftlab/lagrangian.hpp"

namespace driftlab {

struct InversionConfig {
    int n_steps = 200;
    double step_size = 5e-2;
    double l2_weight = 0.0;
    /// Optimize one (ny, nx) anomaly shared by every snapshot.
    bool time_constant = false;

    void validate() const;
};

/// Velocity correction (K+1, ny, nx) in km/h on the base field's grid.
struct AnomalyField {
    GridSpec spec;
    std::vector<double> du;
    std::vector<double> dv;

    static AnomalyField zeros(const GridSpec& spec);
    VelocityField as_field() const;
    VelocityField apply(const VelocityField& base) const;
    double norm() const;
};

struct InversionResult {
    AnomalyField anomaly;
    std::vector<double> loss;      // loss at iterates 0..n_steps
    std::vector<double> best_loss; // best-so-far
    bool diverged = false;
    std::vector<std::string> warnings;
};

/// Differentiable simulator: raw u, v (K+1, ny, nx) on a tape -> positions (K+1, 2).
using GraphSimulator = std::function<ad::Var(const ad::Var& u, const ad::Var& v, Vec2 r0)>;

/// Squared periodic mismatch over steps 1..K in cell units, plus l2_weight times the squared anomaly norm.
ad::Var inversion_loss(const ad::Var& sim, const Trajectory& target, const ad::Var& du, const ad::Var& dv,
                       double l2_weight);

/// Fixed-step gradient descent on the anomaly through any differentiable simulator.
InversionResult invert_with(const GraphSimulator& simulate, const VelocityField& field, const Trajectory& target,
                            const InversionConfig& config);

/// Descent through the frozen network.
InversionResult invert(const DriftNet& net, const VelocityField& field, const Trajectory& target,
                       const InversionConfig& config);

/// Descent through the density propagator with an expected-position readout.
InversionResult invert_through_oracle(const VelocityField& field, const Trajectory& target,
                                      const InversionConfig& config);

/// Graph simulators for the two routes.
GraphSimulator network_simulator(const DriftNet& net);
GraphSimulator oracle_simulator(const GridSpec& spec);

/// Value-level counterparts of the graph simulators.
using Simulator = std::function<Trajectory(const VelocityField& field, Vec2 r0)>;
Simulator network_value_simulator(const DriftNet& net);
Simulator oracle_value_simulator();
Trajectory run_simulator(const GraphSimulator& simulate, const VelocityField& field, Vec2 r0);

struct AnomalyReport {
    AnomalyField anomaly;
    VorticityField anomaly_vorticity;
    VorticityField corrected_vorticity;
    Trajectory target;
    Trajectory baseline;  // simulator on the base field
    Trajectory corrected; // simulator on base + anomaly
    std::vector<double> loss;
    std::vector<double> best_loss;
};

AnomalyReport anomaly_report(const InversionResult& result, const VelocityField& base, const Trajectory& target,
                             const Simulator& simulate);

/// Bundle: anomaly.drft, loss.csv, trajectories.csv, vorticity_{anomaly,corrected}.{csv,svg}, summary.json.
void write_anomaly_report(const AnomalyReport& report, const std::string& dir);

} // namespace driftlab
