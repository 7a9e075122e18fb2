#pragma once

#include <string>
#include <vector>

#include "driftlab/lagrangian.hpp"

namespace driftlab {

struct SeparationCurve {
    std::vector<double> mean; // km, steps 0..K
    std::vector<double> q1;
    std::vector<double> q3;
};

/// Per-step periodic distances between paired members; quartiles by linear interpolation between order statistics.
SeparationCurve separation_curve(const Ensemble& ref, const Ensemble& sim);

/// Quantile q in [0, 1] with linear interpolation between order statistics.
double quantile(std::vector<double> values, double q);

/// Root mean squared separation at one step.
double rmse_positions(const Ensemble& ref, const Ensemble& sim, int step);
/// Root mean squared separation over all steps 0..K.
double rmse_positions(const Ensemble& ref, const Ensemble& sim);

struct Autocorrelation {
    std::vector<double> r_u; // lags 0..max_lag
    std::vector<double> r_v;
    int included_u = 0;
    int included_v = 0;
    int excluded_u = 0; // zero-variance members
    int excluded_v = 0;
};

/// Velocities from periodic-aware position differences, mean removed per trajectory;
/// biased autocorrelation normalized per trajectory and averaged over included members.
Autocorrelation velocity_autocorrelation(const Ensemble& ensemble, int max_lag);

/// Trapezoidal integral of R from lag 0 to its first zero crossing (linear interpolation), in days.
double lagrangian_timescale(const std::vector<double>& r, double delta_hours);

struct LagrangianStats {
    Autocorrelation acf;
    double t_u = 0.0; // days
    double t_v = 0.0;
};
LagrangianStats lagrangian_stats(const Ensemble& ensemble, int max_lag);

struct MetricsReport {
    SeparationCurve separation;
    std::vector<double> rmse; // per step
    double rmse_all = 0.0;
    double liu = 0.0;
    double final_separation = 0.0;
    double persistence_final_separation = 0.0;
    LagrangianStats ref_stats;
    LagrangianStats sim_stats;
    double delta_hours = 0.0;
    int n_traj = 0;
};

MetricsReport evaluate_ensembles(const Ensemble& ref, const Ensemble& sim);

std::string metrics_json(const MetricsReport& report);
/// `step,t_hours,mean,q1,q3,rmse`
std::string separation_csv(const MetricsReport& report);
/// `lag,t_hours,ref_u,ref_v,sim_u,sim_v`
std::string autocorrelation_csv(const MetricsReport& report);
std::string separation_svg(const MetricsReport& report);
std::string autocorrelation_svg(const MetricsReport& report);

/// Writes metrics.json, separation.csv, autocorrelation.csv and the two SVG plots into dir.
void write_metrics_report(const MetricsReport& report, const std::string& dir);

} // namespace driftlab
