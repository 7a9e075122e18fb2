#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "driftlab/autodiff.hpp"
#include "driftlab/field.hpp"
#include "driftlab/lagrangian.hpp"
#include "driftlab/params.hpp"

namespace driftlab {

/// Channel plan and readout settings. Defaults follow 2(+1) -> 11 -> 16, ConvLSTM 16, 16 -> 8, head 16 -> 2.
struct DriftNetConfig {
    int hidden_a = 11;
    int features = 16;
    int lstm_hidden = 16;
    int latent = 8;
    double leaky_slope = 0.1;
    double temperature = 1.0;
    /// Base radius L0 of the initial-position cone, in cells.
    double base_radius_cells = 2.0;
};

/**
 * A DriftNet instance: parameters plus everything needed to replay a forward.
 *
 * velocity_scale is the training-set vmax; inputs are divided by it and the
 * initial-position cone widens at that speed.
 */
struct DriftNet {
    DriftNetConfig config;
    GridSpec spec;
    double velocity_scale = 1.0;
    ParamStore params;
};

/// Uniform +-1/sqrt(fan_in) initialization with forget-gate bias +1.
DriftNet make_driftnet(const GridSpec& spec, const DriftNetConfig& config, double velocity_scale, std::uint64_t seed);

/// (K, 1, ny, nx): y0[t](x) = max(0, 1 - d(x, r0) / (L0 + vmax t delta)) with periodic distance d.
ad::Tensor build_y0(const GridSpec& spec, Vec2 r0, double vmax, double base_radius_km);

/// Parameters bound to a tape as leaves.
using ParamVars = std::map<std::string, ad::Var>;
ParamVars bind_params(ad::Tape& tape, const ParamStore& params, bool requires_grad);

struct ConvLstmWeights {
    ad::Var wx; // (4H, C_in, 3, 3)
    ad::Var wh; // (4H, H, 3, 3)
    ad::Var b;  // (4H), gate order i, f, o, g
};

/// One ConvLSTM step; invalid h_prev/c_prev mean a zero state. Returns (h, c).
std::pair<ad::Var, ad::Var> conv_lstm_cell(const ad::Var& x, const ad::Var& h_prev, const ad::Var& c_prev,
                                           const ConvLstmWeights& w);

/// Eulerian encoder: normalized u, v (K+1, ny, nx) and y0 (K, 1, ny, nx) -> latent (K, C, ny, nx).
ad::Var encode(const DriftNet& net, const ParamVars& pv, const ad::Var& u_norm, const ad::Var& v_norm,
               const ad::Var& y0);

/// Readout: latent (K, C, ny, nx) -> positions (K+1, 2) starting with r0.
ad::Var decode(const DriftNet& net, const ParamVars& pv, const ad::Var& latent, Vec2 r0);

/// End-to-end differentiable forward from raw km/h velocities.
ad::Var forward_graph(const DriftNet& net, const ParamVars& pv, const ad::Var& u, const ad::Var& v, Vec2 r0);

/// Value-level forward.
Trajectory forward(const DriftNet& net, const VelocityField& field, Vec2 r0);

/// Positions tensor (K+1, 2) to a Trajectory on `spec`.
Trajectory to_trajectory(const GridSpec& spec, const ad::Tensor& positions);

/// Checkpoint directory: params.dprm plus model.json (grid, scale, temperature, K, channel plan).
void save_checkpoint(const DriftNet& net, const std::string& dir);
DriftNet load_checkpoint(const std::string& dir);

} // namespace driftlab
