#include "driftlab/driftnet.hpp"

#include <cmath>
#include <filesystem>
#include <random>

#include <json.hpp>

#include "driftlab/binary_io.hpp"
#include "driftlab/error.hpp"

namespace driftlab {
namespace {

using ad::Shape;
using ad::Tensor;
using ad::Var;

Tensor uniform_tensor(Shape shape, double bound, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.data) {
        v = dist(rng);
    }
    return t;
}

const Var& param(const ParamVars& pv, const std::string& name) {
    const auto it = pv.find(name);
    if (it == pv.end()) {
        throw ConfigError("missing parameter '" + name + "'");
    }
    return it->second;
}

} // namespace

DriftNet make_driftnet(const GridSpec& spec, const DriftNetConfig& config, double velocity_scale,
                       std::uint64_t seed) {
    spec.validate();
    if (!(velocity_scale > 0.0)) {
        throw ConfigError("DriftNet velocity scale must be positive");
    }
    DriftNet net{config, spec, velocity_scale, {}};
    std::mt19937_64 rng(seed);
    const int a_in = 3;
    const int gates = 4 * config.lstm_hidden;
    auto conv = [&](const std::string& name, int cout, int cin) {
        const double bound = 1.0 / std::sqrt(cin * 9.0);
        net.params.add(name + ".w", uniform_tensor({cout, cin, 3, 3}, bound, rng));
        net.params.add(name + ".b", uniform_tensor({cout}, bound, rng));
    };
    conv("a1", config.hidden_a, a_in);
    conv("a2", config.features, config.hidden_a);
    {
        const double bound = 1.0 / std::sqrt((config.features + config.lstm_hidden) * 9.0);
        net.params.add("lstm.wx", uniform_tensor({gates, config.features, 3, 3}, bound, rng));
        net.params.add("lstm.wh", uniform_tensor({gates, config.lstm_hidden, 3, 3}, bound, rng));
        Tensor b = uniform_tensor({gates}, bound, rng);
        for (int i = config.lstm_hidden; i < 2 * config.lstm_hidden; ++i) {
            b.data[static_cast<std::size_t>(i)] = 1.0;
        }
        net.params.add("lstm.b", std::move(b));
    }
    conv("b1", config.latent, config.lstm_hidden);
    {
        const int feat = 2 * config.latent;
        const double bound = 1.0 / std::sqrt(feat * 3.0);
        net.params.add("head.w", uniform_tensor({2, feat, 3}, bound, rng));
        net.params.add("head.b", uniform_tensor({2}, bound, rng));
    }
    return net;
}

Tensor build_y0(const GridSpec& spec, Vec2 r0, double vmax, double base_radius_km) {
    if (!(vmax > 0.0)) {
        throw ConfigError("build_y0 needs vmax > 0");
    }
    Tensor y0 = Tensor::zeros({spec.k_steps, 1, spec.ny, spec.nx});
    std::vector<double> dist(spec.cells());
    for (int r = 0; r < spec.ny; ++r) {
        for (int c = 0; c < spec.nx; ++c) {
            dist[static_cast<std::size_t>(r) * spec.nx + c] = spec.distance(spec.cell_center(r, c), r0);
        }
    }
    for (int t = 0; t < spec.k_steps; ++t) {
        const double radius = base_radius_km + vmax * t * spec.delta;
        double* slice = y0.data.data() + static_cast<std::size_t>(t) * spec.cells();
        for (std::size_t i = 0; i < spec.cells(); ++i) {
            slice[i] = std::max(0.0, 1.0 - dist[i] / radius);
        }
    }
    return y0;
}

ParamVars bind_params(ad::Tape& tape, const ParamStore& params, bool requires_grad) {
    ParamVars pv;
    for (const auto& [name, t] : params) {
        pv.emplace(name, tape.leaf(t, requires_grad));
    }
    return pv;
}

std::pair<Var, Var> conv_lstm_cell(const Var& x, const Var& h_prev, const Var& c_prev, const ConvLstmWeights& w) {
    const int gates = w.wx.shape().at(0);
    if (gates % 4 != 0 || w.wh.shape().at(0) != gates || w.wh.shape().at(1) * 4 != gates) {
        throw ShapeError("conv_lstm_cell: weights must be (4H, C_in, 3, 3) and (4H, H, 3, 3)");
    }
    const int hidden = gates / 4;
    const int ch_axis = static_cast<int>(x.shape().size()) - 3;
    if (h_prev.valid() && (h_prev.shape().size() != x.shape().size() ||
                           h_prev.shape()[static_cast<std::size_t>(ch_axis)] != hidden)) {
        throw ShapeError("conv_lstm_cell: hidden state shape " + ad::shape_str(h_prev.shape()) +
                         " does not match input " + ad::shape_str(x.shape()));
    }
    Var z = ad::conv2d(x, w.wx, w.b);
    if (h_prev.valid()) {
        z = ad::add(z, ad::conv2d(h_prev, w.wh, Var()));
    }
    const Var i = ad::sigmoid(ad::slice(z, ch_axis, 0, hidden));
    const Var f = ad::sigmoid(ad::slice(z, ch_axis, hidden, 2 * hidden));
    const Var o = ad::sigmoid(ad::slice(z, ch_axis, 2 * hidden, 3 * hidden));
    const Var g = ad::tanh(ad::slice(z, ch_axis, 3 * hidden, 4 * hidden));
    Var c = ad::mul(i, g);
    if (c_prev.valid()) {
        if (c_prev.shape() != c.shape()) {
            throw ShapeError("conv_lstm_cell: cell state shape mismatch");
        }
        c = ad::add(ad::mul(f, c_prev), c);
    }
    const Var h = ad::mul(o, ad::tanh(c));
    return {h, c};
}

Var encode(const DriftNet& net, const ParamVars& pv, const Var& u_norm, const Var& v_norm, const Var& y0) {
    const GridSpec& s = net.spec;
    const int K = s.k_steps;
    const Shape field_shape{K + 1, s.ny, s.nx};
    if (u_norm.shape() != field_shape || v_norm.shape() != field_shape) {
        throw ShapeError("encode: velocities must be " + ad::shape_str(field_shape) + ", got " +
                         ad::shape_str(u_norm.shape()));
    }
    if (y0.shape() != Shape{K, 1, s.ny, s.nx}) {
        throw ShapeError("encode: y0 must be (K, 1, ny, nx), got " + ad::shape_str(y0.shape()));
    }
    const double slope = net.config.leaky_slope;
    auto step_mean = [&](const Var& a) {
        const Var m = ad::scale(ad::add(ad::slice(a, 0, 0, K), ad::slice(a, 0, 1, K + 1)), 0.5);
        return ad::reshape(m, {K, 1, s.ny, s.nx});
    };
    const Var input = ad::concat({step_mean(u_norm), step_mean(v_norm), y0}, 1);
    Var a = ad::leaky_relu(ad::conv2d(input, param(pv, "a1.w"), param(pv, "a1.b")), slope);
    a = ad::leaky_relu(ad::conv2d(a, param(pv, "a2.w"), param(pv, "a2.b")), slope);

    const ConvLstmWeights lw{param(pv, "lstm.wx"), param(pv, "lstm.wh"), param(pv, "lstm.b")};
    Var h, c;
    std::vector<Var> hs;
    hs.reserve(static_cast<std::size_t>(K));
    for (int t = 0; t < K; ++t) {
        std::tie(h, c) = conv_lstm_cell(ad::slice(a, 0, t, t + 1), h, c, lw);
        hs.push_back(h);
    }
    const Var hidden = K == 1 ? hs.front() : ad::concat(hs, 0);
    return ad::leaky_relu(ad::conv2d(hidden, param(pv, "b1.w"), param(pv, "b1.b")), slope);
}

Var decode(const DriftNet& net, const ParamVars& pv, const Var& latent, Vec2 r0) {
    const GridSpec& s = net.spec;
    const int K = s.k_steps;
    const Shape& ls = latent.shape();
    if (ls.size() != 4 || ls[0] != K || ls[2] != s.ny || ls[3] != s.nx) {
        throw ShapeError("decode: latent must be (K, C, ny, nx), got " + ad::shape_str(ls));
    }
    const int C = ls[1];
    ad::Tape& tape = latent.tape();
    const Var prob = ad::spatial_softmax(latent, net.config.temperature);
    const Var frac = ad::soft_argmax(prob, {0.0, 1.0}, {0.0, 1.0});

    // features: periodic displacement of each channel's expected position from r0, in domain fractions
    const Vec2 r0w = s.wrap(r0);
    const double fx = (r0w.x - s.x0) / s.width(), fy = (r0w.y - s.y0) / s.height();
    Tensor origin = Tensor::zeros({K, C, 2});
    for (std::size_t i = 0; i < origin.size(); i += 2) {
        origin.data[i] = fx;
        origin.data[i + 1] = fy;
    }
    const Var rel = ad::wrap_signed(ad::sub(frac, tape.constant(std::move(origin))), {1.0, 1.0});
    const Var features = ad::transpose2d(ad::reshape(rel, {K, 2 * C}));
    const Var out = ad::conv1d_time(features, param(pv, "head.w"), param(pv, "head.b"));

    Tensor extent = Tensor::zeros({K, 2});
    Tensor start = Tensor::zeros({K, 2});
    for (int t = 0; t < K; ++t) {
        extent.data[static_cast<std::size_t>(2 * t)] = s.width();
        extent.data[static_cast<std::size_t>(2 * t + 1)] = s.height();
        start.data[static_cast<std::size_t>(2 * t)] = r0w.x;
        start.data[static_cast<std::size_t>(2 * t + 1)] = r0w.y;
    }
    const Var disp = ad::mul(ad::transpose2d(out), tape.constant(std::move(extent)));
    const Var pos = ad::wrap_into(ad::add(disp, tape.constant(std::move(start))), {s.x0, s.y0},
                                  {s.width(), s.height()});
    return ad::concat({tape.constant(Tensor({1, 2}, {r0.x, r0.y})), pos}, 0);
}

Var forward_graph(const DriftNet& net, const ParamVars& pv, const Var& u, const Var& v, Vec2 r0) {
    ad::Tape& tape = u.tape();
    const double inv = 1.0 / net.velocity_scale;
    const Var y0 =
        tape.constant(build_y0(net.spec, r0, net.velocity_scale, net.config.base_radius_cells * net.spec.h));
    const Var latent = encode(net, pv, ad::scale(u, inv), ad::scale(v, inv), y0);
    return decode(net, pv, latent, r0);
}

Trajectory to_trajectory(const GridSpec& spec, const Tensor& positions) {
    Trajectory t{spec, {}};
    for (std::size_t i = 0; i + 1 < positions.size(); i += 2) {
        t.positions.push_back({positions.data[i], positions.data[i + 1]});
    }
    return t;
}

Trajectory forward(const DriftNet& net, const VelocityField& field, Vec2 r0) {
    if (!(field.spec() == net.spec)) {
        throw ShapeError("forward: field grid differs from the model grid");
    }
    ad::Tape tape;
    const ParamVars pv = bind_params(tape, net.params, false);
    const Shape shape{net.spec.snapshots(), net.spec.ny, net.spec.nx};
    const Var u = tape.constant(Tensor(shape, field.u()));
    const Var v = tape.constant(Tensor(shape, field.v()));
    return to_trajectory(net.spec, forward_graph(net, pv, u, v, r0).value());
}

void save_checkpoint(const DriftNet& net, const std::string& dir) {
    std::filesystem::create_directories(dir);
    write_params(net.params, (std::filesystem::path(dir) / "params.dprm").string());
    nlohmann::ordered_json j;
    j["grid"] = {{"nx", net.spec.nx}, {"ny", net.spec.ny}, {"h", net.spec.h},   {"delta", net.spec.delta},
                 {"k_steps", net.spec.k_steps}, {"x0", net.spec.x0}, {"y0", net.spec.y0}};
    j["velocity_scale"] = net.velocity_scale;
    j["temperature"] = net.config.temperature;
    j["k_steps"] = net.spec.k_steps;
    j["channels"] = {{"hidden_a", net.config.hidden_a},
                     {"features", net.config.features},
                     {"lstm_hidden", net.config.lstm_hidden},
                     {"latent", net.config.latent}};
    j["leaky_slope"] = net.config.leaky_slope;
    j["base_radius_cells"] = net.config.base_radius_cells;
    j["parameter_count"] = net.params.count();
    write_text_file((std::filesystem::path(dir) / "model.json").string(), j.dump(2) + "\n");
}

DriftNet load_checkpoint(const std::string& dir) {
    const auto path = std::filesystem::path(dir);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text_file((path / "model.json").string()));
        DriftNet net;
        const auto& g = j.at("grid");
        net.spec = GridSpec{g.at("nx").get<int>(),    g.at("ny").get<int>(),      g.at("h").get<double>(),
                            g.at("delta").get<double>(), g.at("k_steps").get<int>(), g.at("x0").get<double>(),
                            g.at("y0").get<double>()};
        net.velocity_scale = j.at("velocity_scale").get<double>();
        net.config.temperature = j.at("temperature").get<double>();
        const auto& ch = j.at("channels");
        net.config.hidden_a = ch.at("hidden_a").get<int>();
        net.config.features = ch.at("features").get<int>();
        net.config.lstm_hidden = ch.at("lstm_hidden").get<int>();
        net.config.latent = ch.at("latent").get<int>();
        net.config.leaky_slope = j.at("leaky_slope").get<double>();
        net.config.base_radius_cells = j.at("base_radius_cells").get<double>();
        net.params = read_params((path / "params.dprm").string());
        return net;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("malformed checkpoint " + (path / "model.json").string() + ": " + e.what());
    }
}

} // namespace driftlab
