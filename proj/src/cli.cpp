#include "driftlab/cli.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "driftlab/binary_io.hpp"
#include "driftlab/driftnet.hpp"
#include "driftlab/error.hpp"
#include "driftlab/inversion.hpp"
#include "driftlab/lagrangian.hpp"
#include "driftlab/metrics.hpp"
#include "driftlab/parallel.hpp"
#include "driftlab/selftest.hpp"
#include "driftlab/svg.hpp"
#include "driftlab/training.hpp"
#include "driftlab/version.hpp"

namespace driftlab::cli {
namespace fs = std::filesystem;

namespace {

constexpr double kPi = 3.14159265358979323846;

struct Flags {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    std::string out;
    std::vector<std::string> sets;
    // per-command shortcuts, mapped onto config keys
    std::string flow, field, dataset, checkpoint, target, reference, simulation, split, route;
    std::optional<int> n_traj, epochs, traj_id;
};

Vec2 vec2_of(const Json& j, const char* what) {
    if (!j.is_array() || j.size() != 2) {
        throw ConfigError(std::string(what) + " must be a two-element array [x, y]");
    }
    return {j[0].get<double>(), j[1].get<double>()};
}

std::string absolute_or_empty(const std::string& path) {
    return path.empty() ? path : fs::absolute(path).lexically_normal().string();
}

void set_path(Json& config, std::initializer_list<const char*> keys, const std::string& value) {
    if (value.empty()) {
        return;
    }
    Json* node = &config;
    for (const char* k : keys) {
        node = &(*node)[k];
    }
    *node = value;
}

void absolutize(Json& node, const char* key) {
    if (node.contains(key) && node[key].is_string()) {
        node[key] = absolute_or_empty(node[key].get<std::string>());
    }
}

std::uint64_t seed_of(const Json& config) { return config.at("seed").get<std::uint64_t>(); }

void write_snapshot(const Json& config, const std::string& command, const fs::path& out) {
    Json snap = config;
    snap["command"] = command;
    snap["version"] = kVersion;
    fs::create_directories(out);
    write_text_file((out / "config.json").string(), snap.dump(2) + "\n");
}

Ensemble seeds_ensemble(const Trajectory& t) { return Ensemble{{t.positions.front()}, {t}}; }

// ---- commands ----

void cmd_gen_field(const Json& config, const fs::path& out, std::ostream& log) {
    const VelocityField field = field_from_config(config);
    write_field(field, (out / "field.drft").string());
    const VorticityField zeta = vorticity(field);
    write_text_file((out / "vorticity.csv").string(), vorticity_csv(zeta));
    const GridSpec& s = field.spec();
    write_text_file((out / "vorticity_t0.svg").string(),
                    svg::heatmap({zeta.zeta.begin(), zeta.zeta.begin() + static_cast<long>(s.cells())}, s.nx, s.ny,
                                 "Vorticity at t0"));
    Json summary;
    summary["vmax_km_per_h"] = field.vmax();
    summary["snapshots"] = s.snapshots();
    write_text_file((out / "field.json").string(), summary.dump(2) + "\n");
    log << "field: " << s.nx << "x" << s.ny << ", " << s.snapshots() << " snapshots, vmax " << field.vmax()
        << " km/h\n";
}

void cmd_simulate(const Json& config, const fs::path& out, std::ostream& log) {
    const VelocityField field = field_from_config(config);
    const Json& sim = config.at("simulate");
    const int n = sim.at("n_traj").get<int>();
    if (n < 1) {
        throw ConfigError("simulate.n_traj must be >= 1");
    }
    const std::string seeding = sim.at("seeding").get<std::string>();
    std::vector<Vec2> seeds;
    if (seeding == "uniform") {
        seeds = uniform_seeds(field.spec(), n, seed_of(config));
    } else if (seeding == "cluster") {
        const Vec2 c = vec2_of(sim.at("center"), "simulate.center");
        seeds = perturb_seeds(std::vector<Vec2>{c}, sim.at("radius_km").get<double>(), n, seed_of(config));
    } else if (seeding == "points") {
        for (const auto& p : sim.at("points")) {
            seeds.push_back(vec2_of(p, "simulate.points[]"));
        }
    } else {
        throw ConfigError("simulate.seeding must be uniform, cluster or points (got '" + seeding + "')");
    }
    const Integrator integrator = parse_integrator(sim.at("integrator").get<std::string>());
    const Ensemble e = advect_ensemble(field, seeds, integrator, sim.at("substeps").get<int>());
    write_ensemble(e, (out / "trajectories.dtrj").string());
    write_text_file((out / "trajectories.csv").string(), ensemble_csv(e));
    log << "simulated " << e.size() << " trajectories with " << to_string(integrator) << "\n";
}

void cmd_gen_dataset(const Json& config, const fs::path& out, std::ostream& log) {
    const VelocityField field = field_from_config(config);
    const Json& d = config.at("dataset");
    const DriftDataset ds =
        generate_dataset(field, d.at("n_traj").get<int>(), seed_of(config), d.at("substeps").get<int>());
    save_dataset(ds, (out / "dataset").string());
    const SplitSizes s = split_sizes(ds.size());
    log << "dataset: " << ds.size() << " trajectories (" << s.train << "/" << s.val << "/" << s.test << ")\n";
}

TrainConfig train_config_of(const Json& config) {
    const Json& t = config.at("train");
    TrainConfig tc;
    tc.alpha = t.at("alpha").get<double>();
    tc.beta = t.at("beta").get<double>();
    tc.learning_rate = t.at("learning_rate").get<double>();
    tc.epochs = t.at("epochs").get<int>();
    tc.batch_size = t.at("batch_size").get<int>();
    tc.adam_beta1 = t.at("adam_beta1").get<double>();
    tc.adam_beta2 = t.at("adam_beta2").get<double>();
    tc.adam_eps = t.at("adam_eps").get<double>();
    tc.seed = seed_of(config);
    return tc;
}

DriftNetConfig model_config_of(const Json& config) {
    const Json& m = config.at("model");
    DriftNetConfig mc;
    mc.hidden_a = m.at("hidden_a").get<int>();
    mc.features = m.at("features").get<int>();
    mc.lstm_hidden = m.at("lstm_hidden").get<int>();
    mc.latent = m.at("latent").get<int>();
    mc.leaky_slope = m.at("leaky_slope").get<double>();
    mc.temperature = m.at("temperature").get<double>();
    mc.base_radius_cells = m.at("base_radius_cells").get<double>();
    return mc;
}

DriftDataset dataset_from_config(const Json& config) {
    const std::string path = config.at("dataset").at("path").get<std::string>();
    if (!path.empty()) {
        return load_dataset(path);
    }
    const Json& d = config.at("dataset");
    return generate_dataset(field_from_config(config), d.at("n_traj").get<int>(), seed_of(config),
                            d.at("substeps").get<int>());
}

void cmd_train(const Json& config, const fs::path& out, std::ostream& log) {
    const DriftDataset ds = dataset_from_config(config);
    const TrainConfig tc = train_config_of(config);
    const TrainResult r = train(ds, tc, model_config_of(config), [&](const EpochLog& e) {
        log << "epoch " << e.epoch << " train " << e.train_loss << " val " << e.val_loss << " liu " << e.liu << "\n";
        log.flush();
    });
    save_checkpoint(r.model, (out / "checkpoint").string());
    write_text_file((out / "training_log.csv").string(), training_log_csv(r.log));

    std::vector<Trajectory> refs;
    for (std::size_t i : ds.indices(Split::test)) {
        refs.push_back(ds.refs[i]);
    }
    Json summary;
    summary["parameter_count"] = r.model.params.count();
    summary["best_val_loss"] = r.log.back().best_val_loss;
    if (!refs.empty()) {
        const std::vector<Trajectory> sims = predict(r.model, ds.field, refs);
        summary["test_mse"] = loss_mse(refs, sims);
        summary["test_liu"] = loss_liu(refs, sims);
    }
    write_text_file((out / "train_summary.json").string(), summary.dump(2) + "\n");
}

void cmd_evaluate(const Json& config, const fs::path& out, std::ostream& log) {
    const Json& ev = config.at("evaluate");
    Ensemble ref, sim;
    const std::string reference = ev.at("reference").get<std::string>();
    if (!reference.empty()) {
        ref = read_ensemble(reference);
        const std::string simulation = ev.at("simulation").get<std::string>();
        sim = simulation.empty() ? ref : read_ensemble(simulation);
    } else {
        const std::string checkpoint = ev.at("checkpoint").get<std::string>();
        if (checkpoint.empty()) {
            throw ConfigError("evaluate needs either evaluate.reference or evaluate.checkpoint");
        }
        const DriftNet net = load_checkpoint(checkpoint);
        const DriftDataset ds = dataset_from_config(config);
        const std::string split = ev.at("split").get<std::string>();
        const Split s = split == "train" ? Split::train : split == "val" ? Split::val : Split::test;
        if (split != "train" && split != "val" && split != "test") {
            throw ConfigError("evaluate.split must be train, val or test");
        }
        ref = ds.ensemble(s);
        sim.seeds = ref.seeds;
        sim.trajectories = predict(net, ds.field, ref.trajectories);
        write_ensemble(sim, (out / "predictions.dtrj").string());
    }
    const MetricsReport report = evaluate_ensembles(ref, sim);
    write_metrics_report(report, out.string());
    log << "final separation " << report.final_separation << " km (persistence "
        << report.persistence_final_separation << "), Liu " << report.liu << "\n";
}

void cmd_invert(const Json& config, const fs::path& out, std::ostream& log) {
    const VelocityField base = field_from_config(config);
    const GridSpec& spec = base.spec();
    const Json& inv = config.at("invert");
    InversionConfig ic;
    ic.n_steps = inv.at("n_steps").get<int>();
    ic.step_size = inv.at("step_size").get<double>();
    ic.l2_weight = inv.at("l2_weight").get<double>();
    ic.time_constant = inv.at("time_constant").get<bool>();

    Trajectory target;
    const std::string target_path = inv.at("target").get<std::string>();
    if (!target_path.empty()) {
        const Ensemble e = read_ensemble(target_path);
        const int id = inv.at("traj_id").get<int>();
        if (id < 0 || id >= static_cast<int>(e.size())) {
            throw ConfigError("invert.traj_id " + std::to_string(id) + " outside the target ensemble");
        }
        target = e.trajectories[static_cast<std::size_t>(id)];
    } else {
        // synthetic target: oracle trajectory under base + one Gaussian eddy
        const Json& syn = inv.at("synthetic");
        Eddy eddy;
        eddy.center = vec2_of(syn.at("center"), "invert.synthetic.center");
        eddy.radius = syn.at("radius_km").get<double>();
        eddy.gamma = syn.at("peak_speed").get<double>() * eddy.radius * std::exp(0.5);
        const VelocityField injected = make_eddy_field(spec, {eddy});
        write_field(injected, (out / "true_anomaly.drft").string());
        target = advect_rk4(add_fields(base, injected), vec2_of(syn.at("r0"), "invert.synthetic.r0"));
    }
    write_ensemble(seeds_ensemble(target), (out / "target.dtrj").string());

    const std::string route = inv.at("route").get<std::string>();
    InversionResult result;
    AnomalyReport report;
    std::optional<DriftNet> net;
    if (route == "oracle") {
        result = invert_through_oracle(base, target, ic);
        report = anomaly_report(result, base, target, oracle_value_simulator());
    } else if (route == "network") {
        const std::string checkpoint = inv.at("checkpoint").get<std::string>();
        if (checkpoint.empty()) {
            throw ConfigError("invert.route=network needs invert.checkpoint");
        }
        net = load_checkpoint(checkpoint);
        result = invert(*net, base, target, ic);
        report = anomaly_report(result, base, target, network_value_simulator(*net));
    } else {
        throw ConfigError("invert.route must be oracle or network (got '" + route + "')");
    }
    write_anomaly_report(report, out.string());
    for (const auto& w : result.warnings) {
        log << "warning: " << w << "\n";
    }
    log << "inversion loss " << result.loss.front() << " -> " << result.loss.back() << "\n";
}

int cmd_selftest(const fs::path& out, std::ostream& log) {
    const std::vector<CheckResult> checks = run_selftest();
    Json j = Json::array();
    int failed = 0;
    for (const auto& c : checks) {
        log << (c.passed ? "PASS " : "FAIL ") << c.name << (c.detail.empty() ? "" : ": " + c.detail) << "\n";
        j.push_back({{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
        failed += c.passed ? 0 : 1;
    }
    write_text_file((out / "selftest.json").string(), j.dump(2) + "\n");
    log << checks.size() - failed << "/" << checks.size() << " checks passed\n";
    return failed == 0 ? kOk : kFailure;
}

const char* kind_of(const std::exception& e) {
    if (dynamic_cast<const IoError*>(&e)) {
        return "missing_file";
    }
    if (dynamic_cast<const ConfigError*>(&e)) {
        return "config";
    }
    if (dynamic_cast<const NumericalError*>(&e)) {
        return "numerical";
    }
    if (dynamic_cast<const FormatError*>(&e)) {
        return "format";
    }
    if (dynamic_cast<const DegenerateError*>(&e)) {
        return "degenerate";
    }
    return "error";
}

int code_of(const std::exception& e) {
    if (dynamic_cast<const IoError*>(&e)) {
        return kMissingFile;
    }
    if (dynamic_cast<const ConfigError*>(&e)) {
        return kBadConfig;
    }
    if (dynamic_cast<const NumericalError*>(&e)) {
        return kNumerical;
    }
    return kFailure;
}

void report_error(std::ostream& err, const std::string& command, const char* kind, const std::string& message,
                  int code) {
    Json line;
    line["error"] = kind;
    line["command"] = command;
    line["exit_code"] = code;
    line["message"] = message;
    err << line.dump() << "\n";
}

} // namespace

Json default_config() {
    return Json::parse(R"({
  "seed": 0,
  "out": "driftlab_out",
  "field_path": "",
  "grid": {"nx": 32, "ny": 32, "h": 10.0, "delta": 6.0, "k_steps": 36, "x0": 0.0, "y0": 0.0},
  "flow": {
    "family": "double_gyre",
    "amplitude": 0.5, "eps": 0.25, "period_hours": 48.0,
    "omega": 0.01, "center": null,
    "n_eddies": 8, "peak_speed": 1.0,
    "u": 1.0, "v": 0.0
  },
  "simulate": {"n_traj": 100, "seeding": "uniform", "center": null, "radius_km": 0.0, "points": [],
               "integrator": "rk4", "substeps": 6},
  "dataset": {"n_traj": 1000, "substeps": 6, "path": ""},
  "model": {"hidden_a": 11, "features": 16, "lstm_hidden": 16, "latent": 8, "leaky_slope": 0.1,
            "temperature": 1.0, "base_radius_cells": 2.0},
  "train": {"alpha": 0.2, "beta": 0.8, "learning_rate": 0.005, "epochs": 100, "batch_size": 32,
            "adam_beta1": 0.9, "adam_beta2": 0.999, "adam_eps": 1e-8},
  "evaluate": {"checkpoint": "", "split": "test", "reference": "", "simulation": ""},
  "invert": {"route": "oracle", "checkpoint": "", "target": "", "traj_id": 0,
             "n_steps": 200, "step_size": 0.05, "l2_weight": 0.0, "time_constant": false,
             "synthetic": {"center": null, "radius_km": 30.0, "peak_speed": 0.5, "r0": null}}
})");
}

void apply_override(Json& config, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ConfigError("override '" + assignment + "' is not of the form key.path=value");
    }
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    Json value;
    try {
        value = Json::parse(text);
    } catch (const nlohmann::json::exception&) {
        value = text;
    }
    Json* node = &config;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty()) {
            throw ConfigError("override '" + assignment + "' has an empty key segment");
        }
        if (!node->is_object()) {
            throw ConfigError("override '" + assignment + "' descends into a non-object");
        }
        node = &(*node)[part];
        if (dot == std::string::npos) {
            break;
        }
        start = dot + 1;
    }
    *node = value;
}

GridSpec grid_from_config(const Json& config) {
    const Json& g = config.at("grid");
    GridSpec s;
    s.nx = g.at("nx").get<int>();
    s.ny = g.at("ny").get<int>();
    s.h = g.at("h").get<double>();
    s.delta = g.at("delta").get<double>();
    s.k_steps = g.at("k_steps").get<int>();
    s.x0 = g.at("x0").get<double>();
    s.y0 = g.at("y0").get<double>();
    s.validate();
    return s;
}

VelocityField field_from_config(const Json& config) {
    const std::string path = config.at("field_path").get<std::string>();
    if (!path.empty()) {
        return read_field(path);
    }
    const GridSpec spec = grid_from_config(config);
    const Json& f = config.at("flow");
    const std::string family = f.at("family").get<std::string>();
    if (family == "double_gyre") {
        const double period = f.at("period_hours").get<double>();
        if (!(period > 0.0)) {
            throw ConfigError("flow.period_hours must be > 0");
        }
        return make_double_gyre(spec, f.at("amplitude").get<double>(), f.at("eps").get<double>(), 2.0 * kPi / period);
    }
    if (family == "solid_rotation") {
        const Vec2 c = f.at("center").is_null() ? Vec2{spec.x0 + 0.5 * spec.width(), spec.y0 + 0.5 * spec.height()}
                                                : vec2_of(f.at("center"), "flow.center");
        return make_solid_rotation(spec, f.at("omega").get<double>(), c);
    }
    if (family == "random_eddies") {
        return make_random_eddies(spec, f.at("n_eddies").get<int>(), seed_of(config),
                                  f.at("peak_speed").get<double>());
    }
    if (family == "uniform") {
        return make_uniform(spec, Vec2{f.at("u").get<double>(), f.at("v").get<double>()});
    }
    throw ConfigError("unknown flow.family '" + family + "'");
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"driftlab: Lagrangian drift simulation, DriftNet training and velocity-anomaly inversion"};
    app.set_version_flag("--version", std::string(kVersion));
    app.require_subcommand(1);
    Flags flags;

    auto common = [&](CLI::App* cmd) {
        cmd->add_option("--config", flags.config_path, "JSON run configuration");
        cmd->add_option("--seed", flags.seed, "Random seed");
        cmd->add_option("--threads", flags.threads, "Worker threads (0 = all cores)");
        cmd->add_option("--out", flags.out, "Output directory");
        cmd->add_option("--set", flags.sets, "Config override key.path=value (repeatable)");
    };
    auto with_field = [&](CLI::App* cmd) {
        cmd->add_option("--field", flags.field, "Velocity field (DRFT) instead of a synthetic flow");
        cmd->add_option("--flow", flags.flow, "Synthetic flow family");
    };

    CLI::App* gen_field = app.add_subcommand("gen-field", "Generate a synthetic velocity field");
    common(gen_field);
    gen_field->add_option("--flow", flags.flow, "double_gyre, solid_rotation, random_eddies or uniform");
    CLI::App* simulate = app.add_subcommand("simulate", "Advect particles with the Lagrangian oracle");
    common(simulate);
    with_field(simulate);
    simulate->add_option("--n-traj", flags.n_traj, "Number of trajectories");
    CLI::App* gen_dataset = app.add_subcommand("gen-dataset", "Generate a training dataset bundle");
    common(gen_dataset);
    with_field(gen_dataset);
    gen_dataset->add_option("--n-traj", flags.n_traj, "Number of trajectories");
    CLI::App* train_cmd = app.add_subcommand("train", "Train DriftNet");
    common(train_cmd);
    with_field(train_cmd);
    train_cmd->add_option("--dataset", flags.dataset, "Dataset bundle directory");
    train_cmd->add_option("--epochs", flags.epochs, "Training epochs");
    CLI::App* evaluate = app.add_subcommand("evaluate", "Compute trajectory metrics");
    common(evaluate);
    with_field(evaluate);
    evaluate->add_option("--checkpoint", flags.checkpoint, "Model checkpoint directory");
    evaluate->add_option("--dataset", flags.dataset, "Dataset bundle directory");
    evaluate->add_option("--split", flags.split, "train, val or test");
    evaluate->add_option("--reference", flags.reference, "Reference ensemble (DTRJ)");
    evaluate->add_option("--simulation", flags.simulation, "Simulated ensemble (DTRJ)");
    CLI::App* invert_cmd = app.add_subcommand("invert", "Retrieve a velocity anomaly from a trajectory");
    common(invert_cmd);
    with_field(invert_cmd);
    invert_cmd->add_option("--route", flags.route, "oracle or network");
    invert_cmd->add_option("--checkpoint", flags.checkpoint, "Model checkpoint directory (network route)");
    invert_cmd->add_option("--target", flags.target, "Target ensemble (DTRJ)");
    invert_cmd->add_option("--traj-id", flags.traj_id, "Member of the target ensemble");
    CLI::App* selftest = app.add_subcommand("selftest", "Run the invariant suite");
    common(selftest);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForVersion& e) {
        out << kVersion << "\n";
        return kOk;
    } catch (const CLI::ParseError& e) {
        report_error(err, "", "usage", e.what(), kBadConfig);
        return kBadConfig;
    }
    const std::string command = app.get_subcommands().front()->get_name();

    try {
        Json config = default_config();
        if (!flags.config_path.empty()) {
            Json user;
            try {
                user = Json::parse(read_text_file(flags.config_path));
            } catch (const nlohmann::json::exception& e) {
                throw ConfigError("malformed config " + flags.config_path + ": " + e.what());
            }
            if (!user.is_object()) {
                throw ConfigError("config " + flags.config_path + " must hold a JSON object");
            }
            user.erase("command");
            user.erase("version");
            config.merge_patch(user);
        }
        for (const auto& s : flags.sets) {
            apply_override(config, s);
        }
        if (flags.seed) {
            config["seed"] = *flags.seed;
        }
        if (!flags.out.empty()) {
            config["out"] = flags.out;
        }
        set_path(config, {"flow", "family"}, flags.flow);
        set_path(config, {"field_path"}, flags.field);
        set_path(config, {"dataset", "path"}, flags.dataset);
        set_path(config, {"evaluate", "checkpoint"}, flags.checkpoint);
        set_path(config, {"invert", "checkpoint"}, flags.checkpoint);
        set_path(config, {"evaluate", "split"}, flags.split);
        set_path(config, {"evaluate", "reference"}, flags.reference);
        set_path(config, {"evaluate", "simulation"}, flags.simulation);
        set_path(config, {"invert", "target"}, flags.target);
        set_path(config, {"invert", "route"}, flags.route);
        if (flags.n_traj) {
            config["simulate"]["n_traj"] = *flags.n_traj;
            config["dataset"]["n_traj"] = *flags.n_traj;
        }
        if (flags.epochs) {
            config["train"]["epochs"] = *flags.epochs;
        }
        if (flags.traj_id) {
            config["invert"]["traj_id"] = *flags.traj_id;
        }
        // inputs are recorded as absolute paths so the snapshot replays from any directory
        absolutize(config, "field_path");
        absolutize(config["dataset"], "path");
        absolutize(config["evaluate"], "checkpoint");
        absolutize(config["evaluate"], "reference");
        absolutize(config["evaluate"], "simulation");
        absolutize(config["invert"], "checkpoint");
        absolutize(config["invert"], "target");

        // synthetic inversion defaults depend on the grid
        Json& syn = config["invert"]["synthetic"];
        if (command == "invert" && (syn["center"].is_null() || syn["r0"].is_null())) {
            const GridSpec s = grid_from_config(config);
            if (syn["center"].is_null()) {
                syn["center"] = {s.x0 + 0.5 * s.width(), s.y0 + 0.5 * s.height()};
            }
            if (syn["r0"].is_null()) {
                syn["r0"] = {s.x0 + 0.5 * s.width() - syn["radius_km"].get<double>(), s.y0 + 0.5 * s.height()};
            }
        }

        int threads = 0;
        if (flags.threads) {
            threads = *flags.threads;
        } else if (const char* env = std::getenv("DRIFTLAB_THREADS")) {
            try {
                threads = std::stoi(env);
            } catch (const std::exception&) {
                throw ConfigError(std::string("DRIFTLAB_THREADS is not an integer: ") + env);
            }
        }
        if (threads < 0) {
            throw ConfigError("--threads must be >= 0");
        }
        set_num_threads(threads);

        const fs::path outdir = config.at("out").get<std::string>();
        config["out"] = fs::absolute(outdir).lexically_normal().string();
        write_snapshot(config, command, outdir);

        if (command == "gen-field") {
            cmd_gen_field(config, outdir, out);
        } else if (command == "simulate") {
            cmd_simulate(config, outdir, out);
        } else if (command == "gen-dataset") {
            cmd_gen_dataset(config, outdir, out);
        } else if (command == "train") {
            cmd_train(config, outdir, out);
        } else if (command == "evaluate") {
            cmd_evaluate(config, outdir, out);
        } else if (command == "invert") {
            cmd_invert(config, outdir, out);
        } else if (command == "selftest") {
            return cmd_selftest(outdir, out);
        }
        return kOk;
    } catch (const nlohmann::json::exception& e) {
        report_error(err, command, "config", std::string("invalid configuration value: ") + e.what(), kBadConfig);
        return kBadConfig;
    } catch (const Error& e) {
        const int code = code_of(e);
        report_error(err, command, kind_of(e), e.what(), code);
        return code;
    } catch (const fs::filesystem_error& e) {
        report_error(err, command, "missing_file", e.what(), kMissingFile);
        return kMissingFile;
    } catch (const std::exception& e) {
        report_error(err, command, "error", e.what(), kFailure);
        return kFailure;
    }
}

} // namespace driftlab::cli
