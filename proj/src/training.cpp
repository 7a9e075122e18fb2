#include "driftlab/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "driftlab/binary_io.hpp"
#include "driftlab/error.hpp"
#include "driftlab/parallel.hpp"

namespace driftlab {
namespace {

void require_matched(const std::vector<Trajectory>& refs, const std::vector<Trajectory>& sims, const char* what) {
    if (refs.size() != sims.size() || refs.empty()) {
        throw ShapeError(std::string(what) + ": batches must be non-empty and equally sized");
    }
    for (std::size_t i = 0; i < refs.size(); ++i) {
        if (refs[i].positions.size() != sims[i].positions.size()) {
            throw ShapeError(std::string(what) + ": trajectory " + std::to_string(i) + " lengths differ");
        }
    }
}

/// Sum over j = 1..K of the cumulative reference path length l_j.
double cumulative_path_sum(const Trajectory& ref) {
    double along = 0.0, total = 0.0;
    for (std::size_t j = 1; j < ref.positions.size(); ++j) {
        along += ref.spec.distance(ref.positions[j - 1], ref.positions[j]);
        total += along;
    }
    if (!(total > 0.0)) {
        throw DegenerateError("Liu index undefined: reference trajectory has zero path length");
    }
    return total;
}

ad::Tensor positions_tensor(const Trajectory& t) {
    ad::Tensor out = ad::Tensor::zeros({static_cast<int>(t.positions.size()), 2});
    for (std::size_t i = 0; i < t.positions.size(); ++i) {
        out.data[2 * i] = t.positions[i].x;
        out.data[2 * i + 1] = t.positions[i].y;
    }
    return out;
}

ad::Var displacement(const ad::Var& sim, const Trajectory& ref) {
    if (sim.shape() != ad::Shape{static_cast<int>(ref.positions.size()), 2}) {
        throw ShapeError("trajectory loss: simulated positions " + ad::shape_str(sim.shape()) +
                         " do not match the reference length");
    }
    const ad::Var r = sim.tape().constant(positions_tensor(ref));
    return ad::wrap_signed(ad::sub(sim, r), {ref.spec.width(), ref.spec.height()});
}

} // namespace

std::string to_string(Split s) {
    switch (s) {
    case Split::train:
        return "train";
    case Split::val:
        return "val";
    default:
        return "test";
    }
}

std::vector<std::size_t> DriftDataset::indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < splits.size(); ++i) {
        if (splits[i] == s) {
            out.push_back(i);
        }
    }
    return out;
}

Ensemble DriftDataset::ensemble(Split s) const {
    Ensemble e;
    for (std::size_t i : indices(s)) {
        e.seeds.push_back(refs[i].positions.front());
        e.trajectories.push_back(refs[i]);
    }
    return e;
}

SplitSizes split_sizes(std::size_t n) {
    const auto train = static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(n)));
    const std::size_t val = (n - train) / 2;
    return {train, val, n - train - val};
}

DriftDataset generate_dataset(const VelocityField& field, int n_traj, std::uint64_t seed, int substeps) {
    if (n_traj < 10) {
        throw ConfigError("generate_dataset needs n_traj >= 10");
    }
    DriftDataset ds;
    ds.field = field;
    ds.seed = seed;
    ds.substeps = substeps;
    const std::vector<Vec2> seeds = uniform_seeds(field.spec(), n_traj, seed);
    ds.refs = advect_ensemble(field, seeds, Integrator::rk4, substeps).trajectories;

    std::vector<std::size_t> order(static_cast<std::size_t>(n_traj));
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed ^ 0x5eedULL);
    std::shuffle(order.begin(), order.end(), rng);
    const SplitSizes sizes = split_sizes(order.size());
    ds.splits.assign(order.size(), Split::test);
    for (std::size_t i = 0; i < order.size(); ++i) {
        ds.splits[order[i]] = i < sizes.train ? Split::train : (i < sizes.train + sizes.val ? Split::val : Split::test);
    }
    return ds;
}

void save_dataset(const DriftDataset& dataset, const std::string& dir) {
    const std::filesystem::path p(dir);
    std::filesystem::create_directories(p);
    write_field(dataset.field, (p / "field.drft").string());
    Ensemble e;
    for (const auto& t : dataset.refs) {
        e.seeds.push_back(t.positions.front());
        e.trajectories.push_back(t);
    }
    write_ensemble(e, (p / "trajectories.dtrj").string());
    nlohmann::ordered_json j;
    j["seed"] = dataset.seed;
    j["substeps"] = dataset.substeps;
    j["integrator"] = "rk4";
    j["n_traj"] = dataset.size();
    std::vector<std::string> splits;
    for (Split s : dataset.splits) {
        splits.push_back(to_string(s));
    }
    j["splits"] = splits;
    write_text_file((p / "manifest.json").string(), j.dump(2) + "\n");
}

DriftDataset load_dataset(const std::string& dir) {
    const std::filesystem::path p(dir);
    DriftDataset ds;
    ds.field = read_field((p / "field.drft").string());
    const Ensemble e = read_ensemble((p / "trajectories.dtrj").string());
    ds.refs = e.trajectories;
    try {
        const auto j = nlohmann::json::parse(read_text_file((p / "manifest.json").string()));
        ds.seed = j.at("seed").get<std::uint64_t>();
        ds.substeps = j.at("substeps").get<int>();
        for (const auto& s : j.at("splits")) {
            const auto name = s.get<std::string>();
            ds.splits.push_back(name == "train" ? Split::train : name == "val" ? Split::val : Split::test);
        }
    } catch (const nlohmann::json::exception& ex) {
        throw ConfigError("malformed dataset manifest in " + dir + ": " + ex.what());
    }
    if (ds.splits.size() != ds.refs.size()) {
        throw FormatError("dataset manifest lists " + std::to_string(ds.splits.size()) + " splits for " +
                          std::to_string(ds.refs.size()) + " trajectories");
    }
    if (!(e.spec() == ds.field.spec())) {
        throw FormatError("dataset trajectories and field use different grids");
    }
    return ds;
}

double loss_mse(const std::vector<Trajectory>& refs, const std::vector<Trajectory>& sims) {
    require_matched(refs, sims, "loss_mse");
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < refs.size(); ++i) {
        for (std::size_t j = 0; j < refs[i].positions.size(); ++j) {
            total += refs[i].spec.displacement(refs[i].positions[j], sims[i].positions[j]).squared_norm();
            ++count;
        }
    }
    return total / static_cast<double>(count);
}

double loss_liu(const std::vector<Trajectory>& refs, const std::vector<Trajectory>& sims) {
    require_matched(refs, sims, "loss_liu");
    double total = 0.0;
    for (std::size_t i = 0; i < refs.size(); ++i) {
        const double denom = cumulative_path_sum(refs[i]);
        double num = 0.0;
        for (std::size_t j = 1; j < refs[i].positions.size(); ++j) {
            num += refs[i].spec.distance(refs[i].positions[j], sims[i].positions[j]);
        }
        total += num / denom;
    }
    return total / static_cast<double>(refs.size());
}

double total_loss(const std::vector<Trajectory>& refs, const std::vector<Trajectory>& sims, double alpha,
                  double beta) {
    return alpha * loss_mse(refs, sims) + beta * loss_liu(refs, sims);
}

ad::Var loss_mse(const ad::Var& sim, const Trajectory& ref) {
    const ad::Var d = displacement(sim, ref);
    return ad::scale(ad::sum_squares(d), 1.0 / static_cast<double>(ref.positions.size()));
}

ad::Var loss_liu(const ad::Var& sim, const Trajectory& ref) {
    const double denom = cumulative_path_sum(ref);
    const ad::Var d = displacement(sim, ref);
    const ad::Var dist = ad::norm_last(ad::slice(d, 0, 1, static_cast<int>(ref.positions.size())));
    return ad::scale(ad::sum(dist), 1.0 / denom);
}

ad::Var total_loss(const ad::Var& sim, const Trajectory& ref, double alpha, double beta) {
    return ad::add(ad::scale(loss_mse(sim, ref), alpha), ad::scale(loss_liu(sim, ref), beta));
}

AdamOptimizer::AdamOptimizer(const ParamStore& params, const TrainConfig& config) : config_(config) {
    for (const auto& [name, t] : params) {
        m_.emplace_back(t.size(), 0.0);
        v_.emplace_back(t.size(), 0.0);
    }
}

void AdamOptimizer::step(ParamStore& params, const std::vector<std::vector<double>>& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(config_.adam_beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(config_.adam_beta2, static_cast<double>(t_));
    std::size_t k = 0;
    for (auto& [name, t] : params) {
        auto& m = m_[k];
        auto& v = v_[k];
        const auto& g = grads[k];
        for (std::size_t i = 0; i < t.size(); ++i) {
            m[i] = config_.adam_beta1 * m[i] + (1.0 - config_.adam_beta1) * g[i];
            v[i] = config_.adam_beta2 * v[i] + (1.0 - config_.adam_beta2) * g[i] * g[i];
            t.data[i] -= config_.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.adam_eps);
        }
        ++k;
    }
}

ExampleGradient example_gradient(const DriftNet& net, const VelocityField& field, const Trajectory& ref,
                                 double alpha, double beta) {
    ad::Tape tape;
    const ParamVars pv = bind_params(tape, net.params, true);
    const ad::Shape shape{net.spec.snapshots(), net.spec.ny, net.spec.nx};
    const ad::Var u = tape.constant(ad::Tensor(shape, field.u()));
    const ad::Var v = tape.constant(ad::Tensor(shape, field.v()));
    const ad::Var sim = forward_graph(net, pv, u, v, ref.positions.front());
    const ad::Var mse = loss_mse(sim, ref);
    const ad::Var liu = loss_liu(sim, ref);
    const ad::Var loss = ad::add(ad::scale(mse, alpha), ad::scale(liu, beta));
    ExampleGradient out;
    out.loss = loss.value().data[0];
    out.mse = mse.value().data[0];
    out.liu = liu.value().data[0];
    if (!std::isfinite(out.loss)) {
        return out;
    }
    const ad::Gradients grads = tape.backward(loss);
    for (const auto& [name, t] : net.params) {
        out.grads.push_back(grads.of(pv.at(name)).data);
    }
    return out;
}

std::vector<Trajectory> predict(const DriftNet& net, const VelocityField& field, const std::vector<Trajectory>& refs) {
    std::vector<Trajectory> out(refs.size());
    parallel_for(refs.size(), [&](std::size_t i) { out[i] = forward(net, field, refs[i].positions.front()); });
    return out;
}

TrainResult train(const DriftDataset& dataset, const TrainConfig& config, const DriftNetConfig& model_config,
                  const EpochCallback& on_epoch) {
    DriftNet init = make_driftnet(dataset.field.spec(), model_config, dataset.field.vmax(), config.seed);
    return train_from(std::move(init), dataset, config, on_epoch);
}

TrainResult train_from(DriftNet init, const DriftDataset& dataset, const TrainConfig& config,
                       const EpochCallback& on_epoch) {
    std::vector<std::size_t> train_idx = dataset.indices(Split::train);
    const std::vector<std::size_t> val_idx = dataset.indices(Split::val);
    if (train_idx.empty()) {
        throw ConfigError("train: the training split is empty");
    }
    if (config.batch_size < 1 || config.epochs < 1) {
        throw ConfigError("train: batch_size and epochs must be >= 1");
    }
    if (config.alpha < 0.0 || config.beta < 0.0) {
        throw ConfigError("train: alpha and beta must be non-negative");
    }
    DriftNet net = std::move(init);
    AdamOptimizer adam(net.params, config);
    TrainResult result{net, {}};
    double best = std::numeric_limits<double>::infinity();
    std::mt19937_64 rng(config.seed ^ 0x7a11ULL);

    auto evaluate = [&](const std::vector<std::size_t>& idx, EpochLog& log) {
        std::vector<Trajectory> refs, sims;
        for (std::size_t i : idx) {
            refs.push_back(dataset.refs[i]);
        }
        sims = predict(net, dataset.field, refs);
        log.mse = loss_mse(refs, sims);
        log.liu = loss_liu(refs, sims);
        log.val_loss = config.alpha * log.mse + config.beta * log.liu;
    };

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        std::shuffle(train_idx.begin(), train_idx.end(), rng);
        double epoch_loss = 0.0;
        const std::size_t n_batches = (train_idx.size() + config.batch_size - 1) / config.batch_size;
        for (std::size_t b = 0; b < n_batches; ++b) {
            const std::size_t begin = b * config.batch_size;
            const std::size_t end = std::min(train_idx.size(), begin + config.batch_size);
            std::vector<ExampleGradient> eg(end - begin);
            parallel_for(eg.size(), [&](std::size_t i) {
                eg[i] = example_gradient(net, dataset.field, dataset.refs[train_idx[begin + i]], config.alpha,
                                         config.beta);
            });
            std::vector<std::vector<double>> grads;
            for (std::size_t i = 0; i < eg.size(); ++i) {
                if (!std::isfinite(eg[i].loss)) {
                    throw NumericalError("train: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                         std::to_string(b + 1) + ", example " +
                                         std::to_string(train_idx[begin + i]));
                }
                epoch_loss += eg[i].loss;
                if (grads.empty()) {
                    grads = eg[i].grads;
                } else {
                    for (std::size_t k = 0; k < grads.size(); ++k) {
                        for (std::size_t j = 0; j < grads[k].size(); ++j) {
                            grads[k][j] += eg[i].grads[k][j];
                        }
                    }
                }
            }
            const double inv = 1.0 / static_cast<double>(eg.size());
            for (auto& g : grads) {
                for (double& x : g) {
                    x *= inv;
                }
            }
            adam.step(net.params, grads);
        }
        EpochLog log;
        log.epoch = epoch;
        log.train_loss = epoch_loss / static_cast<double>(train_idx.size());
        evaluate(val_idx.empty() ? train_idx : val_idx, log);
        if (!std::isfinite(log.val_loss)) {
            throw NumericalError("train: non-finite validation loss at epoch " + std::to_string(epoch));
        }
        if (log.val_loss < best) {
            best = log.val_loss;
            result.model = net;
        }
        log.best_val_loss = best;
        result.log.push_back(log);
        if (on_epoch) {
            on_epoch(log);
        }
    }
    return result;
}

std::string training_log_csv(const std::vector<EpochLog>& log) {
    std::ostringstream out;
    out.precision(17);
    out << "epoch,train_loss,val_loss,mse,liu\n";
    for (const auto& e : log) {
        out << e.epoch << ',' << e.train_loss << ',' << e.val_loss << ',' << e.mse << ',' << e.liu << '\n';
    }
    return out.str();
}

} // namespace driftlab
