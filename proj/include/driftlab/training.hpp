#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "driftlab/autodiff.hpp"
#include "driftlab/driftnet.hpp"
#include "driftlab/field.hpp"
#include "driftlab/lagrangian.hpp"

namespace driftlab {

enum class Split : std::uint8_t { train, val, test };
std::string to_string(Split s);

/// Seeds and RK4 reference trajectories on one stored field, with a deterministic 80/10/10 split.
struct DriftDataset {
    VelocityField field;
    std::vector<Trajectory> refs;
    std::vector<Split> splits;
    std::uint64_t seed = 0;
    int substeps = kDefaultSubsteps;

    std::size_t size() const { return refs.size(); }
    std::vector<std::size_t> indices(Split s) const;
    Ensemble ensemble(Split s) const;
};

/// Split sizes for n trajectories: round(0.8 n) train, half the remainder val, the rest test.
struct SplitSizes {
    std::size_t train, val, test;
};
SplitSizes split_sizes(std::size_t n);

DriftDataset generate_dataset(const VelocityField& field, int n_traj, std::uint64_t seed,
                              int substeps = kDefaultSubsteps);

/// Dataset bundle: field.drft, trajectories.dtrj and manifest.json (seed, substeps, split per trajectory).
void save_dataset(const DriftDataset& dataset, const std::string& dir);
DriftDataset load_dataset(const std::string& dir);

// Batch losses on trajectories (value level).
double loss_mse(const std::vector<Trajectory>& refs, const std::vector<Trajectory>& sims);
double loss_liu(const std::vector<Trajectory>& refs, const std::vector<Trajectory>& sims);
double total_loss(const std::vector<Trajectory>& refs, const std::vector<Trajectory>& sims, double alpha,
                  double beta);

// Single-trajectory losses on the tape; `sim` is a (K+1, 2) positions Var.
ad::Var loss_mse(const ad::Var& sim, const Trajectory& ref);
ad::Var loss_liu(const ad::Var& sim, const Trajectory& ref);
ad::Var total_loss(const ad::Var& sim, const Trajectory& ref, double alpha, double beta);

struct TrainConfig {
    double alpha = 0.2;
    double beta = 0.8;
    double learning_rate = 5e-3;
    int epochs = 100;
    int batch_size = 32;
    std::uint64_t seed = 0;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
};

struct EpochLog {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double mse = 0.0;
    double liu = 0.0;
    double best_val_loss = 0.0;
};

struct TrainResult {
    DriftNet model; // best on validation
    std::vector<EpochLog> log;
};

/// Adam with moments reset per run; one tape per example, gradients summed in example order.
class AdamOptimizer {
  public:
    AdamOptimizer(const ParamStore& params, const TrainConfig& config);
    void step(ParamStore& params, const std::vector<std::vector<double>>& grads);

  private:
    TrainConfig config_;
    std::vector<std::vector<double>> m_, v_;
    long t_ = 0;
};

/// Loss value and parameter gradients (in ParamStore order) for one example.
struct ExampleGradient {
    double loss = 0.0;
    double mse = 0.0;
    double liu = 0.0;
    std::vector<std::vector<double>> grads;
};
ExampleGradient example_gradient(const DriftNet& net, const VelocityField& field, const Trajectory& ref,
                                 double alpha, double beta);

using EpochCallback = std::function<void(const EpochLog&)>;

TrainResult train(const DriftDataset& dataset, const TrainConfig& config, const DriftNetConfig& model_config,
                  const EpochCallback& on_epoch = {});

/// Continues training from `init` (used by train()).
TrainResult train_from(DriftNet init, const DriftDataset& dataset, const TrainConfig& config,
                       const EpochCallback& on_epoch = {});

/// CSV `epoch,train_loss,val_loss,mse,liu`.
std::string training_log_csv(const std::vector<EpochLog>& log);

/// Model predictions for the given dataset members.
std::vector<Trajectory> predict(const DriftNet& net, const VelocityField& field, const std::vector<Trajectory>& refs);

} // namespace driftlab
