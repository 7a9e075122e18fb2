#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "driftlab/error.hpp"
#include "driftlab/gradcheck.hpp"
#include "driftlab/parallel.hpp"
#include "driftlab/training.hpp"
#include "test_support.hpp"

using namespace driftlab;
using driftlab::testing::grid;

namespace {

Trajectory line(const GridSpec& s, Vec2 r0, Vec2 step) {
    Trajectory t{s, {}};
    for (int k = 0; k <= s.k_steps; ++k) {
        t.positions.push_back(s.wrap(r0 + step * static_cast<double>(k)));
    }
    return t;
}

Trajectory offset(const Trajectory& t, Vec2 d) {
    Trajectory out = t;
    for (Vec2& p : out.positions) {
        p = t.spec.wrap(p + d);
    }
    return out;
}

Trajectory frozen(const Trajectory& t) {
    Trajectory out = t;
    for (Vec2& p : out.positions) {
        p = t.positions.front();
    }
    return out;
}

ad::Tensor to_tensor(const Trajectory& t) {
    ad::Tensor out = ad::Tensor::zeros({static_cast<int>(t.positions.size()), 2});
    for (std::size_t i = 0; i < t.positions.size(); ++i) {
        out.data[2 * i] = t.positions[i].x;
        out.data[2 * i + 1] = t.positions[i].y;
    }
    return out;
}

DriftDataset small_dataset(int n, std::uint64_t seed) {
    const GridSpec s = grid(12, 6);
    return generate_dataset(make_random_eddies(s, 3, 5, 1.5), n, seed);
}

TrainConfig quick_config(int epochs) {
    TrainConfig c;
    c.epochs = epochs;
    c.batch_size = 4;
    c.seed = 9;
    return c;
}

} // namespace

TEST(Dataset, DefaultsAndSplits) {
    EXPECT_EQ(GridSpec{}.k_steps, 9 * 24 / 6);
    EXPECT_EQ(GridSpec{}.delta, 6.0);
    const SplitSizes s = split_sizes(1000);
    EXPECT_EQ(s.train, 800u);
    EXPECT_EQ(s.val, 100u);
    EXPECT_EQ(s.test, 100u);
    const SplitSizes t = split_sizes(10);
    EXPECT_EQ(t.train + t.val + t.test, 10u);
    EXPECT_EQ(t.train, 8u);
}

TEST(Dataset, GenerateIsDeterministicAndUsesTheOracle) {
    const DriftDataset a = small_dataset(20, 4);
    const DriftDataset b = small_dataset(20, 4);
    ASSERT_EQ(a.size(), 20u);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a.refs[i].positions, b.refs[i].positions);
        EXPECT_EQ(a.refs[i].positions, advect_rk4(a.field, a.refs[i].positions.front(), a.substeps).positions);
    }
    EXPECT_EQ(a.splits, b.splits);
    EXPECT_EQ(a.indices(Split::train).size(), 16u);
    EXPECT_EQ(a.indices(Split::val).size(), 2u);
    EXPECT_EQ(a.indices(Split::test).size(), 2u);
    const DriftDataset c = small_dataset(20, 5);
    EXPECT_NE(c.refs[0].positions, a.refs[0].positions);
    EXPECT_THROW(small_dataset(9, 1), ConfigError);
}

TEST(Dataset, SaveLoadRoundTrip) {
    const DriftDataset a = small_dataset(12, 2);
    const auto dir = driftlab::testing::scratch_dir("dataset");
    save_dataset(a, (dir / "ds").string());
    const DriftDataset b = load_dataset((dir / "ds").string());
    EXPECT_EQ(b.field, a.field);
    EXPECT_EQ(b.splits, a.splits);
    EXPECT_EQ(b.seed, a.seed);
    EXPECT_EQ(b.substeps, a.substeps);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(b.refs[i].positions, a.refs[i].positions);
    }
    EXPECT_THROW(load_dataset((dir / "missing").string()), IoError);
}

TEST(Losses, Identities) {
    const GridSpec s = grid(16, 8);
    const std::vector<Trajectory> refs{line(s, {20.0, 30.0}, {4.0, 1.0}), line(s, {100.0, 50.0}, {-2.0, 3.0})};
    EXPECT_EQ(loss_mse(refs, refs), 0.0);
    EXPECT_EQ(loss_liu(refs, refs), 0.0);
    EXPECT_EQ(total_loss(refs, refs, 0.2, 0.8), 0.0);

    std::vector<Trajectory> shifted;
    for (const auto& t : refs) {
        shifted.push_back(offset(t, {3.0, 4.0}));
    }
    EXPECT_NEAR(loss_mse(refs, shifted), 25.0, 1e-12);

    std::vector<Trajectory> still;
    for (const auto& t : refs) {
        still.push_back(frozen(t));
    }
    EXPECT_NEAR(loss_liu(refs, still), 1.0, 1e-9);

    EXPECT_DOUBLE_EQ(total_loss(refs, shifted, 1.0, 0.0), loss_mse(refs, shifted));
    EXPECT_DOUBLE_EQ(total_loss(refs, still, 0.2, 0.8), 0.2 * loss_mse(refs, still) + 0.8 * loss_liu(refs, still));
    const TrainConfig defaults;
    EXPECT_EQ(defaults.alpha, 0.2);
    EXPECT_EQ(defaults.beta, 0.8);
    EXPECT_EQ(defaults.learning_rate, 5e-3);
    EXPECT_EQ(defaults.epochs, 100);
}

TEST(Losses, PeriodicAwareAndTranslationInvariant) {
    const GridSpec s = grid(16, 6);
    // reference hugging the seam: a 4 km offset across it is still 4 km
    const Trajectory ref = line(s, {158.0, 10.0}, {0.0, 5.0});
    const Trajectory sim = offset(ref, {4.0, 0.0});
    EXPECT_NEAR(loss_mse({ref}, {sim}), 16.0, 1e-9);

    const Trajectory r = line(s, {40.0, 40.0}, {3.0, 2.0});
    Trajectory q = r;
    q.positions[3] = q.positions[3] + Vec2{5.0, -1.0};
    q.positions[6] = q.positions[6] + Vec2{-2.0, 2.0};
    const double base = loss_liu({r}, {q});
    EXPECT_GT(base, 0.0);
    const Vec2 d{77.0, -31.0};
    EXPECT_NEAR(loss_liu({offset(r, d)}, {offset(q, d)}), base, 1e-12);
}

TEST(Losses, Errors) {
    const GridSpec s = grid(16, 4);
    const Trajectory still = line(s, {20.0, 20.0}, {0.0, 0.0});
    EXPECT_THROW(loss_liu({still}, {still}), DegenerateError);
    const Trajectory r = line(s, {20.0, 20.0}, {1.0, 0.0});
    EXPECT_THROW(loss_mse({r}, {}), ShapeError);
    EXPECT_THROW(loss_mse({r}, {line(grid(16, 3), {20.0, 20.0}, {1.0, 0.0})}), ShapeError);
    ad::Tape tape;
    EXPECT_THROW(loss_mse(tape.leaf(ad::Tensor::zeros({3, 2})), r), ShapeError);
    EXPECT_THROW(loss_liu(tape.leaf(to_tensor(still)), still), DegenerateError);
}

TEST(Losses, GraphMatchesValues) {
    const GridSpec s = grid(16, 6);
    const Trajectory ref = line(s, {30.0, 140.0}, {2.5, 4.0});
    Trajectory sim = offset(ref, {1.0, -2.0});
    sim.positions[4] = sim.positions[4] + Vec2{6.0, 3.0};
    ad::Tape tape;
    const ad::Var v = tape.leaf(to_tensor(sim));
    EXPECT_NEAR(loss_mse(v, ref).value().data[0], loss_mse({ref}, {sim}), 1e-12);
    EXPECT_NEAR(loss_liu(v, ref).value().data[0], loss_liu({ref}, {sim}), 1e-12);
    EXPECT_NEAR(total_loss(v, ref, 0.3, 0.6).value().data[0], total_loss({ref}, {sim}, 0.3, 0.6), 1e-12);
}

TEST(Losses, GradientsMatchFiniteDifferences) {
    const GridSpec s = grid(16, 6);
    const Trajectory ref = line(s, {30.0, 140.0}, {2.5, 4.0});
    Trajectory sim = offset(ref, {1.0, -2.0});
    sim.positions[2] = sim.positions[2] + Vec2{-3.0, 5.0};
    for (int which = 0; which < 3; ++which) {
        const ad::ScalarGraph f = [&](ad::Tape&, const std::vector<ad::Var>& in) {
            return which == 0 ? loss_mse(in[0], ref) : which == 1 ? loss_liu(in[0], ref) : total_loss(in[0], ref, 0.2, 0.8);
        };
        // cheap, low-noise losses with km-scale curvature at 100 km coordinates: a short step wins
        ad::GradCheckOptions o;
        o.step = 1e-6;
        const ad::GradCheckReport r = ad::gradient_check(f, {to_tensor(sim)}, o);
        EXPECT_LT(r.max_rel_error, 1e-8) << which << " " << r.worst;
    }
}

TEST(Adam, FirstStepMovesByLearningRate) {
    ParamStore p;
    p.add("w", ad::Tensor({3}, {1.0, -2.0, 0.5}));
    TrainConfig c;
    c.learning_rate = 0.01;
    AdamOptimizer adam(p, c);
    adam.step(p, {{4.0, -0.25, 0.0}});
    EXPECT_NEAR(p.get("w").data[0], 1.0 - 0.01, 1e-9);
    EXPECT_NEAR(p.get("w").data[1], -2.0 + 0.01, 1e-9);
    EXPECT_EQ(p.get("w").data[2], 0.5);
}

TEST(Train, GradientsAreFinite) {
    const DriftDataset ds = small_dataset(10, 3);
    const DriftNet net = make_driftnet(ds.field.spec(), {}, ds.field.vmax(), 1);
    const ExampleGradient g = example_gradient(net, ds.field, ds.refs[0], 0.2, 0.8);
    EXPECT_TRUE(std::isfinite(g.loss));
    EXPECT_NEAR(g.loss, 0.2 * g.mse + 0.8 * g.liu, 1e-12);
    ASSERT_EQ(g.grads.size(), net.params.size());
    double norm = 0.0;
    for (const auto& t : g.grads) {
        for (double x : t) {
            ASSERT_TRUE(std::isfinite(x));
            norm += x * x;
        }
    }
    EXPECT_GT(norm, 0.0);
}

TEST(Train, OverfitsTenTrajectories) {
    const GridSpec s = grid(12, 6);
    const DriftDataset ds = generate_dataset(make_random_eddies(s, 3, 5, 1.5), 10, 11);
    TrainConfig c;
    c.epochs = 200;
    c.batch_size = 8;
    c.seed = 1;
    const TrainResult r = train(ds, c, {});
    ASSERT_EQ(r.log.size(), 200u);
    EXPECT_LE(r.log.back().train_loss, 0.1 * r.log.front().train_loss)
        << r.log.front().train_loss << " -> " << r.log.back().train_loss;
}

TEST(Train, BestValidationIsMonotoneAndSelected) {
    const DriftDataset ds = small_dataset(20, 6);
    const TrainResult r = train(ds, quick_config(8), {});
    double best = std::numeric_limits<double>::infinity();
    for (const EpochLog& e : r.log) {
        best = std::min(best, e.val_loss);
        EXPECT_EQ(e.best_val_loss, best);
    }
    // the returned model is the one that scored the best validation loss
    std::vector<Trajectory> refs;
    for (std::size_t i : ds.indices(Split::val)) {
        refs.push_back(ds.refs[i]);
    }
    const auto sims = predict(r.model, ds.field, refs);
    EXPECT_DOUBLE_EQ(0.2 * loss_mse(refs, sims) + 0.8 * loss_liu(refs, sims), best);
    const std::string csv = training_log_csv(r.log);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "epoch,train_loss,val_loss,mse,liu");
}

TEST(Train, DeterministicAcrossRunsAndThreads) {
    const DriftDataset ds = small_dataset(20, 7);
    set_num_threads(1);
    const TrainResult a = train(ds, quick_config(2), {});
    set_num_threads(3);
    const TrainResult b = train(ds, quick_config(2), {});
    set_num_threads(0);
    EXPECT_EQ(a.model.params, b.model.params);
    EXPECT_EQ(a.log.back().val_loss, b.log.back().val_loss);
}

TEST(Train, NonFiniteLossAbortsWithContext) {
    const DriftDataset ds = small_dataset(10, 8);
    DriftNet net = make_driftnet(ds.field.spec(), {}, ds.field.vmax(), 1);
    net.params.get("head.b").data[0] = std::numeric_limits<double>::quiet_NaN();
    try {
        train_from(net, ds, quick_config(1));
        FAIL() << "expected NumericalError";
    } catch (const NumericalError& e) {
        EXPECT_NE(std::string(e.what()).find("epoch 1"), std::string::npos) << e.what();
    }
    TrainConfig bad = quick_config(1);
    bad.alpha = -1.0;
    EXPECT_THROW(train(ds, bad, {}), ConfigError);
}
