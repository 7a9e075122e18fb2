#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "driftlab/cli.hpp"
#include "driftlab/error.hpp"
#include "driftlab/lagrangian.hpp"
#include "test_support.hpp"

using namespace driftlab;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct Outcome {
    int code = -1;
    std::string out;
    std::string err;
};

/// Runs the real executable so exit codes and streams are the process's own.
Outcome run_cli(const std::string& args, const fs::path& dir) {
    const std::string out = (dir / "stdout.txt").string(), err = (dir / "stderr.txt").string();
    const std::string cmd = "cd '" + dir.string() + "' && '" + std::string(DRIFTLAB_CLI_PATH) + "' " + args + " > '" +
                            out + "' 2> '" + err + "'";
    const int status = std::system(cmd.c_str());
    Outcome o;
    o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    o.out = slurp(out);
    o.err = slurp(err);
    return o;
}

nlohmann::json error_line(const Outcome& o) {
    const std::string first = o.err.substr(0, o.err.find('\n'));
    return nlohmann::json::parse(first);
}

const char* kSmall = "--set grid.nx=16 --set grid.ny=16 --set grid.k_steps=6";

} // namespace

TEST(Cli, VersionAndHelp) {
    const auto dir = driftlab::testing::scratch_dir("cli_version");
    const Outcome v = run_cli("--version", dir);
    EXPECT_EQ(v.code, 0);
    EXPECT_FALSE(v.out.empty());
    const Outcome h = run_cli("--help", dir);
    EXPECT_EQ(h.code, 0);
    for (const char* cmd : {"gen-field", "simulate", "gen-dataset", "train", "evaluate", "invert", "selftest"}) {
        EXPECT_NE(h.out.find(cmd), std::string::npos) << cmd;
    }
}

TEST(Cli, MissingFileExitsTwo) {
    const auto dir = driftlab::testing::scratch_dir("cli_missing");
    const Outcome a = run_cli("simulate --config nowhere.json --out o", dir);
    EXPECT_EQ(a.code, 2);
    const auto j = error_line(a);
    EXPECT_EQ(j.at("error"), "missing_file");
    EXPECT_EQ(j.at("command"), "simulate");
    EXPECT_EQ(j.at("exit_code"), 2);
    EXPECT_EQ(run_cli("simulate --field nowhere.drft --out o", dir).code, 2);
    EXPECT_EQ(run_cli("evaluate --reference nowhere.dtrj --out o", dir).code, 2);
    EXPECT_EQ(run_cli("invert --route network --checkpoint nowhere --out o", dir).code, 2);
}

TEST(Cli, BadConfigExitsThree) {
    const auto dir = driftlab::testing::scratch_dir("cli_config");
    {
        std::ofstream(dir / "broken.json") << "{ \"grid\": ";
    }
    {
        std::ofstream(dir / "array.json") << "[1, 2]";
    }
    EXPECT_EQ(run_cli("simulate --config broken.json --out o", dir).code, 3);
    EXPECT_EQ(run_cli("simulate --config array.json --out o", dir).code, 3);
    EXPECT_EQ(run_cli("simulate --set grid.nx=0 --out o", dir).code, 3);
    EXPECT_EQ(run_cli("simulate --set grid.nx=\\\"many\\\" --out o", dir).code, 3);
    EXPECT_EQ(run_cli("simulate --flow vortex_street --out o", dir).code, 3);
    EXPECT_EQ(run_cli("simulate --set nonsense --out o", dir).code, 3);
    EXPECT_EQ(run_cli("simulate --threads -1 --out o", dir).code, 3);
    EXPECT_EQ(run_cli("invert --route sideways --out o " + std::string(kSmall), dir).code, 3);
    const Outcome u = run_cli("teleport", dir);
    EXPECT_EQ(u.code, 3);
    EXPECT_EQ(error_line(u).at("error"), "usage");
    EXPECT_EQ(run_cli("", dir).code, 3);
}

TEST(Cli, NumericalFailureExitsFour) {
    const auto dir = driftlab::testing::scratch_dir("cli_numerical");
    const Outcome o = run_cli(
        "invert --set grid.nx=16 --set grid.ny=16 --set grid.k_steps=4 --set invert.step_size=1e300 "
        "--set invert.n_steps=3 --out o",
        dir);
    EXPECT_EQ(o.code, 4);
    EXPECT_EQ(error_line(o).at("error"), "numerical");
}

TEST(Cli, SolidRotationFollowsCircles) {
    const auto dir = driftlab::testing::scratch_dir("cli_rotation");
    const Outcome o = run_cli(
        "simulate --flow solid_rotation --set flow.omega=0.02 --set simulate.seeding=points "
        "--set simulate.points=[[200,160],[160,100],[130,130]] --out o",
        dir);
    ASSERT_EQ(o.code, 0) << o.err;
    const Ensemble e = read_ensemble((dir / "o" / "trajectories.dtrj").string());
    ASSERT_EQ(e.size(), 3u);
    const Vec2 c{160.0, 160.0};
    for (const Trajectory& t : e.trajectories) {
        ASSERT_EQ(t.steps(), 36);
        const Vec2 r = t.positions.front() - c;
        for (int k = 0; k <= t.steps(); ++k) {
            // counter-clockwise at omega rad/h
            const double a = 0.02 * k * 6.0;
            const Vec2 expect = c + Vec2{r.x * std::cos(a) - r.y * std::sin(a), r.x * std::sin(a) + r.y * std::cos(a)};
            EXPECT_NEAR(t.positions[static_cast<std::size_t>(k)].x, expect.x, 1e-3) << k;
            EXPECT_NEAR(t.positions[static_cast<std::size_t>(k)].y, expect.y, 1e-3) << k;
        }
    }
    const std::string csv = slurp(dir / "o" / "trajectories.csv");
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "traj_id,step,t_hours,x_km,y_km");
}

TEST(Cli, EvaluateReferenceAgainstItself) {
    const auto dir = driftlab::testing::scratch_dir("cli_evaluate");
    ASSERT_EQ(run_cli("simulate --flow random_eddies --n-traj 20 --seed 4 --out sim " + std::string(kSmall), dir).code,
              0);
    const Outcome o = run_cli("evaluate --reference sim/trajectories.dtrj --out ev", dir);
    ASSERT_EQ(o.code, 0) << o.err;
    const auto j = nlohmann::json::parse(slurp(dir / "ev" / "metrics.json"));
    EXPECT_EQ(j.at("n_traj"), 20);
    EXPECT_EQ(j.at("final_separation_km").get<double>(), 0.0);
    EXPECT_EQ(j.at("rmse_km").get<double>(), 0.0);
    EXPECT_EQ(j.at("liu_index").get<double>(), 0.0);
    EXPECT_GT(j.at("persistence_final_separation_km").get<double>(), 0.0);
    for (const char* f : {"separation.csv", "autocorrelation.csv", "separation.svg", "autocorrelation.svg",
                          "config.json"}) {
        EXPECT_TRUE(fs::exists(dir / "ev" / f)) << f;
    }
}

TEST(Cli, ConfigSnapshotReplaysAcrossThreadCounts) {
    const auto dir = driftlab::testing::scratch_dir("cli_replay");
    const Outcome a =
        run_cli("simulate --flow random_eddies --n-traj 40 --seed 9 --threads 1 --out a " + std::string(kSmall), dir);
    ASSERT_EQ(a.code, 0) << a.err;
    const auto snap = nlohmann::json::parse(slurp(dir / "a" / "config.json"));
    EXPECT_EQ(snap.at("command"), "simulate");
    EXPECT_EQ(snap.at("seed"), 9);
    EXPECT_EQ(snap.at("grid").at("nx"), 16);
    EXPECT_EQ(snap.at("flow").at("family"), "random_eddies");
    EXPECT_TRUE(snap.contains("version"));
    EXPECT_TRUE(fs::path(snap.at("out").get<std::string>()).is_absolute());

    const Outcome b = run_cli("simulate --config a/config.json --threads 3 --out b", dir);
    ASSERT_EQ(b.code, 0) << b.err;
    EXPECT_EQ(slurp(dir / "a" / "trajectories.dtrj"), slurp(dir / "b" / "trajectories.dtrj"));
    EXPECT_EQ(slurp(dir / "a" / "trajectories.csv"), slurp(dir / "b" / "trajectories.csv"));

    fs::create_directories(dir / "elsewhere");
    const Outcome c = run_cli("gen-field --config ../a/config.json --out f", dir / "elsewhere");
    ASSERT_EQ(c.code, 0) << c.err;
    EXPECT_TRUE(fs::exists(dir / "elsewhere" / "f" / "field.drft"));
    EXPECT_EQ(read_field((dir / "elsewhere" / "f" / "field.drft").string()).spec().nx, 16);
}

TEST(Cli, DatasetTrainEvaluateInvertPipeline) {
    const auto dir = driftlab::testing::scratch_dir("cli_pipeline");
    const std::string grid = "--set grid.nx=8 --set grid.ny=8 --set grid.k_steps=4";
    ASSERT_EQ(run_cli("gen-dataset --n-traj 20 --seed 1 --out ds " + grid, dir).code, 0);
    const Outcome t = run_cli("train --dataset ds/dataset --epochs 2 --set train.batch_size=4 --out tr", dir);
    ASSERT_EQ(t.code, 0) << t.err;
    EXPECT_NE(t.out.find("epoch 2"), std::string::npos);
    const auto summary = nlohmann::json::parse(slurp(dir / "tr" / "train_summary.json"));
    EXPECT_EQ(summary.at("parameter_count"), 21662);
    EXPECT_TRUE(fs::exists(dir / "tr" / "checkpoint" / "params.dprm"));
    const std::string log = slurp(dir / "tr" / "training_log.csv");
    EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 3);

    const Outcome ev = run_cli("evaluate --checkpoint tr/checkpoint --dataset ds/dataset --split test --out ev", dir);
    ASSERT_EQ(ev.code, 0) << ev.err;
    EXPECT_EQ(read_ensemble((dir / "ev" / "predictions.dtrj").string()).size(), 2u);
    EXPECT_EQ(run_cli("evaluate --checkpoint tr/checkpoint --dataset ds/dataset --split dev --out ev2", dir).code, 3);

    const Outcome inv = run_cli("invert --route network --checkpoint tr/checkpoint --set invert.n_steps=3 "
                                "--set invert.synthetic.radius_km=20 --out inv " + grid,
                                dir);
    ASSERT_EQ(inv.code, 0) << inv.err;
    for (const char* f : {"true_anomaly.drft", "target.dtrj", "anomaly.drft", "loss.csv", "summary.json"}) {
        EXPECT_TRUE(fs::exists(dir / "inv" / f)) << f;
    }
}

TEST(Cli, ApplyOverride) {
    cli::Json c = cli::default_config();
    cli::apply_override(c, "grid.nx=48");
    cli::apply_override(c, "flow.family=uniform");
    cli::apply_override(c, "simulate.center=[1,2]");
    EXPECT_EQ(c["grid"]["nx"], 48);
    EXPECT_EQ(c["flow"]["family"], "uniform");
    EXPECT_EQ(c["simulate"]["center"][1], 2);
    EXPECT_EQ(cli::grid_from_config(c).nx, 48);
    EXPECT_THROW(cli::apply_override(c, "=3"), ConfigError);
    EXPECT_THROW(cli::apply_override(c, "grid..nx=3"), ConfigError);
    EXPECT_THROW(cli::apply_override(c, "grid.nx.deeper=3"), ConfigError);
}
