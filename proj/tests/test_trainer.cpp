#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "flowsync/errors.hpp"
#include "flowsync/trainer.hpp"

using namespace flowsync;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("flowsync_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(slurp(p));
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::string cell;
        std::istringstream ls(line);
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (!line.empty() && line.back() == ',') cells.emplace_back();
        rows.push_back(cells);
    }
    return rows;
}

// Small mould so trainer tests stay fast; the sensor grid is unchanged.
RunConfig small_cfg(const fs::path& out) {
    RunConfig cfg;
    cfg.field.grid_width = 10;
    cfg.field.grid_height = 20;
    cfg.solver.substeps_per_action = 1;
    cfg.ppo.total_episodes = 4;
    cfg.ppo.episodes_per_batch = 2;
    cfg.ppo.minibatch_size = 64;
    cfg.master_seed = 99;
    cfg.output_dir = out.string();
    return cfg;
}

}  // namespace

TEST_CASE("moving average uses prefix windows") {
    std::vector<double> constant(40, 0.5);
    for (double v : moving_average(constant, 100)) CHECK(v == 0.5);

    std::vector<double> two = {0.0, 1.0};
    std::vector<double> ma = moving_average(two, 100);
    CHECK(ma[0] == 0.0);
    CHECK(ma[1] == 0.5);

    Rng rng(41);
    std::vector<double> series(500);
    for (auto& v : series) v = rng.uniform();
    std::vector<double> got = moving_average(series, 100);
    for (size_t i = 0; i < series.size(); ++i) {
        const size_t w = std::min<size_t>(100, i + 1);
        double s = 0.0;
        for (size_t j = i + 1 - w; j <= i; ++j) s += series[j];
        REQUIRE(got[i] == doctest::Approx(s / static_cast<double>(w)).epsilon(1e-12));
    }

    CHECK_THROWS_AS(moving_average({}, 100), UsageError);
    CHECK_THROWS_AS(moving_average({1.0}, 0), UsageError);
}

TEST_CASE("config text parses into every section") {
    const std::string text = R"(
# comment
[field]
grid_width = 12
grid_height = 30   ; trailing comment
lower_upper_ratio = 1.5

[solver]
substeps_per_action = 2
sor_tol = 1e-8

[reward]
mode = r2
alpha = 1.25
strict_simultaneous = true

[ppo]
gamma = 0.99
total_episodes = 10
advantage_normalization = off
lr = 0.001

[run]
master_seed = 1234
output_dir = runs/demo
workers = 2
)";
    RunConfig cfg = parse_config_text(text, "inline");
    CHECK(cfg.field.grid_width == 12);
    CHECK(cfg.field.grid_height == 30);
    CHECK(cfg.field.lower_upper_ratio == 1.5);
    CHECK(cfg.solver.substeps_per_action == 2);
    CHECK(cfg.solver.sor_tol == 1e-8);
    CHECK(cfg.reward.mode == RewardMode::R2_SymmetricPlusCentroid);
    CHECK(cfg.reward.alpha == 1.25);
    CHECK(cfg.reward.strict_simultaneous);
    CHECK(cfg.ppo.gamma == 0.99);
    CHECK(cfg.ppo.total_episodes == 10);
    CHECK_FALSE(cfg.ppo.advantage_normalization);
    CHECK(cfg.ppo.lr == 0.001);
    CHECK(cfg.master_seed == 1234);
    CHECK(cfg.output_dir == "runs/demo");
    CHECK(cfg.workers == 2);
}

TEST_CASE("config errors carry location and key context") {
    auto fails = [](const std::string& text, const char* needle) {
        CHECK_THROWS_WITH_AS(parse_config_text(text, "t.ini"), doctest::Contains(needle),
                             ConfigError);
    };
    fails("[field]\nfrobnicate = 1\n", "frobnicate");
    fails("[warp]\nx = 1\n", "unknown section");
    fails("[field]\ngrid_width = banana\n", "malformed");
    fails("grid_width = 10\n", "before any [section]");
    fails("[reward]\nmode = r3\n", "mode");
    fails("[ppo]\ngamma = 1.5\n", "gamma");  // range check after parse
    fails("[field]\ngrid_width\n", "key = value");
    CHECK_THROWS_AS(load_config("/definitely/not/here.ini"), IoError);
}

TEST_CASE("training writes a complete, recomputable log") {
    const fs::path out = fresh_dir("bookkeeping");
    RunConfig cfg = small_cfg(out);
    TrainResult res = train(cfg);
    CHECK(res.batches == 2);
    CHECK(res.scores.size() == 4);
    CHECK(fs::exists(out / "checkpoints" / "ckpt_2.bin"));
    CHECK(res.final_checkpoint == (out / "checkpoints" / "ckpt_2.bin").string());

    auto rows = read_csv(out / "training_log.csv");
    REQUIRE(rows.size() == 5);  // header + one row per episode
    CHECK(rows[0][0] == "episode");
    for (int ep = 1; ep <= 4; ++ep) {
        REQUIRE(rows[static_cast<size_t>(ep)].size() == 8);
        CHECK(rows[static_cast<size_t>(ep)][0] == std::to_string(ep));
        CHECK(std::stod(rows[static_cast<size_t>(ep)][1]) ==
              res.scores[static_cast<size_t>(ep) - 1]);
    }
    // Update statistics appear exactly on batch-boundary rows.
    CHECK(rows[1][3].empty());
    CHECK(rows[3][3].empty());
    CHECK_FALSE(rows[2][3].empty());
    CHECK_FALSE(rows[4][3].empty());

    // The moving-average column reproduces from the raw scores.
    std::vector<double> ma = moving_average(res.scores, 100);
    for (int ep = 1; ep <= 4; ++ep)
        CHECK(std::stod(rows[static_cast<size_t>(ep)][2]) == ma[static_cast<size_t>(ep) - 1]);

    // Timings are logged separately, one row per episode.
    auto timing_rows = read_csv(out / "timings.csv");
    CHECK(timing_rows.size() == 5);
}

TEST_CASE("training logs reproduce byte-for-byte for a fixed seed") {
    const fs::path out1 = fresh_dir("repro1");
    const fs::path out2 = fresh_dir("repro2");
    RunConfig cfg1 = small_cfg(out1);
    RunConfig cfg2 = small_cfg(out2);
    train(cfg1);
    train(cfg2);
    const std::string log1 = slurp(out1 / "training_log.csv");
    CHECK(log1 == slurp(out2 / "training_log.csv"));

    const fs::path out3 = fresh_dir("repro3");
    RunConfig other = small_cfg(out3);
    other.master_seed = 100;
    train(other);
    CHECK(log1 != slurp(out3 / "training_log.csv"));
}

TEST_CASE("worker count does not change the results") {
    const fs::path out1 = fresh_dir("workers1");
    const fs::path out2 = fresh_dir("workers2");
    RunConfig cfg1 = small_cfg(out1);
    cfg1.ppo.total_episodes = 6;
    cfg1.ppo.episodes_per_batch = 3;
    RunConfig cfg2 = cfg1;
    cfg2.output_dir = out2.string();
    cfg2.workers = 2;
    train(cfg1);
    train(cfg2);
    CHECK(slurp(out1 / "training_log.csv") == slurp(out2 / "training_log.csv"));
}

TEST_CASE("checkpoints restore training state bit-exactly") {
    const fs::path out = fresh_dir("roundtrip");
    RunConfig cfg = small_cfg(out);
    TrainResult res = train(cfg);

    Checkpoint ck = load_checkpoint(res.final_checkpoint);
    CHECK(ck.cfg.master_seed == cfg.master_seed);
    CHECK(ck.cfg.field.grid_height == cfg.field.grid_height);
    CHECK(ck.cfg.reward.mode == cfg.reward.mode);
    CHECK(ck.batch_index == 2);
    CHECK(ck.episodes_done == 4);
    CHECK(ck.policy.w == res.policy.w);
    CHECK(ck.value.w == res.value.w);
    CHECK(ck.policy.adam_steps == res.policy.adam_steps);

    // Evaluating through the file equals evaluating the in-memory nets.
    EvalStats direct = evaluate_nets(res.policy, cfg, 4, 555);
    EvalStats loaded = evaluate(res.final_checkpoint, 4, 555);
    CHECK(direct.mean == loaded.mean);
    CHECK(direct.stddev == loaded.stddev);
    CHECK(direct.min == loaded.min);
    CHECK(direct.max == loaded.max);

    EvalStats again = evaluate(res.final_checkpoint, 4, 555);
    CHECK(again.mean == loaded.mean);

    CHECK_THROWS_AS(evaluate(res.final_checkpoint, 0, 1), UsageError);

    // Corrupt and truncated files are load errors.
    const fs::path bad = out / "bad.bin";
    std::ofstream(bad, std::ios::binary) << "not a checkpoint at all";
    CHECK_THROWS_AS(load_checkpoint(bad.string()), IoError);
    std::string bytes = slurp(res.final_checkpoint);
    std::ofstream(out / "trunc.bin", std::ios::binary)
        << bytes.substr(0, bytes.size() / 3);
    CHECK_THROWS_AS(load_checkpoint((out / "trunc.bin").string()), IoError);
}

TEST_CASE("rollouts trace every step and render on demand") {
    const fs::path out = fresh_dir("rollout");
    RunConfig cfg = small_cfg(out);
    cfg.ppo.total_episodes = 2;
    TrainResult res = train(cfg);

    const fs::path plain = fresh_dir("rollout_plain");
    RolloutResult r1 = rollout(res.final_checkpoint, 77, false, plain.string());
    CHECK(r1.steps > 0);
    auto rows = read_csv(fs::path(r1.dir) / "trace.csv");
    CHECK(rows.size() == static_cast<size_t>(r1.steps) + 1);
    int frames = 0;
    for (const auto& e : fs::directory_iterator(r1.dir))
        if (e.path().extension() == ".ppm") ++frames;
    CHECK(frames == 0);

    const fs::path rendered = fresh_dir("rollout_frames");
    RolloutResult r2 = rollout(res.final_checkpoint, 77, true, rendered.string());
    CHECK(r2.steps == r1.steps);
    CHECK(r2.score == r1.score);
    frames = 0;
    for (const auto& e : fs::directory_iterator(r2.dir))
        if (e.path().extension() == ".ppm") ++frames;
    CHECK(frames == r2.steps);

    // Frames are plain binary PPM rasters at 6 px per cell.
    const std::string frame = slurp(fs::path(r2.dir) / "frame_0001.ppm");
    CHECK(frame.rfind("P6\n60 120\n255\n", 0) == 0);
    CHECK(frame.size() == 14 + static_cast<size_t>(60) * 120 * 3);
}

TEST_CASE("solver breakdowns score zero and skip the update") {
    const fs::path out = fresh_dir("solverfail");
    RunConfig cfg = small_cfg(out);
    cfg.solver.sor_max_iters = 1;
    cfg.solver.sor_tol = 1e-300;
    TrainResult res = train(cfg);  // must not throw
    CHECK(res.batches == 2);
    for (double s : res.scores) CHECK(s == 0.0);
    auto rows = read_csv(out / "training_log.csv");
    CHECK(rows[2][3].empty());  // no update statistics: every episode failed
    CHECK(rows[4][3].empty());
}

TEST_CASE("calibration lands in the target control-step band") {
    RunConfig cfg;  // default full-size mould
    CalibrationResult cal = calibrate(cfg.field, cfg.solver, cfg.reward, 20, 5);
    CHECK(cal.substeps_per_action >= 1);
    CHECK(cal.median_control_steps >= 40.0);
    CHECK(cal.median_control_steps <= 120.0);
    CHECK(cal.median_time_units / cal.substeps_per_action ==
          doctest::Approx(cal.median_control_steps));

    CHECK_THROWS_AS(calibrate(cfg.field, cfg.solver, cfg.reward, 0, 5), UsageError);
}
