#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flowsync/env.hpp"
#include "flowsync/field.hpp"
#include "flowsync/flow.hpp"
#include "flowsync/mlp.hpp"
#include "flowsync/ppo.hpp"

namespace flowsync {

struct RunConfig {
    FieldConfig field;
    SolverConfig solver;
    RewardConfig reward;
    PpoConfig ppo;
    uint64_t master_seed = 0;
    std::string output_dir = "runs/default";
    int checkpoint_every = 10;  // batches between periodic checkpoints
    int eval_episodes = 50;
    int workers = 1;
};

void validate(const RunConfig& cfg);

// Flat INI-style `key = value` sections ([field] [solver] [reward] [ppo]
// [run]); unknown sections or keys are configuration errors.
RunConfig parse_config_text(const std::string& text, const std::string& origin);
RunConfig load_config(const std::string& path);

// Prefix-windowed trailing mean: entry i averages the last min(window, i+1)
// values. Throws UsageError on an empty series.
std::vector<double> moving_average(const std::vector<double>& scores, int window = 100);

struct TrainResult {
    std::vector<double> scores;      // one per episode, in order
    std::vector<double> moving_avg;  // trailing-100 mean per episode
    std::string final_checkpoint;
    int batches = 0;
    Mlp policy, value;
};

// Runs the full training loop: derives one seed per episode from the master
// seed, collects batches (optionally on several workers), applies the policy
// update, and writes training_log.csv, timings.csv and periodic checkpoints
// under cfg.output_dir. Deterministic in (cfg, master_seed); wall-clock
// timings live in their own file so the main log reproduces byte-for-byte.
TrainResult train(const RunConfig& cfg);

struct Checkpoint {
    RunConfig cfg;
    int64_t batch_index = 0;
    int64_t episodes_done = 0;
    Mlp policy, value;
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

struct EvalStats {
    double mean = 0.0;
    double stddev = 0.0;
    double min = 0.0;
    double max = 0.0;
    int episodes = 0;
};

// Greedy (argmax) evaluation over fresh random fields seeded from `seed`.
EvalStats evaluate_nets(const Mlp& policy, const RunConfig& cfg, int n_episodes, uint64_t seed);
EvalStats evaluate(const std::string& checkpoint_path, int n_episodes, uint64_t seed);

struct RolloutResult {
    int steps = 0;
    double score = 0.0;
    bool has_centroid = false;
    double terminal_c_y = 0.0;
    std::string dir;  // rollout_<seed> directory holding trace.csv and frames
};

// Replays one greedy episode, writing trace.csv and (optionally) one raster
// frame per control step under <out_dir>/rollout_<seed>/.
RolloutResult rollout(const std::string& checkpoint_path, uint64_t seed, bool render,
                      const std::string& out_dir);

struct CalibrationResult {
    int substeps_per_action = 1;
    double median_time_units = 0.0;    // Both-gates episode length at substeps 1
    double median_control_steps = 0.0;  // implied length at the chosen setting
};

// Sweeps n_fields random fields under the Both-gates-always policy and picks
// the sub-step count that puts the median episode at ~70 control steps.
CalibrationResult calibrate(const FieldConfig& field_cfg, SolverConfig solver_cfg,
                            const RewardConfig& reward_cfg, int n_fields, uint64_t seed);

// Writes a binary PPM visualising permeability (grayscale), resin fill
// (blue overlay), sensor states (red/gray dots) and the sensor-centroid row
// (green line). Cell size in pixels is `scale`.
void render_frame(const PermeabilityField& field, const FlowState& state,
                  const std::vector<uint8_t>& sensors, bool has_centroid, double c_y,
                  const std::string& path, int scale = 6);

}  // namespace flowsync
