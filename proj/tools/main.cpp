#include <cstdio>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "flowsync/errors.hpp"
#include "flowsync/trainer.hpp"

using namespace flowsync;

int main(int argc, char** argv) {
    CLI::App app{"Twin-gate resin infusion control: simulator, trainer, evaluation tools"};
    app.require_subcommand(1);

    std::string cfg_path;
    uint64_t seed = 0;
    std::string out_dir;
    int episodes = 0;
    std::string reward_mode;
    int workers = 0;

    CLI::App* cmd_train = app.add_subcommand("train", "Train a gate-control policy");
    cmd_train->add_option("--config", cfg_path, "INI-style config file");
    auto* opt_seed = cmd_train->add_option("--seed", seed, "Master seed (overrides config)");
    auto* opt_out = cmd_train->add_option("--out", out_dir, "Output directory (overrides config)");
    auto* opt_eps =
        cmd_train->add_option("--episodes", episodes, "Total episodes (overrides config)");
    auto* opt_reward = cmd_train->add_option("--reward", reward_mode, "Reward formulation")
                           ->check(CLI::IsMember({"r1", "r2"}));
    auto* opt_workers =
        cmd_train->add_option("--workers", workers, "Episode workers (overrides config)");

    std::string ckpt_path;
    int eval_episodes = 50;
    CLI::App* cmd_eval = app.add_subcommand("eval", "Evaluate a checkpoint greedily");
    cmd_eval->add_option("--checkpoint", ckpt_path, "Checkpoint file")->required();
    cmd_eval->add_option("--episodes", eval_episodes, "Evaluation episodes");
    cmd_eval->add_option("--seed", seed, "Evaluation seed");

    bool render = false;
    CLI::App* cmd_rollout = app.add_subcommand("rollout", "Replay one greedy episode");
    cmd_rollout->add_option("--checkpoint", ckpt_path, "Checkpoint file")->required();
    cmd_rollout->add_option("--seed", seed, "Field seed");
    cmd_rollout->add_flag("--render", render, "Write one PPM frame per control step");
    cmd_rollout->add_option("--out", out_dir, "Directory for rollout_<seed>/");

    int fields = 100;
    CLI::App* cmd_cal = app.add_subcommand("calibrate", "Pick substeps_per_action");
    cmd_cal->add_option("--config", cfg_path, "INI-style config file");
    cmd_cal->add_option("--fields", fields, "Number of probe fields");
    cmd_cal->add_option("--seed", seed, "Probe seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);  // prints help, exits 0
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (app.got_subcommand("train")) {
            RunConfig cfg = cfg_path.empty() ? RunConfig{} : load_config(cfg_path);
            if (opt_seed->count()) cfg.master_seed = seed;
            if (opt_out->count()) cfg.output_dir = out_dir;
            if (opt_eps->count()) cfg.ppo.total_episodes = episodes;
            if (opt_reward->count())
                cfg.reward.mode = reward_mode == "r2" ? RewardMode::R2_SymmetricPlusCentroid
                                                      : RewardMode::R1_SymmetricRows;
            if (opt_workers->count()) cfg.workers = workers;
            validate(cfg);
            const TrainResult res = train(cfg);
            std::printf("trained %d episodes in %d batches (seed %llu)\n",
                        cfg.ppo.total_episodes, res.batches,
                        static_cast<unsigned long long>(cfg.master_seed));
            std::printf("final moving_avg_100: %.6f\n", res.moving_avg.back());
            std::printf("final checkpoint: %s\n", res.final_checkpoint.c_str());
            std::printf("log: %s/training_log.csv\n", cfg.output_dir.c_str());
            return 0;
        }
        if (app.got_subcommand("eval")) {
            const EvalStats st = evaluate(ckpt_path, eval_episodes, seed);
            std::printf("episodes: %d\nmean: %.6f\nstd: %.6f\nmin: %.6f\nmax: %.6f\n", st.episodes,
                        st.mean, st.stddev, st.min, st.max);
            return 0;
        }
        if (app.got_subcommand("rollout")) {
            const RolloutResult r =
                rollout(ckpt_path, seed, render, out_dir.empty() ? "." : out_dir);
            std::printf("steps: %d\nscore: %.6f\n", r.steps, r.score);
            if (r.has_centroid) std::printf("terminal_c_y: %.6f\n", r.terminal_c_y);
            std::printf("output: %s\n", r.dir.c_str());
            return 0;
        }
        // calibrate
        RunConfig cfg = cfg_path.empty() ? RunConfig{} : load_config(cfg_path);
        const CalibrationResult cal = calibrate(cfg.field, cfg.solver, cfg.reward, fields, seed);
        std::printf("median fill time: %.1f time units over %d fields\n", cal.median_time_units,
                    fields);
        std::printf("substeps_per_action = %d\n", cal.substeps_per_action);
        std::printf("implied median episode length: %.1f control steps\n",
                    cal.median_control_steps);
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 1;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return 1;
    } catch (const SolverError& e) {
        std::cerr << "solver error: " << e.what() << '\n';
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return 2;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
}
