#include "flowsync/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <thread>
#include <vector>

#include "flowsync/errors.hpp"

namespace flowsync {

namespace fs = std::filesystem;

namespace {

// Seed-derivation salts: one stream per purpose so no two consumers ever
// share a generator state.
constexpr uint64_t kEnvSalt = 0;
constexpr uint64_t kActionSalt = 1;
constexpr uint64_t kEvalSalt = 2;
constexpr uint64_t kRolloutSalt = 3;
constexpr uint64_t kCalibSalt = 4;
constexpr uint64_t kInitSalt = 10;
constexpr uint64_t kUpdateSalt = 11;

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

template <typename T>
void write_pod(std::ostream& out, const T& value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in) throw IoError("truncated checkpoint");
    return value;
}

void write_string(std::ostream& out, const std::string& s) {
    write_pod(out, static_cast<uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
    const uint32_t n = read_pod<uint32_t>(in);
    if (n > 4096) throw IoError("corrupt checkpoint: oversized string");
    std::string s(n, '\0');
    in.read(s.data(), n);
    if (!in) throw IoError("truncated checkpoint");
    return s;
}

void write_run_config(std::ostream& o, const RunConfig& c) {
    write_pod(o, static_cast<int32_t>(c.field.grid_width));
    write_pod(o, static_cast<int32_t>(c.field.grid_height));
    write_pod(o, c.field.base_perm);
    write_pod(o, c.field.lower_upper_ratio);
    write_pod(o, static_cast<int32_t>(c.field.correlation_length));
    write_pod(o, c.field.log_sigma);
    write_pod(o, static_cast<int32_t>(c.field.racetrack_count));
    write_pod(o, c.field.racetrack_multiplier);
    write_pod(o, static_cast<int32_t>(c.field.racetrack_min_length));
    write_pod(o, static_cast<int32_t>(c.field.racetrack_max_length));

    write_pod(o, c.solver.p_inlet);
    write_pod(o, c.solver.p_front);
    write_pod(o, c.solver.sor_omega);
    write_pod(o, c.solver.sor_tol);
    write_pod(o, static_cast<int32_t>(c.solver.sor_max_iters));
    write_pod(o, static_cast<int32_t>(c.solver.substeps_per_action));
    write_pod(o, c.solver.cfl);

    write_pod(o, static_cast<uint8_t>(c.reward.mode == RewardMode::R2_SymmetricPlusCentroid));
    write_pod(o, c.reward.alpha);
    write_pod(o, static_cast<int32_t>(c.reward.pair_count));
    write_pod(o, static_cast<uint8_t>(c.reward.strict_simultaneous ? 1 : 0));
    write_pod(o, static_cast<int32_t>(c.reward.step_cap));

    write_pod(o, c.ppo.gamma);
    write_pod(o, c.ppo.lambda);
    write_pod(o, c.ppo.clip_eps);
    write_pod(o, static_cast<int32_t>(c.ppo.epochs_per_batch));
    write_pod(o, static_cast<int32_t>(c.ppo.episodes_per_batch));
    write_pod(o, static_cast<int32_t>(c.ppo.total_episodes));
    write_pod(o, c.ppo.value_coef);
    write_pod(o, c.ppo.entropy_coef);
    write_pod(o, static_cast<int32_t>(c.ppo.minibatch_size));
    write_pod(o, static_cast<uint8_t>(c.ppo.advantage_normalization ? 1 : 0));
    write_pod(o, c.ppo.lr);

    write_pod(o, c.master_seed);
    write_string(o, c.output_dir);
    write_pod(o, static_cast<int32_t>(c.checkpoint_every));
    write_pod(o, static_cast<int32_t>(c.eval_episodes));
    write_pod(o, static_cast<int32_t>(c.workers));
}

RunConfig read_run_config(std::istream& i) {
    RunConfig c;
    c.field.grid_width = read_pod<int32_t>(i);
    c.field.grid_height = read_pod<int32_t>(i);
    c.field.base_perm = read_pod<double>(i);
    c.field.lower_upper_ratio = read_pod<double>(i);
    c.field.correlation_length = read_pod<int32_t>(i);
    c.field.log_sigma = read_pod<double>(i);
    c.field.racetrack_count = read_pod<int32_t>(i);
    c.field.racetrack_multiplier = read_pod<double>(i);
    c.field.racetrack_min_length = read_pod<int32_t>(i);
    c.field.racetrack_max_length = read_pod<int32_t>(i);

    c.solver.p_inlet = read_pod<double>(i);
    c.solver.p_front = read_pod<double>(i);
    c.solver.sor_omega = read_pod<double>(i);
    c.solver.sor_tol = read_pod<double>(i);
    c.solver.sor_max_iters = read_pod<int32_t>(i);
    c.solver.substeps_per_action = read_pod<int32_t>(i);
    c.solver.cfl = read_pod<double>(i);

    c.reward.mode = read_pod<uint8_t>(i) ? RewardMode::R2_SymmetricPlusCentroid
                                         : RewardMode::R1_SymmetricRows;
    c.reward.alpha = read_pod<double>(i);
    c.reward.pair_count = read_pod<int32_t>(i);
    c.reward.strict_simultaneous = read_pod<uint8_t>(i) != 0;
    c.reward.step_cap = read_pod<int32_t>(i);

    c.ppo.gamma = read_pod<double>(i);
    c.ppo.lambda = read_pod<double>(i);
    c.ppo.clip_eps = read_pod<double>(i);
    c.ppo.epochs_per_batch = read_pod<int32_t>(i);
    c.ppo.episodes_per_batch = read_pod<int32_t>(i);
    c.ppo.total_episodes = read_pod<int32_t>(i);
    c.ppo.value_coef = read_pod<double>(i);
    c.ppo.entropy_coef = read_pod<double>(i);
    c.ppo.minibatch_size = read_pod<int32_t>(i);
    c.ppo.advantage_normalization = read_pod<uint8_t>(i) != 0;
    c.ppo.lr = read_pod<double>(i);

    c.master_seed = read_pod<uint64_t>(i);
    c.output_dir = read_string(i);
    c.checkpoint_every = read_pod<int32_t>(i);
    c.eval_episodes = read_pod<int32_t>(i);
    c.workers = read_pod<int32_t>(i);
    return c;
}

constexpr uint32_t kCkptMagic = 0x4b435346u;  // "FSCK"
constexpr uint32_t kCkptVersion = 1;

struct EpisodeOutcome {
    Trajectory traj;
    double score = 0.0;
    int steps = 0;
    bool failed = false;
    double wall_seconds = 0.0;
};

// One sampled training episode on a fresh random field. Solver breakdowns
// abort the episode: it scores 0 and contributes no trajectory.
EpisodeOutcome run_training_episode(const RunConfig& cfg, const Mlp& policy, const Mlp& value,
                                    uint64_t episode_index, MlpWorkspace& wp, MlpWorkspace& wv) {
    const auto t0 = std::chrono::steady_clock::now();
    EpisodeOutcome out;
    Environment env(cfg.field, cfg.solver, cfg.reward);
    Rng arng(derive_seed(cfg.master_seed, episode_index, kActionSalt));
    try {
        Observation obs = env.reset(derive_seed(cfg.master_seed, episode_index, kEnvSalt));
        while (!env.done()) {
            const CategoricalDist dist = policy_forward(policy, obs, wp);
            const ActionSample a = sample_action(dist, arng);
            const double v = value_forward(value, obs, wv);
            out.traj.observations.push_back(obs);
            out.traj.actions.push_back(a.index);
            out.traj.log_probs_old.push_back(a.log_prob);
            out.traj.values_old.push_back(v);
            StepResult r = env.step(static_cast<GateAction>(a.index));
            out.traj.rewards.push_back(r.reward);
            obs = std::move(r.obs);
        }
        out.traj.terminal = !env.hit_step_cap();
        out.score = env.episode_score();
        out.traj.score = out.score;
    } catch (const SolverError&) {
        out.failed = true;
        out.traj = Trajectory{};
        out.score = 0.0;
    }
    out.steps = env.steps_taken();
    out.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

int greedy_action(const CategoricalDist& dist) {
    int best = 0;
    for (size_t i = 1; i < dist.probs.size(); ++i)
        if (dist.probs[i] > dist.probs[static_cast<size_t>(best)]) best = static_cast<int>(i);
    return best;
}

}  // namespace

std::vector<double> moving_average(const std::vector<double>& scores, int window) {
    if (scores.empty()) throw UsageError("cannot average an empty series");
    if (window < 1) throw UsageError("averaging window must be at least 1");
    std::vector<double> out(scores.size());
    for (size_t i = 0; i < scores.size(); ++i) {
        const size_t w = std::min(static_cast<size_t>(window), i + 1);
        double s = 0.0;
        for (size_t j = i + 1 - w; j <= i; ++j) s += scores[j];
        out[i] = s / static_cast<double>(w);
    }
    return out;
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open checkpoint '" + path + "' for writing");
    write_pod(out, kCkptMagic);
    write_pod(out, kCkptVersion);
    write_run_config(out, ck.cfg);
    write_pod(out, ck.batch_index);
    write_pod(out, ck.episodes_done);
    save_mlp(out, ck.policy);
    save_mlp(out, ck.value);
    if (!out) throw IoError("failed to write checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint '" + path + "'");
    try {
        if (read_pod<uint32_t>(in) != kCkptMagic)
            throw IoError("'" + path + "' is not a checkpoint file");
        if (read_pod<uint32_t>(in) != kCkptVersion)
            throw IoError("'" + path + "' has an unsupported checkpoint version");
        Checkpoint ck;
        ck.cfg = read_run_config(in);
        ck.batch_index = read_pod<int64_t>(in);
        ck.episodes_done = read_pod<int64_t>(in);
        ck.policy = load_mlp(in);
        ck.value = load_mlp(in);
        validate(ck.cfg);
        return ck;
    } catch (const ConfigError& e) {
        throw IoError("checkpoint '" + path + "' holds an invalid configuration: " + e.what());
    }
}

TrainResult train(const RunConfig& cfg) {
    validate(cfg);
    const fs::path out_dir(cfg.output_dir);
    const fs::path ckpt_dir = out_dir / "checkpoints";
    std::error_code ec;
    fs::create_directories(ckpt_dir, ec);
    if (ec)
        throw IoError("cannot create output directory '" + ckpt_dir.string() + "': " + ec.message());

    const std::string log_path = (out_dir / "training_log.csv").string();
    std::ofstream log_file(log_path, std::ios::binary);
    if (!log_file) throw IoError("cannot open '" + log_path + "' for writing");
    const std::string timing_path = (out_dir / "timings.csv").string();
    std::ofstream timing_file(timing_path, std::ios::binary);
    if (!timing_file) throw IoError("cannot open '" + timing_path + "' for writing");
    log_file << "episode,score,moving_avg_100,policy_loss,value_loss,entropy,clip_fraction,"
                "approx_kl\n";
    timing_file << "episode,wall_seconds\n";

    Rng init_rng(derive_seed(cfg.master_seed, 0, kInitSalt));
    TrainResult result;
    result.policy = make_mlp({kObservationSize, 64, 64, 3}, true, init_rng, std::sqrt(2.0), 0.01);
    result.value = make_mlp({kObservationSize, 64, 64, 1}, false, init_rng, std::sqrt(2.0), 1.0);
    Rng update_rng(derive_seed(cfg.master_seed, 0, kUpdateSalt));

    const int total = cfg.ppo.total_episodes;
    int done_eps = 0;
    int batch_index = 0;
    while (done_eps < total) {
        const int count = std::min(cfg.ppo.episodes_per_batch, total - done_eps);
        std::vector<EpisodeOutcome> outcomes(static_cast<size_t>(count));
        std::vector<std::exception_ptr> errors(static_cast<size_t>(cfg.workers));
        auto worker = [&](int wid) {
            try {
                MlpWorkspace wp, wv;
                for (int i = wid; i < count; i += cfg.workers)
                    outcomes[static_cast<size_t>(i)] =
                        run_training_episode(cfg, result.policy, result.value,
                                             static_cast<uint64_t>(done_eps + i + 1), wp, wv);
            } catch (...) {
                errors[static_cast<size_t>(wid)] = std::current_exception();
            }
        };
        if (cfg.workers == 1) {
            worker(0);
        } else {
            std::vector<std::thread> pool;
            for (int w = 1; w < cfg.workers; ++w) pool.emplace_back(worker, w);
            worker(0);
            for (auto& t : pool) t.join();
        }
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
        ++batch_index;

        std::vector<Trajectory> batch;
        for (auto& o : outcomes)
            if (!o.failed) batch.push_back(std::move(o.traj));
        bool updated = false;
        UpdateStats stats;
        if (!batch.empty()) {
            stats = ppo_update(result.policy, result.value, batch, cfg.ppo, update_rng);
            updated = true;
        }

        for (int i = 0; i < count; ++i) {
            const EpisodeOutcome& o = outcomes[static_cast<size_t>(i)];
            result.scores.push_back(o.score);
            const size_t n = result.scores.size();
            const size_t w = std::min<size_t>(100, n);
            double s = 0.0;
            for (size_t j = n - w; j < n; ++j) s += result.scores[j];
            const double ma = s / static_cast<double>(w);
            result.moving_avg.push_back(ma);
            const int ep = done_eps + i + 1;
            log_file << ep << ',' << fmt(o.score) << ',' << fmt(ma);
            if (i == count - 1 && updated)
                log_file << ',' << fmt(stats.policy_loss) << ',' << fmt(stats.value_loss) << ','
                         << fmt(stats.entropy) << ',' << fmt(stats.clip_fraction) << ','
                         << fmt(stats.approx_kl) << '\n';
            else
                log_file << ",,,,,\n";
            timing_file << ep << ',' << fmt(o.wall_seconds) << '\n';
        }
        done_eps += count;

        if (batch_index % cfg.checkpoint_every == 0 || done_eps >= total) {
            const std::string path =
                (ckpt_dir / ("ckpt_" + std::to_string(batch_index) + ".bin")).string();
            save_checkpoint(path, Checkpoint{cfg, batch_index, done_eps, result.policy,
                                             result.value});
            result.final_checkpoint = path;
        }
    }
    result.batches = batch_index;
    log_file.flush();
    timing_file.flush();
    if (!log_file) throw IoError("failed to write '" + log_path + "'");
    if (!timing_file) throw IoError("failed to write '" + timing_path + "'");
    return result;
}

EvalStats evaluate_nets(const Mlp& policy, const RunConfig& cfg, int n_episodes, uint64_t seed) {
    if (n_episodes < 1) throw UsageError("evaluation needs at least one episode");
    Environment env(cfg.field, cfg.solver, cfg.reward);
    MlpWorkspace ws;
    EvalStats st;
    st.episodes = n_episodes;
    std::vector<double> scores;
    scores.reserve(static_cast<size_t>(n_episodes));
    for (int e = 0; e < n_episodes; ++e) {
        double score = 0.0;
        try {
            Observation obs = env.reset(derive_seed(seed, static_cast<uint64_t>(e), kEvalSalt));
            while (!env.done()) {
                const int a = greedy_action(policy_forward(policy, obs, ws));
                obs = env.step(static_cast<GateAction>(a)).obs;
            }
            score = env.episode_score();
        } catch (const SolverError&) {
            score = 0.0;
        }
        scores.push_back(score);
    }
    st.min = scores[0];
    st.max = scores[0];
    double sum = 0.0;
    for (double s : scores) {
        sum += s;
        st.min = std::min(st.min, s);
        st.max = std::max(st.max, s);
    }
    st.mean = sum / static_cast<double>(n_episodes);
    double var = 0.0;
    for (double s : scores) var += (s - st.mean) * (s - st.mean);
    st.stddev = std::sqrt(var / static_cast<double>(n_episodes));
    return st;
}

EvalStats evaluate(const std::string& checkpoint_path, int n_episodes, uint64_t seed) {
    const Checkpoint ck = load_checkpoint(checkpoint_path);
    return evaluate_nets(ck.policy, ck.cfg, n_episodes, seed);
}

RolloutResult rollout(const std::string& checkpoint_path, uint64_t seed, bool render,
                      const std::string& out_dir) {
    const Checkpoint ck = load_checkpoint(checkpoint_path);
    const fs::path dir = fs::path(out_dir) / ("rollout_" + std::to_string(seed));
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create rollout directory '" + dir.string() + "': " + ec.message());
    const std::string trace_path = (dir / "trace.csv").string();
    std::ofstream trace(trace_path, std::ios::binary);
    if (!trace) throw IoError("cannot open '" + trace_path + "' for writing");
    trace << "step,action,reward,done,c_y,active_count\n";

    Environment env(ck.cfg.field, ck.cfg.solver, ck.cfg.reward);
    MlpWorkspace ws;
    Observation obs = env.reset(seed);
    // Rollouts draw from the policy distribution: the binary sensor map freezes
    // between activations, so a deterministic argmax can pin one gate open and
    // starve the opposite front forever. Sampling is seeded, hence reproducible.
    Rng arng(derive_seed(seed, 0, kRolloutSalt));
    RolloutResult result;
    result.dir = dir.string();
    while (!env.done()) {
        const int a = sample_action(policy_forward(ck.policy, obs, ws), arng).index;
        const StepResult r = env.step(static_cast<GateAction>(a));
        ++result.steps;
        trace << r.info.step << ',' << to_string(static_cast<GateAction>(a)) << ','
              << fmt(r.reward) << ',' << (r.done ? 1 : 0) << ',';
        if (r.info.has_centroid) trace << fmt(r.info.centroid.c_y);
        trace << ',' << r.info.active_count << '\n';
        if (render) {
            char name[32];
            std::snprintf(name, sizeof name, "frame_%04d.ppm", r.info.step);
            render_frame(env.field(), env.flow_state(), r.obs, r.info.has_centroid,
                         r.info.centroid.c_y, (dir / name).string());
        }
        result.has_centroid = r.info.has_centroid;
        result.terminal_c_y = r.info.centroid.c_y;
        obs = r.obs;
    }
    result.score = env.episode_score();
    trace.flush();
    if (!trace) throw IoError("failed to write '" + trace_path + "'");
    return result;
}

CalibrationResult calibrate(const FieldConfig& field_cfg, SolverConfig solver_cfg,
                            const RewardConfig& reward_cfg, int n_fields, uint64_t seed) {
    if (n_fields < 1) throw UsageError("calibration needs at least one field");
    solver_cfg.substeps_per_action = 1;  // probe raw fill dynamics
    RewardConfig rc = reward_cfg;
    rc.step_cap = 1000000;  // never truncate a probe episode
    Environment env(field_cfg, solver_cfg, rc);
    std::vector<double> lengths;
    lengths.reserve(static_cast<size_t>(n_fields));
    for (int i = 0; i < n_fields; ++i) {
        env.reset(derive_seed(seed, static_cast<uint64_t>(i), kCalibSalt));
        while (!env.done()) env.step(GateAction::Both);
        lengths.push_back(static_cast<double>(env.steps_taken()));
    }
    std::sort(lengths.begin(), lengths.end());
    const size_t n = lengths.size();
    const double median =
        n % 2 == 1 ? lengths[n / 2] : 0.5 * (lengths[n / 2 - 1] + lengths[n / 2]);
    CalibrationResult result;
    result.median_time_units = median;
    result.substeps_per_action = std::max(1, static_cast<int>(std::lround(median / 70.0)));
    result.median_control_steps = median / result.substeps_per_action;
    return result;
}

}  // namespace flowsync
