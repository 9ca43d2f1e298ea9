#include "flowsync/env.hpp"

#include <algorithm>
#include <cmath>

#include "flowsync/errors.hpp"

namespace flowsync {

void validate(const RewardConfig& cfg) {
    if (!(cfg.alpha > 0.0)) throw ConfigError("reward.alpha must be > 0");
    if (cfg.pair_count < 1 || cfg.pair_count > kSensorRows / 2)
        throw ConfigError("reward.pair_count must be in [1,7]");
    if (cfg.step_cap < 1) throw ConfigError("reward.step_cap must be >= 1");
}

std::array<int, 2> sensor_cell(int sr, int sc, int grid_height, int grid_width) {
    const int r = static_cast<int>((sr + 0.5) * grid_height / kSensorRows);
    const int c = static_cast<int>((sc + 0.5) * grid_width / kSensorCols);
    return {r, c};
}

bool termination_check(const Observation& obs) {
    const int central = (kSensorRows - 1) / 2;  // row 7
    for (int sc = 0; sc < kSensorCols; ++sc)
        if (!obs[static_cast<size_t>(central) * kSensorCols + sc]) return false;
    return true;
}

Centroid compute_centroid(const Observation& obs) {
    double sum_r = 0.0, sum_c = 0.0;
    int n = 0;
    for (int sr = 0; sr < kSensorRows; ++sr)
        for (int sc = 0; sc < kSensorCols; ++sc)
            if (obs[static_cast<size_t>(sr) * kSensorCols + sc]) {
                sum_r += sr;
                sum_c += sc;
                ++n;
            }
    if (n == 0) throw UsageError("centroid undefined: no active sensors");
    return {sum_c / n, sum_r / n};
}

Environment::Environment(FieldConfig field_cfg, SolverConfig solver_cfg, RewardConfig reward_cfg)
    : field_cfg_(field_cfg), solver_cfg_(solver_cfg), reward_cfg_(reward_cfg) {
    validate(field_cfg_);
    validate(solver_cfg_);
    validate(reward_cfg_);
    const int H = field_cfg_.grid_height, W = field_cfg_.grid_width;
    vent_rows_ = {H / 2 - 1, H / 2};
    sensor_cells_.reserve(kObservationSize);
    for (int sr = 0; sr < kSensorRows; ++sr)
        for (int sc = 0; sc < kSensorCols; ++sc) sensor_cells_.push_back(sensor_cell(sr, sc, H, W));
}

Observation Environment::reset(uint64_t seed) {
    field_ = generate_field(seed, field_cfg_);
    state_ = FlowState(field_cfg_.grid_height, field_cfg_.grid_width);
    obs_.assign(kObservationSize, 0);
    row_completed_step_.fill(-1);
    pair_rewarded_.assign(static_cast<size_t>(reward_cfg_.pair_count), 0);
    completed_pairs_ = 0;
    steps_ = 0;
    done_ = false;
    capped_ = false;
    started_ = true;
    terminal_c_y_ = kCenterRow;
    return obs_;
}

void Environment::refresh_observation(StepInfo* info) {
    for (int i = 0; i < kObservationSize; ++i) {
        if (obs_[static_cast<size_t>(i)]) continue;
        const auto [r, c] = sensor_cells_[static_cast<size_t>(i)];
        if (state_.fill.at(r, c) >= kSensorThreshold) {
            obs_[static_cast<size_t>(i)] = 1;
            if (info) info->newly_activated.push_back(i);
        }
    }
}

StepResult Environment::step(GateAction action) {
    if (!started_) throw UsageError("step called before reset");
    if (done_) throw UsageError("step called on a finished episode");

    StepResult res;
    ++steps_;
    res.info.step = steps_;
    res.info.flow = sim_step(field_, state_, action, solver_cfg_, vent_rows_);
    refresh_observation(&res.info);

    // A sensor row is complete when all 6 of its sensors are active.
    for (int sr = 0; sr < kSensorRows; ++sr) {
        if (row_completed_step_[static_cast<size_t>(sr)] >= 0) continue;
        bool complete = true;
        for (int sc = 0; sc < kSensorCols; ++sc)
            complete = complete && obs_[static_cast<size_t>(sr) * kSensorCols + sc];
        if (complete) row_completed_step_[static_cast<size_t>(sr)] = steps_;
    }

    int new_pairs = 0;
    for (int p = 0; p < reward_cfg_.pair_count; ++p) {
        if (pair_rewarded_[static_cast<size_t>(p)]) continue;
        const int top = row_completed_step_[static_cast<size_t>(p)];
        const int bottom = row_completed_step_[static_cast<size_t>(kSensorRows - 1 - p)];
        if (top < 0 || bottom < 0) continue;
        const bool completes_now = std::max(top, bottom) == steps_;
        const bool rewardable =
            reward_cfg_.strict_simultaneous ? (top == steps_ && bottom == steps_) : completes_now;
        if (rewardable) {
            pair_rewarded_[static_cast<size_t>(p)] = 1;
            ++new_pairs;
        }
    }
    completed_pairs_ += new_pairs;
    res.reward = static_cast<double>(new_pairs) / reward_cfg_.pair_count;

    res.info.active_count = static_cast<int>(
        std::count(obs_.begin(), obs_.end(), static_cast<uint8_t>(1)));
    if (res.info.active_count > 0) {
        res.info.centroid = compute_centroid(obs_);
        res.info.has_centroid = true;
    }

    if (termination_check(obs_)) {
        done_ = true;
        terminal_c_y_ = compute_centroid(obs_).c_y;
        if (reward_cfg_.mode == RewardMode::R2_SymmetricPlusCentroid)
            res.reward -= reward_cfg_.alpha * std::abs(terminal_c_y_ - kCenterRow) / kCenterRow;
    } else if (steps_ >= reward_cfg_.step_cap) {
        done_ = true;
        capped_ = true;
    }

    res.obs = obs_;
    res.done = done_;
    return res;
}

double episode_score(int completed_pairs, const RewardConfig& cfg, double terminal_c_y) {
    double s = static_cast<double>(completed_pairs) / cfg.pair_count;
    if (cfg.mode == RewardMode::R2_SymmetricPlusCentroid)
        s -= cfg.alpha * std::abs(terminal_c_y - kCenterRow) / kCenterRow;
    return std::clamp(s, 0.0, 1.0);
}

double Environment::episode_score() const {
    if (capped_) return 0.0;
    if (!done_) {  // running score: no terminal penalty yet
        return std::clamp(static_cast<double>(completed_pairs_) / reward_cfg_.pair_count, 0.0,
                          1.0);
    }
    return flowsync::episode_score(completed_pairs_, reward_cfg_, terminal_c_y_);
}

}  // namespace flowsync
