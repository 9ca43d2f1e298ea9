#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "flowsync/field.hpp"
#include "flowsync/flow.hpp"

namespace flowsync {

inline constexpr int kSensorRows = 15;
inline constexpr int kSensorCols = 6;
inline constexpr int kObservationSize = kSensorRows * kSensorCols;  // 90
inline constexpr double kSensorThreshold = 0.5;
// Vertical sensor-grid coordinate of the centerline (row 7 of 0..14).
inline constexpr double kCenterRow = (kSensorRows - 1) / 2.0;

enum class RewardMode { R1_SymmetricRows, R2_SymmetricPlusCentroid };

struct RewardConfig {
    RewardMode mode = RewardMode::R1_SymmetricRows;
    double alpha = 2.0;  // terminal centroid penalty per half-height of deviation
    int pair_count = 7;  // symmetric sensor-row pairs around the center row
    // When set, a pair is rewarded only if both of its rows complete during
    // the same control step; by default a pair is rewarded on the step its
    // second row completes.
    bool strict_simultaneous = false;
    int step_cap = 700;  // episodes hitting the cap score 0
};

// Throws ConfigError naming the offending field.
void validate(const RewardConfig& cfg);

using Observation = std::vector<uint8_t>;  // 90 bits, sensor (r,c) at r*6+c

struct Centroid {
    double c_x = 0.0;
    double c_y = 0.0;
};

struct StepInfo {
    int step = 0;  // 1-based control step index
    std::vector<int> newly_activated;
    bool has_centroid = false;
    Centroid centroid;
    int active_count = 0;
    SubstepReport flow;
};

struct StepResult {
    Observation obs;
    double reward = 0.0;
    bool done = false;
    StepInfo info;
};

// Cell coordinates of sensor (sr, sc) on an H x W grid (uniform placement).
std::array<int, 2> sensor_cell(int sr, int sc, int grid_height, int grid_width);

// True iff all 6 sensors of the central band row are active.
bool termination_check(const Observation& obs);

// Mean sensor-grid coordinates of the active sensors.
// Throws UsageError when no sensor is active.
Centroid compute_centroid(const Observation& obs);

// Normalized episode score in [0,1]: completed pairs over pair_count, minus
// the terminal centroid-deviation penalty in the centroid-penalty mode.
double episode_score(int completed_pairs, const RewardConfig& cfg, double terminal_c_y);

// Partially observable control environment: a fresh random mould per
// episode, three gate actions, 90 binary sensors, rewards for synchronised
// front arrival.
class Environment {
   public:
    Environment(FieldConfig field_cfg, SolverConfig solver_cfg, RewardConfig reward_cfg);

    Observation reset(uint64_t seed);
    StepResult step(GateAction action);  // UsageError once the episode is done

    bool done() const { return done_; }
    int steps_taken() const { return steps_; }
    // Cumulative normalized reward clamped to [0,1]; 0 for capped episodes.
    double episode_score() const;
    int completed_pairs() const { return completed_pairs_; }
    bool hit_step_cap() const { return capped_; }

    const Observation& observation() const { return obs_; }
    const PermeabilityField& field() const { return field_; }
    const FlowState& flow_state() const { return state_; }
    const std::vector<int>& vent_rows() const { return vent_rows_; }

   private:
    FieldConfig field_cfg_;
    SolverConfig solver_cfg_;
    RewardConfig reward_cfg_;
    std::vector<int> vent_rows_;
    std::vector<std::array<int, 2>> sensor_cells_;

    PermeabilityField field_;
    FlowState state_;
    Observation obs_;
    std::array<int, kSensorRows> row_completed_step_{};  // -1 until a row completes
    std::vector<uint8_t> pair_rewarded_;
    int completed_pairs_ = 0;
    int steps_ = 0;
    bool done_ = false;
    bool capped_ = false;
    bool started_ = false;
    double terminal_c_y_ = kCenterRow;

    void refresh_observation(StepInfo* info);
};

}  // namespace flowsync
