#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "flowsync/grid.hpp"

namespace flowsync {

// Geometry and statistics of the randomized permeability field.
struct FieldConfig {
    int grid_width = 24;
    int grid_height = 60;
    double base_perm = 1.0;
    double lower_upper_ratio = 2.0;  // mean(lower half) / mean(upper half)
    int correlation_length = 4;      // cells; 0 disables smoothing
    double log_sigma = 0.3;          // std-dev of white log-permeability noise
    int racetrack_count = 3;
    double racetrack_multiplier = 8.0;
    int racetrack_min_length = 8;
    int racetrack_max_length = 30;
};

// Throws ConfigError naming the offending field.
void validate(const FieldConfig& cfg);

enum class Orientation { Horizontal, Vertical, DiagonalDown, DiagonalUp };

const char* to_string(Orientation o);

struct Racetrack {
    int start_row = 0;
    int start_col = 0;
    Orientation orientation = Orientation::Horizontal;
    int length = 0;                        // drawn length before boundary clipping
    std::vector<std::array<int, 2>> cells; // cells actually carved
};

struct PermeabilityField {
    Grid<double> k;
    std::vector<Racetrack> racetracks;

    int height() const { return k.rows; }
    int width() const { return k.cols; }
    // First row of the lower (high-permeability) half.
    int lower_half_start() const { return k.rows / 2; }
};

// Uniform field helper for tests and hand-built scenarios.
PermeabilityField make_uniform_field(int height, int width, double k);

// Full generation pipeline: correlated log-normal noise, exact lower/upper
// mean-ratio scaling, then racetrack carving. Deterministic in (seed, cfg).
PermeabilityField generate_field(uint64_t seed, const FieldConfig& cfg);

// Multiplies permeability along `cfg.racetrack_count` random straight
// segments, clipped at the domain boundary. Appends metadata to the field.
void carve_racetracks(PermeabilityField& field, uint64_t seed, const FieldConfig& cfg);

// Applies one segment; returns the carved cells. Used by carve_racetracks
// and directly by tests that need a deterministic geometry.
std::vector<std::array<int, 2>> apply_racetrack(PermeabilityField& field, Racetrack& track,
                                                double multiplier);

// Row-major CSV, one grid row per line.
void write_grid_csv(const Grid<double>& g, const std::string& path);

}  // namespace flowsync
