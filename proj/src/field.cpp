#include "flowsync/field.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "flowsync/errors.hpp"
#include "flowsync/rng.hpp"

namespace flowsync {

void validate(const FieldConfig& cfg) {
    if (cfg.grid_width < 1) throw ConfigError("field.grid_width must be > 0");
    if (cfg.grid_height < 1) throw ConfigError("field.grid_height must be > 0");
    if (cfg.grid_height % 2 != 0) throw ConfigError("field.grid_height must be even");
    if (!(cfg.base_perm > 0.0)) throw ConfigError("field.base_perm must be > 0");
    if (!(cfg.lower_upper_ratio > 1.0)) throw ConfigError("field.lower_upper_ratio must be > 1");
    if (cfg.correlation_length < 0) throw ConfigError("field.correlation_length must be >= 0");
    if (!(cfg.log_sigma >= 0.0)) throw ConfigError("field.log_sigma must be >= 0");
    if (cfg.racetrack_count < 0) throw ConfigError("field.racetrack_count must be >= 0");
    if (!(cfg.racetrack_multiplier > 1.0))
        throw ConfigError("field.racetrack_multiplier must be > 1");
    if (cfg.racetrack_min_length < 1) throw ConfigError("field.racetrack_min_length must be >= 1");
    if (cfg.racetrack_max_length < cfg.racetrack_min_length)
        throw ConfigError("field.racetrack_max_length must be >= field.racetrack_min_length");
}

const char* to_string(Orientation o) {
    switch (o) {
        case Orientation::Horizontal: return "horizontal";
        case Orientation::Vertical: return "vertical";
        case Orientation::DiagonalDown: return "diagonal_down";
        case Orientation::DiagonalUp: return "diagonal_up";
    }
    return "?";
}

PermeabilityField make_uniform_field(int height, int width, double k) {
    PermeabilityField f;
    f.k = Grid<double>(height, width, k);
    return f;
}

namespace {

// Normalized Gaussian kernel, truncated at 3 sigma.
std::vector<double> gaussian_kernel(int scale) {
    int radius = 3 * scale;
    std::vector<double> w(static_cast<size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        double x = static_cast<double>(i) / scale;
        double v = std::exp(-0.5 * x * x);
        w[static_cast<size_t>(i + radius)] = v;
        sum += v;
    }
    for (double& v : w) v /= sum;
    return w;
}

// Separable smoothing with per-sample renormalization at the boundary, so
// the smoothed field stays an unbiased average of the white noise.
Grid<double> smooth(const Grid<double>& src, int scale) {
    if (scale <= 0) return src;
    const std::vector<double> w = gaussian_kernel(scale);
    const int radius = (static_cast<int>(w.size()) - 1) / 2;

    Grid<double> tmp(src.rows, src.cols, 0.0);
    for (int r = 0; r < src.rows; ++r) {
        for (int c = 0; c < src.cols; ++c) {
            double acc = 0.0, wsum = 0.0;
            for (int d = -radius; d <= radius; ++d) {
                int cc = c + d;
                if (cc < 0 || cc >= src.cols) continue;
                double wd = w[static_cast<size_t>(d + radius)];
                acc += wd * src.at(r, cc);
                wsum += wd;
            }
            tmp.at(r, c) = acc / wsum;
        }
    }
    Grid<double> out(src.rows, src.cols, 0.0);
    for (int r = 0; r < src.rows; ++r) {
        for (int c = 0; c < src.cols; ++c) {
            double acc = 0.0, wsum = 0.0;
            for (int d = -radius; d <= radius; ++d) {
                int rr = r + d;
                if (rr < 0 || rr >= src.rows) continue;
                double wd = w[static_cast<size_t>(d + radius)];
                acc += wd * tmp.at(rr, c);
                wsum += wd;
            }
            out.at(r, c) = acc / wsum;
        }
    }
    return out;
}

double half_mean(const Grid<double>& k, int row_begin, int row_end) {
    double sum = 0.0;
    for (int r = row_begin; r < row_end; ++r)
        for (int c = 0; c < k.cols; ++c) sum += k.at(r, c);
    return sum / (static_cast<double>(row_end - row_begin) * k.cols);
}

void scale_lower_to_ratio(Grid<double>& k, double ratio) {
    const int mid = k.rows / 2;
    const double mean_upper = half_mean(k, 0, mid);
    const double mean_lower = half_mean(k, mid, k.rows);
    const double factor = ratio * mean_upper / mean_lower;
    for (int r = mid; r < k.rows; ++r)
        for (int c = 0; c < k.cols; ++c) k.at(r, c) *= factor;
}

}  // namespace

std::vector<std::array<int, 2>> apply_racetrack(PermeabilityField& field, Racetrack& track,
                                                double multiplier) {
    int dr = 0, dc = 0;
    switch (track.orientation) {
        case Orientation::Horizontal: dr = 0; dc = 1; break;
        case Orientation::Vertical: dr = 1; dc = 0; break;
        case Orientation::DiagonalDown: dr = 1; dc = 1; break;
        case Orientation::DiagonalUp: dr = -1; dc = 1; break;
    }
    std::vector<std::array<int, 2>> cells;
    int r = track.start_row, c = track.start_col;
    for (int i = 0; i < track.length; ++i) {
        if (!field.k.in_bounds(r, c)) break;  // clip at the domain boundary
        field.k.at(r, c) *= multiplier;
        cells.push_back({r, c});
        r += dr;
        c += dc;
    }
    track.cells = cells;
    return cells;
}

void carve_racetracks(PermeabilityField& field, uint64_t seed, const FieldConfig& cfg) {
    Rng rng(derive_seed(seed, 1));
    for (int i = 0; i < cfg.racetrack_count; ++i) {
        Racetrack t;
        t.start_row = rng.uniform_int(0, field.height() - 1);
        t.start_col = rng.uniform_int(0, field.width() - 1);
        t.orientation = static_cast<Orientation>(rng.uniform_int(0, 3));
        t.length = rng.uniform_int(cfg.racetrack_min_length, cfg.racetrack_max_length);
        apply_racetrack(field, t, cfg.racetrack_multiplier);
        field.racetracks.push_back(std::move(t));
    }
}

PermeabilityField generate_field(uint64_t seed, const FieldConfig& cfg) {
    validate(cfg);

    Grid<double> noise(cfg.grid_height, cfg.grid_width, 0.0);
    {
        Rng rng(derive_seed(seed, 0));
        for (double& v : noise.data) v = cfg.log_sigma * rng.normal();
    }
    noise = smooth(noise, cfg.correlation_length);

    PermeabilityField field;
    field.k = Grid<double>(cfg.grid_height, cfg.grid_width, 0.0);
    for (size_t i = 0; i < noise.data.size(); ++i)
        field.k.data[i] = cfg.base_perm * std::exp(noise.data[i]);

    scale_lower_to_ratio(field.k, cfg.lower_upper_ratio);
    carve_racetracks(field, seed, cfg);

    // Racetracks can, in rare draws, erase the intended asymmetry; restore it.
    const int mid = field.k.rows / 2;
    if (half_mean(field.k, mid, field.k.rows) <= half_mean(field.k, 0, mid)) {
        scale_lower_to_ratio(field.k, cfg.lower_upper_ratio);
    }
    return field;
}

void write_grid_csv(const Grid<double>& g, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    out.precision(17);
    for (int r = 0; r < g.rows; ++r) {
        for (int c = 0; c < g.cols; ++c) {
            if (c) out << ',';
            out << g.at(r, c);
        }
        out << '\n';
    }
    if (!out) throw IoError("write failed: " + path);
}

}  // namespace flowsync
