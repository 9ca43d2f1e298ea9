#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <vector>

#include "flowsync/env.hpp"
#include "flowsync/errors.hpp"
#include "flowsync/trainer.hpp"

namespace flowsync {

namespace {

struct Rgb {
    uint8_t r, g, b;
};

Rgb lerp(Rgb a, Rgb b, double t) {
    auto mix = [t](uint8_t x, uint8_t y) {
        return static_cast<uint8_t>(std::lround(x + (y - x) * t));
    };
    return {mix(a.r, b.r), mix(a.g, b.g), mix(a.b, b.b)};
}

}  // namespace

void render_frame(const PermeabilityField& field, const FlowState& state,
                  const std::vector<uint8_t>& sensors, bool has_centroid, double c_y,
                  const std::string& path, int scale) {
    if (scale < 1) throw UsageError("frame scale must be at least 1");
    const int H = field.height();
    const int W = field.width();

    // Grayscale base from log-permeability, normalised over this field.
    double lo = std::log(field.k.data.front()), hi = lo;
    for (double k : field.k.data) {
        lo = std::min(lo, std::log(k));
        hi = std::max(hi, std::log(k));
    }
    const double span = hi - lo > 1e-12 ? hi - lo : 1.0;

    std::vector<Rgb> px(static_cast<size_t>(H) * W);
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c) {
            const double g = (std::log(field.k.at(r, c)) - lo) / span;
            const auto gray = static_cast<uint8_t>(std::lround(40.0 + 175.0 * g));
            Rgb col{gray, gray, gray};
            const double f = std::clamp(state.fill.at(r, c), 0.0, 1.0);
            if (f > 0.0) col = lerp(col, {70, 120, 210}, 0.75 * f);
            px[static_cast<size_t>(r) * W + c] = col;
        }

    for (int sr = 0; sr < kSensorRows; ++sr)
        for (int sc = 0; sc < kSensorCols; ++sc) {
            const auto cell = sensor_cell(sr, sc, H, W);
            px[static_cast<size_t>(cell[0]) * W + cell[1]] =
                sensors[static_cast<size_t>(sr) * kSensorCols + sc] ? Rgb{230, 60, 50}
                                                                    : Rgb{110, 110, 110};
        }

    if (has_centroid) {
        // Map the centroid from sensor-row units onto a grid row.
        const int row = std::clamp(
            static_cast<int>(std::lround((c_y + 0.5) * H / kSensorRows)), 0, H - 1);
        for (int c = 0; c < W; ++c) px[static_cast<size_t>(row) * W + c] = {60, 200, 90};
    }

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open frame file '" + path + "'");
    out << "P6\n" << W * scale << " " << H * scale << "\n255\n";
    std::vector<uint8_t> row_bytes(static_cast<size_t>(W) * scale * 3);
    for (int r = 0; r < H; ++r) {
        for (int c = 0; c < W; ++c) {
            const Rgb col = px[static_cast<size_t>(r) * W + c];
            for (int s = 0; s < scale; ++s) {
                const size_t o = (static_cast<size_t>(c) * scale + s) * 3;
                row_bytes[o] = col.r;
                row_bytes[o + 1] = col.g;
                row_bytes[o + 2] = col.b;
            }
        }
        for (int s = 0; s < scale; ++s)
            out.write(reinterpret_cast<const char*>(row_bytes.data()),
                      static_cast<std::streamsize>(row_bytes.size()));
    }
    if (!out) throw IoError("failed to write frame file '" + path + "'");
}

}  // namespace flowsync
