#pragma once

#include <cstddef>
#include <vector>

namespace flowsync {

// Dense row-major 2D array. Row 0 is the top edge of the mould.
template <typename T>
struct Grid {
    int rows = 0;
    int cols = 0;
    std::vector<T> data;

    Grid() = default;
    Grid(int r, int c, T fill_value = T{})
        : rows(r), cols(c), data(static_cast<size_t>(r) * c, fill_value) {}

    T& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
    const T& at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

    int index(int r, int c) const { return r * cols + c; }
    size_t size() const { return data.size(); }
    bool in_bounds(int r, int c) const { return r >= 0 && r < rows && c >= 0 && c < cols; }

    bool operator==(const Grid& o) const {
        return rows == o.rows && cols == o.cols && data == o.data;
    }
};

}  // namespace flowsync
