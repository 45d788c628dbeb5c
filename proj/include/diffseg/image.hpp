// Copyright (C) 2026 The DiffSeg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace diffseg {

/// Row-major H x W raster.
template <class T>
class Grid {
public:
    using value_type = T;

    Grid() = default;
    Grid(int height, int width, T fill = T{})
        : height_(height), width_(width), data_(static_cast<std::size_t>(height) * width, fill) {
        if (height < 0 || width < 0) {
            throw std::invalid_argument("grid: negative extent");
        }
    }
    Grid(int height, int width, std::vector<T> values)
        : height_(height), width_(width), data_(std::move(values)) {
        if (data_.size() != static_cast<std::size_t>(height) * width) {
            throw std::invalid_argument("grid: value count does not match extent");
        }
    }

    [[nodiscard]] int height() const noexcept { return height_; }
    [[nodiscard]] int width() const noexcept { return width_; }
    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
    [[nodiscard]] bool empty() const noexcept { return data_.empty(); }

    T& at(int y, int x) noexcept { return data_[static_cast<std::size_t>(y) * width_ + x]; }
    [[nodiscard]] const T& at(int y, int x) const noexcept {
        return data_[static_cast<std::size_t>(y) * width_ + x];
    }
    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    [[nodiscard]] bool contains(int y, int x) const noexcept {
        return y >= 0 && y < height_ && x >= 0 && x < width_;
    }

    [[nodiscard]] std::vector<T>& values() noexcept { return data_; }
    [[nodiscard]] const std::vector<T>& values() const noexcept { return data_; }

    template <class U>
    [[nodiscard]] bool same_shape(const Grid<U>& other) const noexcept {
        return height_ == other.height() && width_ == other.width();
    }

    friend bool operator==(const Grid&, const Grid&) = default;

private:
    int height_ = 0;
    int width_ = 0;
    std::vector<T> data_;
};

/// Grayscale intensities; slices live in [-1, 1].
using Image = Grid<float>;
/// Binary raster; any nonzero byte is foreground.
using Mask = Grid<std::uint8_t>;

template <class A, class B>
void require_same_shape(const Grid<A>& a, const Grid<B>& b, const char* what) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument(what);
    }
}

inline std::size_t count_foreground(const Mask& m) {
    return static_cast<std::size_t>(
        std::count_if(m.values().begin(), m.values().end(), [](std::uint8_t v) { return v != 0; }));
}

/// True when every foreground pixel of `inner` is foreground in `outer`.
inline bool is_subset(const Mask& inner, const Mask& outer) {
    require_same_shape(inner, outer, "is_subset: shape mismatch");
    for (std::size_t i = 0; i < inner.size(); ++i) {
        if (inner[i] != 0 && outer[i] == 0) {
            return false;
        }
    }
    return true;
}

}  // namespace diffseg
