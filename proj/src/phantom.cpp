// Copyright (C) 2026 The DiffSeg Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <array>
#include <numbers>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "diffseg/hashing.hpp"
#include "diffseg/phantom.hpp"

namespace diffseg {

std::string to_string(Label label) {
    return label == Label::fibrosis_positive ? "fibrosis_positive" : "fibrosis_negative";
}

Label label_from_string(const std::string& s) {
    if (s == "fibrosis_positive") {
        return Label::fibrosis_positive;
    }
    if (s == "fibrosis_negative") {
        return Label::fibrosis_negative;
    }
    throw std::invalid_argument("unknown label: " + s);
}

namespace phantom {
namespace {

using Rng = std::mt19937_64;

constexpr float kBackground = -0.85F;
constexpr float kParenchyma = -0.35F;
constexpr float kVesselContrast = 0.32F;
constexpr float kLesionContrast = 0.75F;
constexpr float kAbnormalContrast = 0.45F;
constexpr float kPixelNoise = 0.012F;

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

/// Value noise in [-1, 1] with lattice spacing `spacing` pixels.
Image value_noise(int size, double spacing, Rng& rng) {
    const int cells = static_cast<int>(std::ceil(size / spacing)) + 2;
    std::vector<double> lattice(static_cast<std::size_t>(cells) * cells);
    for (auto& v : lattice) {
        v = uniform(rng, -1.0, 1.0);
    }
    auto lat = [&](int y, int x) { return lattice[static_cast<std::size_t>(y) * cells + x]; };
    Image out(size, size);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            const double gy = y / spacing;
            const double gx = x / spacing;
            const int iy = static_cast<int>(gy);
            const int ix = static_cast<int>(gx);
            const double fy = smoothstep(gy - iy);
            const double fx = smoothstep(gx - ix);
            const double top = lat(iy, ix) * (1 - fx) + lat(iy, ix + 1) * fx;
            const double bot = lat(iy + 1, ix) * (1 - fx) + lat(iy + 1, ix + 1) * fx;
            out.at(y, x) = static_cast<float>(top * (1 - fy) + bot * fy);
        }
    }
    return out;
}

struct Ellipse {
    double cy, cx, ry, rx;
    [[nodiscard]] double radius(double y, double x) const {
        const double dy = (y - cy) / ry;
        const double dx = (x - cx) / rx;
        return std::sqrt(dy * dy + dx * dx);
    }
};

/// Euclidean distance from each foreground pixel to the nearest background
/// pixel (0 outside).
Grid<float> inner_distance(const Mask& region) {
    std::vector<std::pair<int, int>> outside;
    for (int y = -1; y <= region.height(); ++y) {
        for (int x = -1; x <= region.width(); ++x) {
            const bool in = region.contains(y, x) && region.at(y, x) != 0;
            if (in) {
                continue;
            }
            // Only background pixels touching the region matter.
            bool touches = false;
            for (int dy = -1; dy <= 1 && !touches; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                    if (region.contains(y + dy, x + dx) && region.at(y + dy, x + dx) != 0) {
                        touches = true;
                        break;
                    }
                }
            }
            if (touches) {
                outside.emplace_back(y, x);
            }
        }
    }
    Grid<float> dist(region.height(), region.width(), 0.0F);
    for (int y = 0; y < region.height(); ++y) {
        for (int x = 0; x < region.width(); ++x) {
            if (region.at(y, x) == 0) {
                continue;
            }
            double best = 1e30;
            for (const auto& [oy, ox] : outside) {
                const double d = (oy - y) * (oy - y) + (ox - x) * (ox - x);
                best = std::min(best, d);
            }
            dist.at(y, x) = static_cast<float>(std::sqrt(best));
        }
    }
    return dist;
}

double segment_distance(double py, double px, double ay, double ax, double by, double bx) {
    const double vy = by - ay;
    const double vx = bx - ax;
    const double len2 = vy * vy + vx * vx;
    double t = len2 > 0 ? ((py - ay) * vy + (px - ax) * vx) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double dy = py - (ay + t * vy);
    const double dx = px - (ax + t * vx);
    return std::sqrt(dy * dy + dx * dx);
}

}  // namespace

double lesion_fraction(double severity) noexcept { return 0.10 + 0.40 * severity; }

Slice generate_phantom(std::uint64_t seed, int size, bool fibrotic, double severity, const PhantomOptions& options) {
    if (size < 32) {
        throw std::invalid_argument("generate_phantom: size must be >= 32");
    }
    if (!(severity >= 0.0 && severity <= 1.0)) {
        throw std::invalid_argument("generate_phantom: severity must lie in [0, 1]");
    }
    if (fibrotic && severity <= 0.0) {
        throw std::invalid_argument("generate_phantom: fibrotic slices need severity > 0");
    }
    Rng base(derive_seed(seed, "anatomy"));
    const double s = size;

    std::array<Ellipse, 2> lungs{};
    for (int side = 0; side < 2; ++side) {
        const double cx = s * ((side == 0 ? 0.29 : 0.71) + uniform(base, -0.02, 0.02));
        const double cy = s * (0.5 + uniform(base, -0.03, 0.03));
        lungs[static_cast<std::size_t>(side)] = Ellipse{cy, cx, s * uniform(base, 0.30, 0.36),
                                                        s * uniform(base, 0.16, 0.19)};
    }

    Slice out;
    out.pixels = Image(size, size, kBackground);
    out.lung_mask = Mask(size, size, 0);
    std::array<Mask, 2> lung_region{Mask(size, size, 0), Mask(size, size, 0)};
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            for (std::size_t k = 0; k < 2; ++k) {
                if (lungs[k].radius(y + 0.5, x + 0.5) < 1.0) {
                    lung_region[k].at(y, x) = 1;
                    out.lung_mask.at(y, x) = 1;
                }
            }
        }
    }

    const Image body_tex = value_noise(size, s / 4.0, base);
    const Image lung_tex = value_noise(size, s / 8.0, base);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            out.pixels.at(y, x) = out.lung_mask.at(y, x) != 0 ? kParenchyma + 0.08F * lung_tex.at(y, x)
                                                              : kBackground + 0.03F * body_tex.at(y, x);
        }
    }

    // Vessels: short slightly bent polylines fanning out from each hilum.
    for (std::size_t k = 0; k < 2; ++k) {
        const Ellipse& e = lungs[k];
        const double medial = k == 0 ? 1.0 : -1.0;
        const int count = std::uniform_int_distribution<int>(3, 5)(base);
        for (int v = 0; v < count; ++v) {
            double py = e.cy + uniform(base, -0.25, 0.25) * e.ry;
            double px = e.cx + medial * 0.45 * e.rx;
            double angle = uniform(base, 0.0, 2.0 * std::numbers::pi);
            // Point roughly away from the mediastinum.
            if (std::cos(angle) * medial > 0) {
                angle = std::numbers::pi - angle;
            }
            const double length = uniform(base, 0.45, 0.8) * e.ry;
            const double bend = uniform(base, -0.35, 0.35);
            const int segments = 3;
            for (int sgm = 0; sgm < segments; ++sgm) {
                const double qy = py + std::sin(angle) * length / segments;
                const double qx = px + std::cos(angle) * length / segments;
                for (int y = 0; y < size; ++y) {
                    for (int x = 0; x < size; ++x) {
                        if (lung_region[k].at(y, x) == 0) {
                            continue;
                        }
                        const double d = segment_distance(y + 0.5, x + 0.5, py, px, qy, qx);
                        const double w = std::max(0.0, 1.0 - d / 0.9);
                        out.pixels.at(y, x) = std::max(out.pixels.at(y, x),
                                                       static_cast<float>(kParenchyma + kVesselContrast * w));
                    }
                }
                py = qy;
                px = qx;
                angle += bend;
            }
        }
    }

    // Non-fibrotic abnormality: smooth central blob.
    if (uniform(base, 0.0, 1.0) < options.abnormality_probability) {
        const std::size_t k = uniform(base, 0.0, 1.0) < 0.5 ? 0 : 1;
        const Ellipse& e = lungs[k];
        const double by = e.cy + uniform(base, -0.3, 0.3) * e.ry;
        const double bx = e.cx + uniform(base, -0.2, 0.2) * e.rx;
        const double sigma = uniform(base, 2.0, 3.0) * s / 64.0;
        for (int y = 0; y < size; ++y) {
            for (int x = 0; x < size; ++x) {
                if (lung_region[k].at(y, x) == 0) {
                    continue;
                }
                const double d2 = (y + 0.5 - by) * (y + 0.5 - by) + (x + 0.5 - bx) * (x + 0.5 - bx);
                out.pixels.at(y, x) += static_cast<float>(kAbnormalContrast * std::exp(-d2 / (2 * sigma * sigma)));
            }
        }
    }

    std::normal_distribution<float> pixel_noise(0.0F, kPixelNoise);
    const Image noise_field = [&] {
        Image n(size, size);
        for (auto& v : n.values()) {
            v = pixel_noise(base);
        }
        return n;
    }();

    if (fibrotic) {
        Rng lesion_rng(derive_seed(seed, "lesion"));
        const Image envelope = value_noise(size, s / 8.0, lesion_rng);
        const Image honeycomb = value_noise(size, 2.0, lesion_rng);
        std::vector<std::size_t> rim;
        for (std::size_t k = 0; k < 2; ++k) {
            const Grid<float> dist = inner_distance(lung_region[k]);
            const double depth = options.rim_fraction * std::sqrt(lungs[k].ry * lungs[k].rx);
            for (std::size_t i = 0; i < dist.size(); ++i) {
                if (lung_region[k][i] != 0 && dist[i] <= depth) {
                    rim.push_back(i);
                }
            }
        }
        std::stable_sort(rim.begin(), rim.end(),
                         [&](std::size_t a, std::size_t b) { return envelope[a] > envelope[b]; });
        const auto take = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::lround(lesion_fraction(severity) * static_cast<double>(rim.size()))));
        Mask gt(size, size, 0);
        for (std::size_t r = 0; r < std::min(take, rim.size()); ++r) {
            const std::size_t i = rim[r];
            gt[i] = 1;
            const float cell = 0.5F + 0.5F * honeycomb[i];
            out.pixels[i] = kParenchyma + 0.08F * lung_tex[i] + kLesionContrast * (0.55F + 0.45F * cell);
        }
        out.gt_mask = std::move(gt);
        out.label = Label::fibrosis_positive;
    }

    for (std::size_t i = 0; i < out.pixels.size(); ++i) {
        out.pixels[i] = std::clamp(out.pixels[i] + noise_field[i], -1.0F, 1.0F);
    }
    return out;
}

}  // namespace phantom
}  // namespace diffseg
