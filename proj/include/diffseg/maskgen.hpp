// Copyright (C) 2026 The DiffSeg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "diffseg/image.hpp"

namespace diffseg::maskgen {

/// Non-negative per-pixel difference between a reconstruction pair.
using DifferenceMap = Image;

DifferenceMap difference_map(const Image& a, const Image& b);

/// Normalised 5x5 Gaussian, row-major.
std::array<double, 25> gaussian_kernel5(double sigma);
/// 5x5 Gaussian blur with mirrored borders (edge pixel not repeated).
DifferenceMap gaussian_blur5(const DifferenceMap& map, double sigma = 1.0);

DifferenceMap apply_lung_mask(const DifferenceMap& map, const Mask& lung);

struct OtsuResult {
    double threshold = 0.0;
    int boundary = 0;  // k in 1..255: threshold = min + k (max - min) / 256
    Mask binary;       // value > threshold (inside the support)
};

constexpr int kOtsuBins = 256;

/// Otsu over 256 bins spanning [min, max] of the support pixels (all pixels
/// when no support is given). The threshold is the bin boundary with the
/// largest between-class variance, the lowest on ties. Throws DegenerateInput
/// when the support holds fewer than two distinct values.
OtsuResult otsu_threshold(const DifferenceMap& map, const Mask* support = nullptr);

/// Histogram bin of `v`: the number of interior boundaries strictly below it.
int otsu_bin(float v, float lo, float hi) noexcept;
float otsu_boundary(int k, float lo, float hi) noexcept;

/// Offsets of the discrete disk dy^2 + dx^2 <= r^2.
std::vector<std::pair<int, int>> disk(int radius);
/// Pixels outside the image count as background.
Mask erode(const Mask& m, int radius);
Mask dilate(const Mask& m, int radius);
Mask morph_open(const Mask& m, int radius);

struct Component {
    int label = 0;  // 1-based, row-major discovery order
    std::vector<int> pixels;  // linear indices
};

/// 8-connected components in discovery order.
std::vector<Component> connected_components(const Mask& m);

struct KeepResult {
    Mask mask;
    int component_count = 0;
};
KeepResult keep_largest_components(const Mask& m, int k);

struct VesselCriteria {
    double min_elongation = 4.0;
    double max_minor_extent = 6.0;
};

struct ShapeStats {
    double elongation = 1.0;     // sqrt(l1 / l2) of the central second moments
    double minor_extent = 0.0;   // pixel span along the minor axis
};
ShapeStats component_shape(const Component& c, int width);

/// Removes components that are both elongated and thin.
Mask vessel_filter(const Mask& m, const VesselCriteria& criteria = {});

struct RefineConfig {
    double sigma = 1.0;
    int open_radius = 1;
    int keep = 5;
    VesselCriteria vessel;

    [[nodiscard]] nlohmann::json to_json() const;
    static RefineConfig from_json(const nlohmann::json& j);
};

struct PseudoMask {
    Mask mask;
    std::string source_slice_id;
    int component_count = 0;
    std::optional<double> otsu_threshold;  // empty when Otsu was degenerate
};

/// blur -> lung mask -> Otsu (within the lung) -> opening -> keep largest ->
/// vessel filter. Degenerate maps give an empty mask.
PseudoMask refine(const DifferenceMap& diff, const Mask& lung, const RefineConfig& config = {},
                  const std::string& source_id = {});

/// Otsu alone on the raw map; the ablation baseline.
Mask raw_otsu(const DifferenceMap& diff);

/// <dir>/<id>.png and <dir>/<id>.json.
void write_pseudo_mask(const std::filesystem::path& dir, const PseudoMask& mask, const RefineConfig& config);
PseudoMask read_pseudo_mask(const std::filesystem::path& dir, const std::string& id);

}  // namespace diffseg::maskgen
