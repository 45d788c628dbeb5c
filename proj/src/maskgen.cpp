// Copyright (C) 2026 The DiffSeg Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffseg/maskgen.hpp"

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <stdexcept>

#include "diffseg/errors.hpp"
#include "diffseg/io.hpp"

namespace diffseg::maskgen {
namespace {

int reflect101(int i, int n) {
    if (n == 1) {
        return 0;
    }
    const int period = 2 * (n - 1);
    i = std::abs(i) % period;
    return i >= n ? period - i : i;
}

}  // namespace

DifferenceMap difference_map(const Image& a, const Image& b) {
    require_same_shape(a, b, "difference_map: shape mismatch");
    DifferenceMap out(a.height(), a.width());
    for (std::size_t i = 0; i < a.size(); ++i) {
        out[i] = std::fabs(a[i] - b[i]);
    }
    return out;
}

std::array<double, 25> gaussian_kernel5(double sigma) {
    if (!(sigma > 0.0)) {
        throw std::invalid_argument("gaussian_kernel5: sigma must be > 0");
    }
    std::array<double, 25> k{};
    double sum = 0.0;
    for (int dy = -2; dy <= 2; ++dy) {
        for (int dx = -2; dx <= 2; ++dx) {
            const double v = std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
            k[static_cast<std::size_t>((dy + 2) * 5 + dx + 2)] = v;
            sum += v;
        }
    }
    for (auto& v : k) {
        v /= sum;
    }
    return k;
}

DifferenceMap gaussian_blur5(const DifferenceMap& map, double sigma) {
    const auto k = gaussian_kernel5(sigma);
    const int h = map.height();
    const int w = map.width();
    DifferenceMap out(h, w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int dy = -2; dy <= 2; ++dy) {
                const int yy = reflect101(y + dy, h);
                for (int dx = -2; dx <= 2; ++dx) {
                    acc += k[static_cast<std::size_t>((dy + 2) * 5 + dx + 2)] * map.at(yy, reflect101(x + dx, w));
                }
            }
            out.at(y, x) = static_cast<float>(acc);
        }
    }
    // A convex combination cannot leave the input range; pin rounding drift.
    if (!map.empty()) {
        const auto [lo, hi] = std::minmax_element(map.values().begin(), map.values().end());
        for (auto& v : out.values()) {
            v = std::clamp(v, *lo, *hi);
        }
    }
    return out;
}

DifferenceMap apply_lung_mask(const DifferenceMap& map, const Mask& lung) {
    require_same_shape(map, lung, "apply_lung_mask: shape mismatch");
    DifferenceMap out = map;
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (lung[i] == 0) {
            out[i] = 0.0F;
        }
    }
    return out;
}

float otsu_boundary(int k, float lo, float hi) noexcept {
    return static_cast<float>(static_cast<double>(lo) +
                              (static_cast<double>(hi) - static_cast<double>(lo)) * k / kOtsuBins);
}

int otsu_bin(float v, float lo, float hi) noexcept {
    const double span = static_cast<double>(hi) - static_cast<double>(lo);
    int idx = span > 0 ? static_cast<int>(std::floor((static_cast<double>(v) - lo) / span * kOtsuBins)) : 0;
    idx = std::clamp(idx, 0, kOtsuBins - 1);
    // Settle on the exact count of boundaries strictly below v.
    while (idx > 0 && !(v > otsu_boundary(idx, lo, hi))) {
        --idx;
    }
    while (idx < kOtsuBins - 1 && v > otsu_boundary(idx + 1, lo, hi)) {
        ++idx;
    }
    return idx;
}

OtsuResult otsu_threshold(const DifferenceMap& map, const Mask* support) {
    if (support != nullptr) {
        require_same_shape(map, *support, "otsu_threshold: support shape mismatch");
    }
    auto inside = [&](std::size_t i) { return support == nullptr || (*support)[i] != 0; };
    float lo = std::numeric_limits<float>::infinity();
    float hi = -std::numeric_limits<float>::infinity();
    std::size_t n_total = 0;
    for (std::size_t i = 0; i < map.size(); ++i) {
        if (inside(i)) {
            lo = std::min(lo, map[i]);
            hi = std::max(hi, map[i]);
            ++n_total;
        }
    }
    if (n_total == 0 || !(hi > lo)) {
        throw DegenerateInput("otsu_threshold: fewer than two distinct values");
    }
    std::array<std::int64_t, kOtsuBins> hist{};
    for (std::size_t i = 0; i < map.size(); ++i) {
        if (inside(i)) {
            ++hist[static_cast<std::size_t>(otsu_bin(map[i], lo, hi))];
        }
    }
    std::int64_t total_sum = 0;
    for (int b = 0; b < kOtsuBins; ++b) {
        total_sum += hist[static_cast<std::size_t>(b)] * b;
    }
    const auto n = static_cast<std::int64_t>(n_total);

    // Between-class variance with bin indices as values is proportional to
    // (S0 n1 - S1 n0)^2 / (n0 n1); compared as exact fractions.
    using u128 = unsigned __int128;
    const bool exact = n_total <= (std::size_t{1} << 18);
    u128 best_num = 0;
    u128 best_den = 1;
    long double best_ld = -1.0L;
    int best_k = 0;
    std::int64_t n0 = 0;
    std::int64_t s0 = 0;
    for (int k = 1; k < kOtsuBins; ++k) {
        n0 += hist[static_cast<std::size_t>(k - 1)];
        s0 += hist[static_cast<std::size_t>(k - 1)] * (k - 1);
        const std::int64_t n1 = n - n0;
        const std::int64_t s1 = total_sum - s0;
        if (n0 == 0 || n1 == 0) {
            continue;
        }
        const std::int64_t diff = s0 * n1 - s1 * n0;
        bool better = false;
        if (exact) {
            const u128 mag = static_cast<u128>(diff < 0 ? -diff : diff);
            const u128 num = mag * mag;
            const u128 den = static_cast<u128>(n0) * static_cast<u128>(n1);
            better = best_k == 0 || num * best_den > best_num * den;
            if (better) {
                best_num = num;
                best_den = den;
            }
        } else {
            const long double v = static_cast<long double>(diff) * diff / (static_cast<long double>(n0) * n1);
            better = best_k == 0 || v > best_ld;
            if (better) {
                best_ld = v;
            }
        }
        if (better) {
            best_k = k;
        }
    }
    OtsuResult r;
    r.boundary = best_k;
    r.threshold = otsu_boundary(best_k, lo, hi);
    r.binary = Mask(map.height(), map.width(), 0);
    const auto t = static_cast<float>(r.threshold);
    for (std::size_t i = 0; i < map.size(); ++i) {
        r.binary[i] = inside(i) && map[i] > t ? 1 : 0;
    }
    return r;
}

std::vector<std::pair<int, int>> disk(int radius) {
    std::vector<std::pair<int, int>> out;
    for (int dy = -radius; dy <= radius; ++dy) {
        for (int dx = -radius; dx <= radius; ++dx) {
            if (dy * dy + dx * dx <= radius * radius) {
                out.emplace_back(dy, dx);
            }
        }
    }
    return out;
}

Mask erode(const Mask& m, int radius) {
    if (radius < 1) {
        throw std::invalid_argument("erode: radius must be >= 1");
    }
    const auto se = disk(radius);
    Mask out(m.height(), m.width(), 0);
    for (int y = 0; y < m.height(); ++y) {
        for (int x = 0; x < m.width(); ++x) {
            bool all = true;
            for (const auto& [dy, dx] : se) {
                if (!m.contains(y + dy, x + dx) || m.at(y + dy, x + dx) == 0) {
                    all = false;
                    break;
                }
            }
            out.at(y, x) = all ? 1 : 0;
        }
    }
    return out;
}

Mask dilate(const Mask& m, int radius) {
    if (radius < 1) {
        throw std::invalid_argument("dilate: radius must be >= 1");
    }
    const auto se = disk(radius);
    Mask out(m.height(), m.width(), 0);
    for (int y = 0; y < m.height(); ++y) {
        for (int x = 0; x < m.width(); ++x) {
            if (m.at(y, x) == 0) {
                continue;
            }
            for (const auto& [dy, dx] : se) {
                if (out.contains(y + dy, x + dx)) {
                    out.at(y + dy, x + dx) = 1;
                }
            }
        }
    }
    return out;
}

Mask morph_open(const Mask& m, int radius) {
    if (radius < 1) {
        throw std::invalid_argument("morph_open: radius must be >= 1");
    }
    return dilate(erode(m, radius), radius);
}

std::vector<Component> connected_components(const Mask& m) {
    std::vector<int> label(m.size(), 0);
    std::vector<Component> out;
    std::vector<int> stack;
    const int w = m.width();
    for (int start = 0; start < static_cast<int>(m.size()); ++start) {
        if (m[static_cast<std::size_t>(start)] == 0 || label[static_cast<std::size_t>(start)] != 0) {
            continue;
        }
        Component c;
        c.label = static_cast<int>(out.size()) + 1;
        stack.assign(1, start);
        label[static_cast<std::size_t>(start)] = c.label;
        while (!stack.empty()) {
            const int p = stack.back();
            stack.pop_back();
            c.pixels.push_back(p);
            const int y = p / w;
            const int x = p % w;
            for (int dy = -1; dy <= 1; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                    const int yy = y + dy;
                    const int xx = x + dx;
                    if (!m.contains(yy, xx)) {
                        continue;
                    }
                    const auto q = static_cast<std::size_t>(yy * w + xx);
                    if (m[q] != 0 && label[q] == 0) {
                        label[q] = c.label;
                        stack.push_back(static_cast<int>(q));
                    }
                }
            }
        }
        std::sort(c.pixels.begin(), c.pixels.end());
        out.push_back(std::move(c));
    }
    return out;
}

KeepResult keep_largest_components(const Mask& m, int k) {
    if (k < 1) {
        throw std::invalid_argument("keep_largest_components: k must be >= 1");
    }
    auto comps = connected_components(m);
    std::stable_sort(comps.begin(), comps.end(),
                     [](const Component& a, const Component& b) { return a.pixels.size() > b.pixels.size(); });
    KeepResult r;
    r.mask = Mask(m.height(), m.width(), 0);
    r.component_count = static_cast<int>(std::min<std::size_t>(comps.size(), static_cast<std::size_t>(k)));
    for (int i = 0; i < r.component_count; ++i) {
        for (int p : comps[static_cast<std::size_t>(i)].pixels) {
            r.mask[static_cast<std::size_t>(p)] = 1;
        }
    }
    return r;
}

ShapeStats component_shape(const Component& c, int width) {
    ShapeStats s;
    const auto n = static_cast<double>(c.pixels.size());
    if (c.pixels.size() < 2) {
        s.minor_extent = static_cast<double>(c.pixels.size());
        return s;
    }
    double my = 0.0;
    double mx = 0.0;
    for (int p : c.pixels) {
        my += p / width;
        mx += p % width;
    }
    my /= n;
    mx /= n;
    Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
    for (int p : c.pixels) {
        const double dy = p / width - my;
        const double dx = p % width - mx;
        cov(0, 0) += dy * dy;
        cov(0, 1) += dy * dx;
        cov(1, 1) += dx * dx;
    }
    cov(1, 0) = cov(0, 1);
    cov /= n;
    const Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(cov);
    const double l2 = std::max(es.eigenvalues()(0), 0.0);  // ascending
    const double l1 = std::max(es.eigenvalues()(1), 0.0);
    s.elongation = l2 > 1e-12 ? std::sqrt(l1 / l2) : (l1 > 1e-12 ? std::numeric_limits<double>::infinity() : 1.0);
    const Eigen::Vector2d minor = es.eigenvectors().col(0);
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (int p : c.pixels) {
        const double proj = (p / width) * minor(0) + (p % width) * minor(1);
        lo = std::min(lo, proj);
        hi = std::max(hi, proj);
    }
    s.minor_extent = hi - lo + 1.0;
    return s;
}

Mask vessel_filter(const Mask& m, const VesselCriteria& criteria) {
    Mask out = m;
    for (const auto& c : connected_components(m)) {
        const ShapeStats s = component_shape(c, m.width());
        if (s.elongation >= criteria.min_elongation && s.minor_extent <= criteria.max_minor_extent) {
            for (int p : c.pixels) {
                out[static_cast<std::size_t>(p)] = 0;
            }
        }
    }
    return out;
}

nlohmann::json RefineConfig::to_json() const {
    return {{"sigma", sigma},
            {"open_radius", open_radius},
            {"keep", keep},
            {"vessel_min_elongation", vessel.min_elongation},
            {"vessel_max_minor_extent", vessel.max_minor_extent}};
}

RefineConfig RefineConfig::from_json(const nlohmann::json& j) {
    RefineConfig c;
    c.sigma = j.value("sigma", c.sigma);
    c.open_radius = j.value("open_radius", c.open_radius);
    c.keep = j.value("keep", c.keep);
    c.vessel.min_elongation = j.value("vessel_min_elongation", c.vessel.min_elongation);
    c.vessel.max_minor_extent = j.value("vessel_max_minor_extent", c.vessel.max_minor_extent);
    return c;
}

PseudoMask refine(const DifferenceMap& diff, const Mask& lung, const RefineConfig& config,
                  const std::string& source_id) {
    require_same_shape(diff, lung, "refine: shape mismatch");
    PseudoMask out;
    out.source_slice_id = source_id;
    out.mask = Mask(diff.height(), diff.width(), 0);
    const DifferenceMap masked = apply_lung_mask(gaussian_blur5(diff, config.sigma), lung);
    OtsuResult otsu;
    try {
        otsu = otsu_threshold(masked, &lung);
    } catch (const DegenerateInput&) {
        return out;
    }
    out.otsu_threshold = otsu.threshold;
    const Mask opened = morph_open(otsu.binary, config.open_radius);
    const Mask kept = keep_largest_components(opened, config.keep).mask;
    out.mask = vessel_filter(kept, config.vessel);
    out.component_count = static_cast<int>(connected_components(out.mask).size());
    return out;
}

Mask raw_otsu(const DifferenceMap& diff) {
    try {
        return otsu_threshold(diff).binary;
    } catch (const DegenerateInput&) {
        return Mask(diff.height(), diff.width(), 0);
    }
}

void write_pseudo_mask(const std::filesystem::path& dir, const PseudoMask& mask, const RefineConfig& config) {
    io::ensure_dir(dir);
    io::write_mask_png8(dir / (mask.source_slice_id + ".png"), mask.mask);
    nlohmann::json side = {{"source_id", mask.source_slice_id},
                           {"component_count", mask.component_count},
                           {"foreground", count_foreground(mask.mask)},
                           {"stages", config.to_json()}};
    side["otsu_threshold"] = mask.otsu_threshold ? nlohmann::json(*mask.otsu_threshold) : nlohmann::json(nullptr);
    io::write_json(dir / (mask.source_slice_id + ".json"), side);
}

PseudoMask read_pseudo_mask(const std::filesystem::path& dir, const std::string& id) {
    PseudoMask m;
    m.source_slice_id = id;
    m.mask = io::read_mask_png8(dir / (id + ".png"));
    const auto side = io::read_json(dir / (id + ".json"));
    m.component_count = side.at("component_count").get<int>();
    if (!side.at("otsu_threshold").is_null()) {
        m.otsu_threshold = side.at("otsu_threshold").get<double>();
    }
    return m;
}

}  // namespace diffseg::maskgen
