// Copyright (C) 2026 The DiffSeg Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "diffseg/errors.hpp"
#include "diffseg/io.hpp"
#include "diffseg/maskgen.hpp"
#include "diffseg/phantom.hpp"
#include "mask_oracles.hpp"
#include "test_util.hpp"

namespace diffseg::maskgen {
namespace {

Mask rect(int h, int w, int y0, int x0, int rh, int rw, Mask m = {}) {
    if (m.empty()) {
        m = Mask(h, w);
    }
    for (int y = y0; y < y0 + rh; ++y) {
        for (int x = x0; x < x0 + rw; ++x) {
            m.at(y, x) = 1;
        }
    }
    return m;
}

TEST(DifferenceMap, Basics) {
    const Image a(3, 4, 0.5F);
    const Image b(3, 4, -0.5F);
    const auto ab = difference_map(a, b);
    for (float v : ab.values()) {
        EXPECT_FLOAT_EQ(v, 1.0F);
    }
    const auto aa = difference_map(a, a);
    for (float v : aa.values()) {
        EXPECT_EQ(v, 0.0F);
    }
    std::mt19937_64 rng(1);
    const Image c = test::random_difference_map(rng, 5, 5);
    const Image d = test::random_difference_map(rng, 5, 5);
    EXPECT_EQ(difference_map(c, d), difference_map(d, c));
    EXPECT_THROW(difference_map(a, Image(4, 3)), std::invalid_argument);
}

TEST(Blur, KernelAndImpulse) {
    for (double sigma : {0.5, 1.0, 2.0}) {
        const auto k = gaussian_kernel5(sigma);
        double sum = 0;
        double norm = 0;
        for (int y = -2; y <= 2; ++y) {
            for (int x = -2; x <= 2; ++x) {
                norm += std::exp(-(x * x + y * y) / (2 * sigma * sigma));
            }
        }
        for (double v : k) {
            sum += v;
        }
        EXPECT_NEAR(sum, 1.0, 1e-12);
        EXPECT_NEAR(k[12], 1.0 / norm, 1e-12);
        Image impulse(11, 11, 0.0F);
        impulse.at(5, 5) = 1.0F;
        const Image out = gaussian_blur5(impulse, sigma);
        EXPECT_NEAR(out.at(5, 5), 1.0 / norm, 1e-6);
        EXPECT_NEAR(out.at(5, 7), std::exp(-4 / (2 * sigma * sigma)) / norm, 1e-6);
        EXPECT_EQ(out.at(5, 8), 0.0F);
    }
    EXPECT_THROW(gaussian_kernel5(0.0), std::invalid_argument);
    EXPECT_THROW(gaussian_blur5(Image(5, 5), -1.0), std::invalid_argument);
}

TEST(Blur, ConstantsAndBounds) {
    const Image flat = gaussian_blur5(Image(7, 9, 0.3F));
    for (float v : flat.values()) {
        EXPECT_NEAR(v, 0.3F, 1e-6);
    }
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        const Image m = test::random_difference_map(rng, 12, 10);
        const Image out = gaussian_blur5(m);
        const auto [lo, hi] = std::minmax_element(m.values().begin(), m.values().end());
        for (float v : out.values()) {
            EXPECT_GE(v, *lo);
            EXPECT_LE(v, *hi);
        }
    }
}

TEST(LungMask, Application) {
    std::mt19937_64 rng(3);
    const Image m = test::random_difference_map(rng, 8, 8);
    EXPECT_EQ(apply_lung_mask(m, Mask(8, 8, 1)), m);
    const Image cleared = apply_lung_mask(m, Mask(8, 8, 0));
    for (float v : cleared.values()) {
        EXPECT_EQ(v, 0.0F);
    }
    const Mask lung = test::random_mask(rng, 8, 8);
    const Image out = apply_lung_mask(m, lung);
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (lung[i] == 0) {
            EXPECT_EQ(out[i], 0.0F);
        }
    }
    EXPECT_THROW(apply_lung_mask(m, Mask(7, 8)), std::invalid_argument);
}

TEST(Otsu, TwoLevelExample) {
    const Image m(1, 6, std::vector<float>{0, 0, 0, 0.9F, 0.9F, 0.9F});
    const auto r = otsu_threshold(m);
    EXPECT_GT(r.threshold, 0.0);
    EXPECT_LT(r.threshold, 0.9);
    EXPECT_EQ(r.binary, Mask(1, 6, std::vector<std::uint8_t>{0, 0, 0, 1, 1, 1}));
    // All splits between the two levels are equivalent; the lowest wins.
    EXPECT_EQ(r.boundary, 1);
}

TEST(Otsu, Degenerate) {
    EXPECT_THROW(otsu_threshold(Image(4, 4, 0.2F)), DegenerateInput);
    Image m(2, 2, 0.0F);
    m[0] = 1.0F;
    const Mask support(2, 2, std::vector<std::uint8_t>{0, 1, 1, 1});
    EXPECT_THROW(otsu_threshold(m, &support), DegenerateInput);
}

TEST(Otsu, MatchesExhaustiveOracle) {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 300; ++trial) {
        const int h = 4 + static_cast<int>(rng() % 40);
        const int w = 4 + static_cast<int>(rng() % 40);
        const Image m = test::random_difference_map(rng, h, w);
        const bool with_support = trial % 3 == 0;
        const Mask support = test::random_mask(rng, h, w);
        const Mask* sp = with_support ? &support : nullptr;
        int want = -1;
        try {
            want = test::otsu_oracle(m, sp);
        } catch (...) {
        }
        std::optional<OtsuResult> got;
        try {
            got = otsu_threshold(m, sp);
        } catch (const DegenerateInput&) {
        }
        if (!got) {
            EXPECT_EQ(want, -1);
            continue;
        }
        EXPECT_EQ(got->boundary, want) << "trial " << trial;
        for (std::size_t i = 0; i < m.size(); ++i) {
            const bool in = sp == nullptr || support[i] != 0;
            EXPECT_EQ(got->binary[i] != 0, in && m[i] > got->threshold);
        }
    }
}

TEST(Morphology, DiskAndExamples) {
    EXPECT_EQ(disk(1).size(), 5U);
    EXPECT_EQ(disk(2).size(), 13U);
    EXPECT_EQ(count_foreground(morph_open(Mask(9, 9), 1)), 0U);
    Mask single(9, 9);
    single.at(4, 4) = 1;
    EXPECT_EQ(count_foreground(morph_open(single, 1)), 0U);
    const Mask block = rect(12, 12, 3, 3, 5, 5);
    EXPECT_TRUE(test::same_support(morph_open(block, 1), morph_open(morph_open(block, 1), 1)));
    EXPECT_THROW(morph_open(block, 0), std::invalid_argument);
}

TEST(Morphology, LawsAndOracleOnRandomMasks) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        const Mask m = test::random_mask(rng, 8 + static_cast<int>(rng() % 40), 8 + static_cast<int>(rng() % 40));
        const int r = 1 + trial % 3;
        EXPECT_TRUE(test::same_support(erode(m, r), test::erode_oracle(m, r)));
        EXPECT_TRUE(test::same_support(dilate(m, r), test::dilate_oracle(m, r)));
        const Mask o = morph_open(m, r);
        EXPECT_TRUE(is_subset(o, m));
        EXPECT_TRUE(test::same_support(morph_open(o, r), o));
        EXPECT_TRUE(test::same_support(o, test::dilate_oracle(test::erode_oracle(m, r), r)));
    }
}

TEST(Components, SevenAreasKeepFive) {
    // 10-row blocks of widths 4, 1, 7, 3, 6, 2, 5 separated by blank columns.
    Mask m(40, 80);
    int x = 1;
    for (int a : {40, 10, 70, 30, 60, 20, 50}) {
        m = rect(40, 80, 1, x, 10, a / 10, m);
        x += a / 10 + 2;
    }
    const auto r = keep_largest_components(m, 5);
    EXPECT_EQ(r.component_count, 5);
    std::vector<std::size_t> kept;
    for (const auto& c : test::flood_fill_components(r.mask)) {
        kept.push_back(c.size());
    }
    std::sort(kept.rbegin(), kept.rend());
    EXPECT_EQ(kept, (std::vector<std::size_t>{70, 60, 50, 40, 30}));
    EXPECT_TRUE(test::same_support(r.mask, test::keep_largest_oracle(m, 5)));
}

TEST(Components, FewerThanK) {
    Mask m = rect(20, 20, 1, 1, 3, 3);
    m = rect(20, 20, 10, 10, 2, 2, m);
    m = rect(20, 20, 1, 15, 4, 1, m);
    const auto r = keep_largest_components(m, 5);
    EXPECT_EQ(r.component_count, 3);
    EXPECT_EQ(r.mask, m);
    EXPECT_THROW(keep_largest_components(m, 0), std::invalid_argument);
}

TEST(Components, DiagonalTouchIsConnected) {
    Mask m(4, 4);
    m.at(0, 0) = 1;
    m.at(1, 1) = 1;
    m.at(3, 3) = 1;
    const auto cs = connected_components(m);
    ASSERT_EQ(cs.size(), 2U);
    EXPECT_EQ(cs[0].pixels.size(), 2U);
    EXPECT_EQ(cs[0].label, 1);
}

TEST(Components, MatchFloodFillOracleOnRandomMasks) {
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 300; ++trial) {
        const int h = 4 + static_cast<int>(rng() % 61);
        const int w = 4 + static_cast<int>(rng() % 61);
        const Mask m = test::random_mask(rng, h, w);
        const auto want = test::flood_fill_components(m);
        const auto got = connected_components(m);
        ASSERT_EQ(got.size(), want.size());
        for (std::size_t i = 0; i < got.size(); ++i) {
            auto a = got[i].pixels;
            auto b = want[i];
            std::sort(a.begin(), a.end());
            std::sort(b.begin(), b.end());
            EXPECT_EQ(a, b);
        }
        const int k = 1 + static_cast<int>(rng() % 7);
        const auto r = keep_largest_components(m, k);
        EXPECT_TRUE(test::same_support(r.mask, test::keep_largest_oracle(m, k)));
        EXPECT_EQ(r.component_count, std::min<int>(k, static_cast<int>(want.size())));
        EXPECT_TRUE(is_subset(r.mask, m));
    }
}

TEST(VesselFilter, Examples) {
    const Mask line = rect(40, 40, 5, 2, 1, 30);
    EXPECT_EQ(count_foreground(vessel_filter(line)), 0U);
    const Mask square = rect(40, 40, 10, 10, 10, 10);
    EXPECT_EQ(vessel_filter(square), square);
    EXPECT_EQ(count_foreground(vessel_filter(Mask(10, 10))), 0U);
    // A thick elongated blob is elongated but too wide to be a vessel.
    const Mask slab = rect(60, 60, 5, 2, 8, 56);
    EXPECT_EQ(vessel_filter(slab), slab);
    // Criteria are configurable: a 2 x 30 bar has elongation ~17.
    const Mask bar = rect(40, 40, 5, 2, 2, 30);
    EXPECT_EQ(count_foreground(vessel_filter(bar)), 0U);
    EXPECT_EQ(vessel_filter(bar, {100.0, 6.0}), bar);
    EXPECT_EQ(vessel_filter(bar, {4.0, 1.0}), bar);
}

TEST(VesselFilter, ShapeStatsOfLine) {
    const Mask diag = [] {
        Mask m(30, 30);
        for (int i = 0; i < 25; ++i) {
            m.at(i + 2, i + 2) = 1;
        }
        return m;
    }();
    const auto cs = connected_components(diag);
    ASSERT_EQ(cs.size(), 1U);
    const auto st = component_shape(cs[0], 30);
    EXPECT_TRUE(std::isinf(st.elongation) || st.elongation > 4.0);
    EXPECT_LE(st.minor_extent, 2.0);
    EXPECT_EQ(count_foreground(vessel_filter(diag)), 0U);
}

TEST(Refine, ZeroMapGivesEmptyMask) {
    const Mask lung = rect(32, 32, 4, 4, 20, 20);
    const auto pm = refine(Image(32, 32, 0.0F), lung, {}, "x");
    EXPECT_EQ(count_foreground(pm.mask), 0U);
    EXPECT_EQ(pm.component_count, 0);
    EXPECT_EQ(pm.source_slice_id, "x");
    EXPECT_THROW(refine(Image(32, 32), Mask(31, 32), {}, "x"), std::invalid_argument);
}

TEST(Refine, InvariantsOnPhantomDifferences) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const Slice pos = phantom::generate_phantom(seed, 64, true, 0.7);
        const Slice neg = phantom::generate_phantom(seed, 64, false, 0.0);
        std::mt19937_64 rng(seed);
        std::normal_distribution<float> noise(0.0F, 0.02F);
        Image noisy = pos.pixels;
        for (auto& v : noisy.values()) {
            v += noise(rng);
        }
        const auto diff = difference_map(noisy, neg.pixels);
        const auto a = refine(diff, pos.lung_mask, {}, pos.id);
        const auto b = refine(diff, pos.lung_mask, {}, pos.id);
        EXPECT_EQ(a.mask, b.mask);
        EXPECT_TRUE(is_subset(a.mask, pos.lung_mask));
        EXPECT_LE(a.component_count, 5);
        EXPECT_EQ(a.component_count, static_cast<int>(connected_components(a.mask).size()));
    }
}

TEST(PseudoMaskIo, RoundTrip) {
    test::TempDir dir;
    PseudoMask pm;
    pm.source_slice_id = "neg_0001";
    pm.mask = rect(8, 8, 2, 2, 3, 3);
    pm.component_count = 1;
    pm.otsu_threshold = 0.25;
    write_pseudo_mask(dir.path(), pm, {});
    const auto back = read_pseudo_mask(dir.path(), "neg_0001");
    EXPECT_TRUE(test::same_support(back.mask, pm.mask));
    EXPECT_EQ(back.component_count, 1);
    EXPECT_EQ(back.otsu_threshold, 0.25);
    const auto side = io::read_json(dir.path() / "neg_0001.json");
    EXPECT_EQ(side.at("source_id"), "neg_0001");
    EXPECT_TRUE(side.contains("stages"));
}

}  // namespace
}  // namespace diffseg::maskgen
