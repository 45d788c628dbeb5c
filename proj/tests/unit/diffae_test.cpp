// Copyright (C) 2026 The DiffSeg Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "diffseg/diffae.hpp"
#include "diffseg/io.hpp"
#include "diffseg/phantom.hpp"
#include "ddim_oracles.hpp"
#include "test_util.hpp"

namespace diffseg::diffae {
namespace {

using nn::Shape;
using nn::Tensor;

TEST(Schedule, HandProduct) {
    const auto s = make_schedule(2, 0.5, 0.5);
    ASSERT_EQ(s.alpha_bar.size(), 3U);
    EXPECT_DOUBLE_EQ(s.alpha_bar[0], 1.0);
    EXPECT_DOUBLE_EQ(s.alpha_bar[1], 0.5);
    EXPECT_DOUBLE_EQ(s.alpha_bar[2], 0.25);
}

TEST(Schedule, LinearBetasStrictlyDecreasing) {
    const auto s = make_schedule(100, 1e-4, 0.02);
    double expected = 1.0;
    for (int t = 1; t <= 100; ++t) {
        expected *= 1.0 - (1e-4 + (0.02 - 1e-4) * (t - 1) / 99.0);
        EXPECT_NEAR(s.at(t), expected, 1e-12);
        EXPECT_LT(s.at(t), s.at(t - 1));
    }
}

TEST(Schedule, RejectsInvalid) {
    EXPECT_THROW(make_schedule(1, 0.1, 0.2), std::invalid_argument);
    EXPECT_THROW(make_schedule(10, 0.0, 0.2), std::invalid_argument);
    EXPECT_THROW(make_schedule(10, 0.3, 0.2), std::invalid_argument);
    EXPECT_THROW(make_schedule(10, 0.1, 1.0), std::invalid_argument);
}

TEST(QSample, ClosedForms) {
    const auto s = schedule_from_alpha_bar({1.0, 1.0, 0.25});
    const Image ones(4, 4, 1.0F);
    const Image zeros(4, 4, 0.0F);
    Image x0(4, 4);
    for (std::size_t i = 0; i < x0.size(); ++i) {
        x0[i] = 0.1F * static_cast<float>(i) - 0.5F;
    }
    EXPECT_EQ(q_sample(x0, 1, ones, s), x0);
    const auto signal = q_sample(ones, 2, zeros, s);
    for (float v : signal.values()) {
        EXPECT_FLOAT_EQ(v, 0.5F);
    }
    const auto noise = q_sample(zeros, 2, ones, s);
    for (float v : noise.values()) {
        EXPECT_NEAR(v, 0.8660254, 1e-6);
    }
    EXPECT_THROW(q_sample(x0, 2, Image(3, 4), s), std::invalid_argument);
    EXPECT_THROW(q_sample(x0, 0, ones, s), std::invalid_argument);
}

TEST(Ddim, EqualCoefficientsGiveIdentity) {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 50; ++trial) {
        const auto draw = test::random_draw(rng, 8);
        const auto s = schedule_from_alpha_bar({1.0, draw.ab_t, draw.ab_t});
        const test::FixedNoise predictor(test::random_tensor(draw.x0.shape(), rng));
        const Tensor out = ddim_step(draw.x0, 2, 1, Tensor(Shape{1, 4, 1, 1}), s, predictor);
        EXPECT_LE(test::max_abs_diff(out, draw.x0), 1e-6);
    }
}

TEST(Ddim, ZeroNoiseStepScales) {
    const auto s = schedule_from_alpha_bar({1.0, 0.8, 0.5});
    const test::ZeroNoise stub;
    std::mt19937_64 rng(2);
    const Tensor x = test::random_tensor(Shape{1, 1, 5, 5}, rng);
    const Tensor out = ddim_step(x, 2, 1, Tensor(Shape{1, 4, 1, 1}), s, stub);
    for (std::size_t i = 0; i < x.numel(); ++i) {
        EXPECT_NEAR(out[i], std::sqrt(0.8 / 0.5) * x[i], 1e-6);
    }
}

TEST(Ddim, ExactNoiseMovesAlongForwardProcess) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        const auto d = test::random_draw(rng, 8);
        EXPECT_LE(test::exact_eps_error(d), 1e-6);
    }
}

TEST(Ddim, StubSampleTelescopes) {
    const auto s = make_schedule(100, 1e-4, 0.02);
    const test::ZeroNoise stub;
    std::mt19937_64 rng(4);
    const Tensor xT = test::random_tensor(Shape{2, 1, 6, 6}, rng);
    for (int substeps : {1, 7, 20, 100}) {
        const Tensor out = ddim_sample(xT, Tensor(Shape{2, 4, 1, 1}), s, substeps, stub);
        for (std::size_t i = 0; i < xT.numel(); ++i) {
            EXPECT_NEAR(out[i], xT[i] / std::sqrt(s.at(100)), 1e-6);
        }
    }
}

TEST(Ddim, StubInversionIsExactInverse) {
    const auto s = make_schedule(100, 1e-4, 0.02);
    const test::ZeroNoise stub;
    std::mt19937_64 rng(5);
    const Tensor x0 = test::random_tensor(Shape{3, 1, 8, 8}, rng);
    const Tensor z(Shape{3, 4, 1, 1});
    for (int substeps : {1, 20, 100}) {
        const Tensor back = ddim_sample(ddim_invert(x0, z, s, substeps, stub), z, s, substeps, stub);
        EXPECT_LE(test::max_abs_diff(back, x0), 1e-6) << substeps;
    }
}

TEST(Ddim, TimestepsAndArgumentChecks) {
    std::vector<int> full(101);
    std::iota(full.begin(), full.end(), 0);
    EXPECT_EQ(ddim_timesteps(100, 100), full);
    const auto ts = ddim_timesteps(100, 20);
    EXPECT_EQ(ts.front(), 0);
    EXPECT_EQ(ts.back(), 100);
    EXPECT_EQ(ts.size(), 21U);
    EXPECT_TRUE(std::is_sorted(ts.begin(), ts.end()));
    EXPECT_THROW(ddim_timesteps(100, 101), std::invalid_argument);
    EXPECT_THROW(ddim_timesteps(100, 0), std::invalid_argument);
    const auto s = make_schedule(10, 1e-4, 0.02);
    const test::ZeroNoise stub;
    const Tensor x(Shape{1, 1, 2, 2});
    EXPECT_THROW(ddim_step(x, 3, 3, x, s, stub), std::invalid_argument);
    EXPECT_THROW(ddim_step(x, 3, 5, x, s, stub), std::invalid_argument);
}

DiffAEConfig tiny_config() {
    DiffAEConfig c;
    c.image_size = 32;
    c.latent_dim = 8;
    c.base_channels = 8;
    c.sample_substeps = 4;
    return c;
}

TEST(DiffAE, EncodeShapeAndDeterminism) {
    const DiffAE model(tiny_config(), 3);
    const Slice s = phantom::generate_phantom(1, 32, false, 0.0);
    const auto a = model.encode(s.pixels);
    EXPECT_EQ(a.size(), 8U);
    EXPECT_EQ(a, model.encode(s.pixels));
    for (float v : a) {
        EXPECT_TRUE(std::isfinite(v));
    }
    EXPECT_THROW(model.encode(phantom::generate_phantom(1, 64, false, 0.0).pixels), std::invalid_argument);
}

TEST(DiffAE, ReconstructionIsDeterministicAndShapePreserving) {
    const DiffAE model(tiny_config(), 3);
    const Slice s = phantom::generate_phantom(2, 32, true, 0.5);
    const Image a = model.reconstruct(s.pixels);
    EXPECT_TRUE(a.same_shape(s.pixels));
    EXPECT_EQ(a, model.reconstruct(s.pixels));
}

TEST(DiffAE, CheckpointRoundTrip) {
    test::TempDir dir;
    DiffAE model(tiny_config(), 5);
    model.train_steps = 17;
    save_diffae(dir.path() / "a.ckpt", model);
    const DiffAE back = load_diffae(dir.path() / "a.ckpt");
    EXPECT_EQ(back.train_steps, 17);
    EXPECT_EQ(back.config_hash(), model.config_hash());
    save_diffae(dir.path() / "b.ckpt", back);
    EXPECT_EQ(io::read_bytes(dir.path() / "a.ckpt"), io::read_bytes(dir.path() / "b.ckpt"));
}

TEST(DiffAE, TrainingLowersLossAndIsSeeded) {
    std::vector<Image> train;
    for (std::uint64_t i = 0; i < 16; ++i) {
        train.push_back(phantom::generate_phantom(i, 32, i % 2 == 0, 0.5 * static_cast<double>(i % 2 == 0)).pixels);
    }
    TrainConfig tc;
    tc.steps = 120;
    tc.batch_size = 4;
    tc.lr = 2e-3F;
    tc.log_every = 10;
    tc.eval_every = 0;
    tc.seed = 9;
    auto run = [&] {
        DiffAE model(tiny_config(), 1);
        const auto before = validation_loss(model, train, 16, 4);
        const auto r = train_diffae(model, train, {}, tc);
        return std::make_tuple(before, validation_loss(model, train, 16, 4), r);
    };
    const auto [before, after, r1] = run();
    EXPECT_LT(after, before);
    for (const auto& rec : r1.history) {
        EXPECT_TRUE(std::isfinite(rec.train_loss));
        EXPECT_GE(rec.train_loss, 0.0);
    }
    const auto r2 = std::get<2>(run());
    ASSERT_EQ(r1.history.size(), r2.history.size());
    for (std::size_t i = 0; i < r1.history.size(); ++i) {
        EXPECT_EQ(r1.history[i].train_loss, r2.history[i].train_loss);
    }
    EXPECT_THROW(train_diffae(*std::make_unique<DiffAE>(tiny_config(), 1), std::span<const Image>{}, {}, tc),
                 std::invalid_argument);
}

TEST(Psnr, KnownValues) {
    const Image a(4, 4, 0.0F);
    Image b(4, 4, 0.0F);
    b[0] = 0.2F;  // mse = 0.04 / 16
    EXPECT_NEAR(psnr(a, b), 10.0 * std::log10(4.0 / (0.04 / 16.0)), 1e-4);
    EXPECT_TRUE(std::isinf(psnr(a, a)));
}

}  // namespace
}  // namespace diffseg::diffae
