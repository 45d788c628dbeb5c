// Copyright (C) 2026 The DiffSeg Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <numeric>
#include <set>

#include <gtest/gtest.h>

#include "diffseg/nn/autograd.hpp"
#include "diffseg/nn/module.hpp"
#include "diffseg/phantom.hpp"
#include "diffseg/segnet.hpp"
#include "test_util.hpp"

namespace diffseg::segnet {
namespace {

Mask row_mask(std::initializer_list<int> bits) {
    std::vector<std::uint8_t> v(bits.begin(), bits.end());
    return Mask(1, static_cast<int>(v.size()), v);
}

TEST(Dice, Examples) {
    const Mask a = row_mask({1, 1, 0, 0});
    const Mask b = row_mask({1, 1, 1, 1});
    EXPECT_DOUBLE_EQ(dice(a, a), 1.0);
    EXPECT_DOUBLE_EQ(dice(a, row_mask({0, 0, 1, 1})), 0.0);
    EXPECT_NEAR(dice(a, b), 2.0 * 2 / (2 + 4), 1e-12);
    EXPECT_DOUBLE_EQ(dice(a, b), dice(b, a));
    EXPECT_DOUBLE_EQ(dice(Mask(3, 3), Mask(3, 3)), 1.0);
    EXPECT_DOUBLE_EQ(dice(Mask(3, 3), Mask(3, 3, 1)), 0.0);
    // Any nonzero byte counts as foreground.
    EXPECT_DOUBLE_EQ(dice(row_mask({255, 0}), row_mask({1, 0})), 1.0);
    EXPECT_THROW(dice(a, Mask(2, 2)), std::invalid_argument);
}

TEST(Percentile, LinearInterpolation) {
    const std::vector<double> v = {0.8, 0.2, 0.6, 0.4};
    EXPECT_NEAR(percentile(v, 0.5), 0.5, 1e-12);
    EXPECT_NEAR(percentile(v, 0.25), 0.35, 1e-12);
    EXPECT_NEAR(percentile(v, 0.75), 0.65, 1e-12);
    EXPECT_DOUBLE_EQ(percentile(v, 0.0), 0.2);
    EXPECT_DOUBLE_EQ(percentile(v, 1.0), 0.8);
    EXPECT_DOUBLE_EQ(percentile({3.0}, 0.3), 3.0);
    EXPECT_THROW(percentile({}, 0.5), std::invalid_argument);
    EXPECT_THROW(percentile(v, 1.5), std::invalid_argument);
    EXPECT_THROW(percentile(v, -0.1), std::invalid_argument);
}

TEST(Summarize, Statistics) {
    const auto r = summarize({"a", "b", "c", "d"}, {0.8, 0.2, 0.6, 0.4});
    EXPECT_EQ(r.n, 4U);
    EXPECT_NEAR(r.mean, 0.5, 1e-12);
    EXPECT_NEAR(r.median, 0.5, 1e-12);
    EXPECT_NEAR(r.q25, 0.35, 1e-12);
    EXPECT_NEAR(r.q75, 0.65, 1e-12);
    EXPECT_EQ(r.ids[1], "b");
    const auto back = EvalReport::from_json(r.to_json());
    EXPECT_EQ(back.ids, r.ids);
    EXPECT_EQ(back.dice, r.dice);
    EXPECT_DOUBLE_EQ(back.q75, r.q75);
    EXPECT_THROW(summarize({}, {}), std::invalid_argument);
    EXPECT_THROW(summarize({"a"}, {0.1, 0.2}), std::invalid_argument);
}

TEST(FoldPlan, HundredPairsFiveFolds) {
    const auto plan = plan_folds(100, 5, 0.2, 11);
    EXPECT_EQ(plan.test.size(), 20U);
    ASSERT_EQ(plan.folds.size(), 5U);
    std::set<std::size_t> seen(plan.test.begin(), plan.test.end());
    for (int f = 0; f < 5; ++f) {
        const auto& val = plan.folds[static_cast<std::size_t>(f)];
        const auto train = plan.train_indices(f);
        EXPECT_EQ(val.size(), 16U);
        EXPECT_EQ(train.size(), 64U);
        std::set<std::size_t> t(train.begin(), train.end());
        for (auto i : val) {
            EXPECT_FALSE(t.count(i));
            EXPECT_TRUE(seen.insert(i).second) << "index " << i << " in two blocks";
        }
        for (auto i : plan.test) {
            EXPECT_FALSE(t.count(i));
        }
    }
    EXPECT_EQ(seen.size(), 100U);

    const auto again = plan_folds(100, 5, 0.2, 11);
    EXPECT_EQ(again.test, plan.test);
    EXPECT_EQ(again.folds, plan.folds);
    EXPECT_NE(plan_folds(100, 5, 0.2, 12).test, plan.test);
}

TEST(FoldPlan, UnevenAndErrors) {
    const auto plan = plan_folds(23, 3, 0.0, 1);
    EXPECT_TRUE(plan.test.empty());
    std::vector<std::size_t> sizes;
    for (const auto& f : plan.folds) {
        sizes.push_back(f.size());
    }
    EXPECT_LE(*std::max_element(sizes.begin(), sizes.end()) - *std::min_element(sizes.begin(), sizes.end()), 1U);
    EXPECT_EQ(std::accumulate(sizes.begin(), sizes.end(), std::size_t{0}), 23U);

    EXPECT_THROW(plan_folds(100, 1, 0.2, 1), std::invalid_argument);
    EXPECT_THROW(plan_folds(100, 5, 1.0, 1), std::invalid_argument);
    EXPECT_THROW(plan_folds(100, 5, -0.1, 1), std::invalid_argument);
    EXPECT_THROW(plan_folds(9, 5, 0.0, 1), std::invalid_argument);
    EXPECT_THROW(plan_folds(12, 5, 0.5, 1), std::invalid_argument);
}

SegModel small_model(std::uint64_t seed = 3) {
    return SegModel{UNet(UNetConfig{.image_size = 32, .depth = 3, .base_channels = 8}, seed), 0, 0.0, 0};
}

TEST(Predict, ThresholdExtremes) {
    const SegModel model = small_model();
    const auto s = phantom::generate_phantom(5, 32, true, 0.6);
    EXPECT_EQ(count_foreground(predict_mask(s.pixels, model, 1.0)), 0U);
    EXPECT_EQ(count_foreground(predict_mask(s.pixels, model, 0.0)), s.pixels.size());
    EXPECT_EQ(predict_mask(s.pixels, model), predict_mask(s.pixels, model));

    const std::vector<Image> batch = {s.pixels, phantom::generate_phantom(6, 32, false, 0).pixels};
    const auto masks = predict_masks(batch, model);
    ASSERT_EQ(masks.size(), 2U);
    EXPECT_EQ(masks[0], predict_mask(batch[0], model));
    EXPECT_EQ(masks[1], predict_mask(batch[1], model));
}

TEST(Train, OverfitsSinglePair) {
    const auto s = phantom::generate_phantom(21, 32, true, 0.8);
    ASSERT_GT(count_foreground(*s.gt_mask), 20U);
    SegModel model = small_model(9);
    nn::Adam opt(model.net.params(), nn::AdamConfig{.lr = 3e-3F});
    nn::Tensor x(nn::Shape{1, 1, 32, 32});
    nn::Tensor y(nn::Shape{1, 1, 32, 32});
    for (int r = 0; r < 32; ++r) {
        for (int c = 0; c < 32; ++c) {
            x.at(0, 0, r, c) = s.pixels.at(r, c);
            y.at(0, 0, r, c) = s.gt_mask->at(r, c) != 0 ? 1.0F : 0.0F;
        }
    }
    double best = 0.0;
    for (int step = 0; step < 300 && best < 0.95; ++step) {
        const nn::Var logits = model.net.forward(nn::constant(x));
        const nn::Var loss =
            nn::weighted_sum(nn::bce_with_logits(logits, y), 1.0F, nn::soft_dice_loss(logits, y), 1.0F);
        nn::backward(loss);
        opt.step();
        model.net.params().zero_grad();
        if (step % 10 == 9) {
            best = std::max(best, dice(predict_mask(s.pixels, model), *s.gt_mask));
        }
    }
    EXPECT_GE(best, 0.95);
}

TEST(Train, RejectsBadInput) {
    std::vector<TrainingPair> pairs;
    for (int i = 0; i < 6; ++i) {
        const auto s = phantom::generate_phantom(static_cast<std::uint64_t>(i), 32, true, 0.5);
        pairs.push_back({s.id, s.pixels, *s.gt_mask});
    }
    SegTrainConfig cfg;
    cfg.net = UNetConfig{.image_size = 32, .depth = 3, .base_channels = 8};
    cfg.folds = 5;
    EXPECT_THROW(train_unet(pairs, cfg), std::invalid_argument);
    cfg.folds = 2;
    cfg.steps = 0;
    EXPECT_THROW(train_unet(pairs, cfg), std::invalid_argument);
    cfg.steps = 2;
    cfg.net.image_size = 64;
    EXPECT_THROW(train_unet(pairs, cfg), std::invalid_argument);
}

TEST(Train, FoldsAreSeededAndSelected) {
    std::vector<TrainingPair> pairs;
    for (int i = 0; i < 8; ++i) {
        const auto s = phantom::generate_phantom(static_cast<std::uint64_t>(100 + i), 32, true, 0.5);
        pairs.push_back({s.id, s.pixels, *s.gt_mask});
    }
    SegTrainConfig cfg;
    cfg.net = UNetConfig{.image_size = 32, .depth = 2, .base_channels = 4};
    cfg.folds = 2;
    cfg.test_fraction = 0.25;
    cfg.steps = 6;
    cfg.batch_size = 2;
    cfg.eval_every = 3;
    cfg.seed = 4;
    const auto a = train_unet(pairs, cfg);
    const auto b = train_unet(pairs, cfg);
    ASSERT_EQ(a.models.size(), 2U);
    EXPECT_EQ(a.plan.test.size(), 2U);
    for (std::size_t f = 0; f < 2; ++f) {
        EXPECT_EQ(a.models[f].fold, static_cast<int>(f));
        EXPECT_DOUBLE_EQ(a.models[f].val_dice, b.models[f].val_dice);
        EXPECT_GE(a.models[f].val_dice, 0.0);
        EXPECT_LE(a.models[f].val_dice, 1.0);
        EXPECT_TRUE(a.models[f].best_step == 3 || a.models[f].best_step == 6);
    }
    EXPECT_DOUBLE_EQ(a.internal_test_dice, b.internal_test_dice);
}

TEST(BestModel, HighestValidationFirstOnTies) {
    std::vector<SegModel> models;
    for (double d : {0.4, 0.7, 0.7, 0.1}) {
        models.push_back(small_model());
        models.back().fold = static_cast<int>(models.size()) - 1;
        models.back().val_dice = d;
    }
    EXPECT_EQ(best_model(models).fold, 1);
    EXPECT_THROW(best_model(std::span<const SegModel>{}), std::invalid_argument);
}

TEST(Evaluate, PerfectPredictorAndMissingTruth) {
    const SegModel model = small_model();
    std::vector<Slice> test;
    for (int i = 0; i < 3; ++i) {
        auto s = phantom::generate_phantom(static_cast<std::uint64_t>(40 + i), 32, true, 0.5);
        // Ground truth equal to the model's own prediction scores Dice 1.
        s.gt_mask = predict_mask(s.pixels, model);
        test.push_back(std::move(s));
    }
    std::vector<SegModel> models;
    models.push_back(small_model());
    const auto r = evaluate(models, test);
    EXPECT_EQ(r.n, 3U);
    EXPECT_DOUBLE_EQ(r.mean, 1.0);
    EXPECT_DOUBLE_EQ(r.median, 1.0);
    EXPECT_DOUBLE_EQ(r.q75 - r.q25, 0.0);

    test[1].gt_mask.reset();
    EXPECT_THROW(evaluate(models, test), std::invalid_argument);
    EXPECT_THROW(evaluate(models, std::span<const Slice>{}), std::invalid_argument);
}

TEST(ModelIo, RoundTrip) {
    test::TempDir dir;
    SegModel model = small_model(17);
    model.fold = 3;
    model.val_dice = 0.625;
    model.best_step = 150;
    save_model(dir.path() / "m.ckpt", model);
    const SegModel back = load_model(dir.path() / "m.ckpt");
    EXPECT_EQ(back.fold, 3);
    EXPECT_DOUBLE_EQ(back.val_dice, 0.625);
    EXPECT_EQ(back.best_step, 150);
    const auto s = phantom::generate_phantom(2, 32, true, 0.7);
    const nn::Tensor x = [&] {
        nn::Tensor t(nn::Shape{1, 1, 32, 32});
        for (int r = 0; r < 32; ++r) {
            for (int c = 0; c < 32; ++c) {
                t.at(0, 0, r, c) = s.pixels.at(r, c);
            }
        }
        return t;
    }();
    const auto la = model.net.logits(x);
    const auto lb = back.net.logits(x);
    for (std::size_t i = 0; i < la.numel(); ++i) {
        ASSERT_EQ(la[i], lb[i]);
    }
}

}  // namespace
}  // namespace diffseg::segnet
