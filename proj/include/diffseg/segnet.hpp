// Copyright (C) 2026 The DiffSeg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "diffseg/image.hpp"
#include "diffseg/nn/module.hpp"
#include "diffseg/phantom.hpp"

namespace diffseg::segnet {

/// 2|a n b| / (|a| + |b|); 1 when both are empty.
double dice(const Mask& a, const Mask& b);

/// Linear interpolation between order statistics at position p (n - 1).
double percentile(std::vector<double> values, double p);

struct UNetConfig {
    int image_size = 64;
    int depth = 3;
    int base_channels = 16;

    [[nodiscard]] nlohmann::json to_json() const;
    static UNetConfig from_json(const nlohmann::json& j);
};

class UNet {
public:
    explicit UNet(UNetConfig config, std::uint64_t init_seed = 0);

    [[nodiscard]] const UNetConfig& config() const noexcept { return config_; }
    [[nodiscard]] nn::ParameterSet& params() noexcept { return params_; }
    [[nodiscard]] const nn::ParameterSet& params() const noexcept { return params_; }

    /// (N, 1, H, W) logits.
    nn::Var forward(const nn::Var& x) const;
    [[nodiscard]] nn::Tensor logits(const nn::Tensor& x) const;

private:
    UNetConfig config_;
    nn::ParameterSet params_;
    struct Net;
    std::shared_ptr<Net> net_;
};

struct SegModel {
    UNet net;
    int fold = 0;
    double val_dice = 0.0;
    int best_step = 0;
};

/// Sigmoid probability > threshold.
Mask predict_mask(const Image& image, const SegModel& model, double threshold = 0.5);
std::vector<Mask> predict_masks(std::span<const Image> images, const SegModel& model, double threshold = 0.5);

struct TrainingPair {
    std::string id;
    Image image;
    Mask mask;
};

struct SegTrainConfig {
    UNetConfig net;
    int folds = 5;
    double test_fraction = 0.2;
    int steps = 400;  // per fold
    int batch_size = 8;
    float lr = 2e-3F;
    int eval_every = 50;
    double dice_weight = 1.0;  // loss = BCE + dice_weight * soft Dice
    bool flip_augment = true;
    std::uint64_t seed = 0;

    [[nodiscard]] nlohmann::json to_json() const;
    static SegTrainConfig from_json(const nlohmann::json& j);
};

/// Index partition: `test` is the internal hold-out, folds[f] the validation
/// block of fold f; every other non-test index trains fold f.
struct FoldPlan {
    std::vector<std::size_t> test;
    std::vector<std::vector<std::size_t>> folds;

    [[nodiscard]] std::vector<std::size_t> train_indices(int fold) const;
};
FoldPlan plan_folds(std::size_t count, int folds, double test_fraction, std::uint64_t seed);

struct TrainOutcome {
    std::vector<SegModel> models;
    FoldPlan plan;
    double internal_test_dice = 0.0;  // best model vs pseudo masks on the hold-out
};

/// Trains one model per fold and keeps each fold's best-validation-Dice
/// parameters. Sees only images and pseudo masks.
TrainOutcome train_unet(std::span<const TrainingPair> pairs, const SegTrainConfig& config);

/// The fold model with the highest validation Dice (lowest fold on ties).
const SegModel& best_model(std::span<const SegModel> models);

struct EvalReport {
    std::vector<std::string> ids;
    std::vector<double> dice;
    double mean = 0.0;
    double median = 0.0;
    double q25 = 0.0;
    double q75 = 0.0;
    std::size_t n = 0;
    int model_fold = 0;

    [[nodiscard]] nlohmann::json to_json() const;
    static EvalReport from_json(const nlohmann::json& j);
};

EvalReport summarize(std::vector<std::string> ids, std::vector<double> dice);

/// Every slice must carry gt_mask.
EvalReport evaluate(std::span<const SegModel> models, std::span<const Slice> test);

void save_model(const std::filesystem::path& path, const SegModel& model);
SegModel load_model(const std::filesystem::path& path);

/// report.json and dice.csv under `dir`.
void write_report(const std::filesystem::path& dir, const EvalReport& report);

/// input | pseudo mask | prediction | ground truth, any column may be absent.
void write_panel(const std::filesystem::path& path, const Image& input, const Mask* pseudo, const Mask* prediction,
                 const Mask* truth);

}  // namespace diffseg::segnet
