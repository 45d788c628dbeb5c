// Copyright (C) 2026 The DiffSeg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace diffseg::classifier {

using Vector = std::vector<double>;

/// One-layer logistic model on latent vectors: score = sigmoid(w.z + b).
struct ClassifierModel {
    Vector weights;
    double bias = 0.0;
    double f1 = 0.0;          // best validation F1
    double threshold = 0.5;
    std::uint64_t seed = 0;
    int best_epoch = 0;

    [[nodiscard]] std::size_t dim() const noexcept { return weights.size(); }

    [[nodiscard]] nlohmann::json to_json() const;
    static ClassifierModel from_json(const nlohmann::json& j);
};

struct LabeledLatent {
    std::string id;
    Vector z;
    bool positive = false;
};

struct ClassifierConfig {
    int epochs = 400;
    double lr = 0.01;
    double weight_decay = 1e-4;
    double val_fraction = 0.2;  // per class; the 4:1 split
    std::uint64_t seed = 0;
};

/// Stratified seeded 4:1 split, full-batch Adam on the binary cross entropy,
/// keeping the epoch with the best validation F1 (earliest on ties).
ClassifierModel train_classifier(std::span<const LabeledLatent> latents, const ClassifierConfig& config);

double logit(std::span<const double> z, const ClassifierModel& model);
double predict_score(std::span<const double> z, const ClassifierModel& model);
/// d logit / dz; equals the weight vector for this model.
Vector latent_gradient(std::span<const double> z, const ClassifierModel& model);

struct Confusion {
    int tp = 0;
    int fp = 0;
    int tn = 0;
    int fn = 0;
};

/// Positive-class F1 = 2PR / (P + R); 0 when there are no true positives.
double f1_score(const Confusion& c) noexcept;
Confusion confusion(std::span<const LabeledLatent> latents, const ClassifierModel& model);

/// Index split used by train_classifier, exposed for leakage checks.
struct SplitIndices {
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
};
SplitIndices stratified_split(std::span<const LabeledLatent> latents, double val_fraction, std::uint64_t seed);

void save_model(const std::filesystem::path& path, const ClassifierModel& model);
ClassifierModel load_model(const std::filesystem::path& path);

/// Latent table files: {"dim": d, "latents": [{"id", "label", "z"}]}.
void save_latents(const std::filesystem::path& path, std::span<const LabeledLatent> latents);
std::vector<LabeledLatent> load_latents(const std::filesystem::path& path);

}  // namespace diffseg::classifier
