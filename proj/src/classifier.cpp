// Copyright (C) 2026 The DiffSeg Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffseg/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "diffseg/hashing.hpp"
#include "diffseg/io.hpp"
#include "diffseg/log.hpp"

namespace diffseg::classifier {
namespace {

void check_dim(std::span<const double> z, const ClassifierModel& model) {
    if (z.size() != model.dim()) {
        throw std::invalid_argument("classifier: latent dimension " + std::to_string(z.size()) +
                                    " does not match model dimension " + std::to_string(model.dim()));
    }
}

double stable_sigmoid(double v) {
    if (v >= 0) {
        return 1.0 / (1.0 + std::exp(-v));
    }
    const double e = std::exp(v);
    return e / (1.0 + e);
}

}  // namespace

nlohmann::json ClassifierModel::to_json() const {
    return {{"kind", "latent_classifier"}, {"d", dim()},         {"weights", weights},
            {"bias", bias},                {"f1", f1},           {"threshold", threshold},
            {"seed", seed},                {"best_epoch", best_epoch}};
}

ClassifierModel ClassifierModel::from_json(const nlohmann::json& j) {
    ClassifierModel m;
    m.weights = j.at("weights").get<Vector>();
    m.bias = j.at("bias").get<double>();
    m.f1 = j.value("f1", 0.0);
    m.threshold = j.value("threshold", 0.5);
    m.seed = j.value("seed", std::uint64_t{0});
    m.best_epoch = j.value("best_epoch", 0);
    if (j.at("d").get<std::size_t>() != m.weights.size()) {
        throw std::invalid_argument("classifier model: d does not match weight count");
    }
    return m;
}

double logit(std::span<const double> z, const ClassifierModel& model) {
    check_dim(z, model);
    double s = model.bias;
    for (std::size_t i = 0; i < z.size(); ++i) {
        s += model.weights[i] * z[i];
    }
    return s;
}

double predict_score(std::span<const double> z, const ClassifierModel& model) {
    return stable_sigmoid(logit(z, model));
}

Vector latent_gradient(std::span<const double> z, const ClassifierModel& model) {
    check_dim(z, model);
    return model.weights;
}

double f1_score(const Confusion& c) noexcept {
    if (c.tp == 0) {
        return 0.0;
    }
    const double precision = static_cast<double>(c.tp) / (c.tp + c.fp);
    const double recall = static_cast<double>(c.tp) / (c.tp + c.fn);
    return 2.0 * precision * recall / (precision + recall);
}

Confusion confusion(std::span<const LabeledLatent> latents, const ClassifierModel& model) {
    Confusion c;
    for (const auto& l : latents) {
        const bool pred = predict_score(l.z, model) > model.threshold;
        if (pred && l.positive) {
            ++c.tp;
        } else if (pred) {
            ++c.fp;
        } else if (l.positive) {
            ++c.fn;
        } else {
            ++c.tn;
        }
    }
    return c;
}

SplitIndices stratified_split(std::span<const LabeledLatent> latents, double val_fraction, std::uint64_t seed) {
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
        throw std::invalid_argument("stratified_split: val_fraction must lie in (0, 1)");
    }
    std::mt19937_64 rng(derive_seed(seed, "classifier-split"));
    SplitIndices out;
    for (const bool cls : {false, true}) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < latents.size(); ++i) {
            if (latents[i].positive == cls) {
                idx.push_back(i);
            }
        }
        std::shuffle(idx.begin(), idx.end(), rng);
        const auto n_val = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::lround(val_fraction * static_cast<double>(idx.size()))));
        out.val.insert(out.val.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
        out.train.insert(out.train.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
    }
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.val.begin(), out.val.end());
    return out;
}

ClassifierModel train_classifier(std::span<const LabeledLatent> latents, const ClassifierConfig& config) {
    if (latents.empty()) {
        throw std::invalid_argument("train_classifier: no latents");
    }
    const std::size_t d = latents.front().z.size();
    int positives = 0;
    for (const auto& l : latents) {
        if (l.z.size() != d || d == 0) {
            throw std::invalid_argument("train_classifier: latents must share a nonzero dimension");
        }
        positives += l.positive ? 1 : 0;
    }
    if (positives < 2 || static_cast<std::size_t>(positives) + 2 > latents.size()) {
        throw std::invalid_argument("train_classifier: both classes must be present (at least two each)");
    }
    if (config.epochs < 1 || !(config.lr > 0.0)) {
        throw std::invalid_argument("train_classifier: epochs and lr must be positive");
    }

    const SplitIndices split = stratified_split(latents, config.val_fraction, config.seed);
    std::vector<LabeledLatent> val;
    for (auto i : split.val) {
        val.push_back(latents[i]);
    }

    ClassifierModel model;
    model.weights.assign(d, 0.0);
    model.seed = config.seed;
    ClassifierModel best = model;
    best.f1 = -1.0;

    // Adam over (w, b); index d holds the bias.
    constexpr double kBeta1 = 0.9;
    constexpr double kBeta2 = 0.999;
    constexpr double kEps = 1e-8;
    Vector m(d + 1, 0.0);
    Vector v(d + 1, 0.0);
    Vector grad(d + 1);
    const auto n = static_cast<double>(split.train.size());
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        std::fill(grad.begin(), grad.end(), 0.0);
        for (auto i : split.train) {
            const auto& l = latents[i];
            const double r = predict_score(l.z, model) - (l.positive ? 1.0 : 0.0);
            for (std::size_t k = 0; k < d; ++k) {
                grad[k] += r * l.z[k];
            }
            grad[d] += r;
        }
        for (std::size_t k = 0; k <= d; ++k) {
            grad[k] /= n;
            if (k < d) {
                grad[k] += config.weight_decay * model.weights[k];
            }
            m[k] = kBeta1 * m[k] + (1 - kBeta1) * grad[k];
            v[k] = kBeta2 * v[k] + (1 - kBeta2) * grad[k] * grad[k];
            const double mh = m[k] / (1 - std::pow(kBeta1, epoch));
            const double vh = v[k] / (1 - std::pow(kBeta2, epoch));
            const double step = config.lr * mh / (std::sqrt(vh) + kEps);
            if (k < d) {
                model.weights[k] -= step;
            } else {
                model.bias -= step;
            }
        }
        const double f1 = f1_score(confusion(val, model));
        if (f1 > best.f1) {
            best = model;
            best.f1 = f1;
            best.best_epoch = epoch;
        }
    }
    best.f1 = std::clamp(best.f1, 0.0, 1.0);
    log::info("classifier", "trained", {{"val_f1", best.f1}, {"best_epoch", best.best_epoch},
                                        {"train", split.train.size()}, {"val", split.val.size()}});
    return best;
}

void save_model(const std::filesystem::path& path, const ClassifierModel& model) {
    io::write_json(path, model.to_json());
}

ClassifierModel load_model(const std::filesystem::path& path) { return ClassifierModel::from_json(io::read_json(path)); }

void save_latents(const std::filesystem::path& path, std::span<const LabeledLatent> latents) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& l : latents) {
        rows.push_back({{"id", l.id}, {"label", l.positive ? "fibrosis_positive" : "fibrosis_negative"}, {"z", l.z}});
    }
    io::write_json(path, {{"dim", latents.empty() ? 0 : latents.front().z.size()}, {"latents", rows}});
}

std::vector<LabeledLatent> load_latents(const std::filesystem::path& path) {
    const auto doc = io::read_json(path);
    std::vector<LabeledLatent> out;
    for (const auto& row : doc.at("latents")) {
        LabeledLatent l;
        l.id = row.at("id").get<std::string>();
        l.positive = row.at("label").get<std::string>() == "fibrosis_positive";
        l.z = row.at("z").get<Vector>();
        out.push_back(std::move(l));
    }
    return out;
}

}  // namespace diffseg::classifier
