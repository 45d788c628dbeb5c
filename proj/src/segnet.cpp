// Copyright (C) 2026 The DiffSeg Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffseg/segnet.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "diffseg/diffae.hpp"
#include "diffseg/hashing.hpp"
#include "diffseg/io.hpp"
#include "diffseg/log.hpp"
#include "diffseg/nn/checkpoint.hpp"

namespace diffseg::segnet {

using nn::Shape;
using nn::Tensor;
using nn::Var;

double dice(const Mask& a, const Mask& b) {
    require_same_shape(a, b, "dice: shape mismatch");
    std::size_t na = 0;
    std::size_t nb = 0;
    std::size_t both = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const bool x = a[i] != 0;
        const bool y = b[i] != 0;
        na += x ? 1 : 0;
        nb += y ? 1 : 0;
        both += x && y ? 1 : 0;
    }
    if (na + nb == 0) {
        return 1.0;
    }
    return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

double percentile(std::vector<double> values, double p) {
    if (values.empty()) {
        throw std::invalid_argument("percentile: empty list");
    }
    if (!(p >= 0.0 && p <= 1.0)) {
        throw std::invalid_argument("percentile: p must lie in [0, 1]");
    }
    std::sort(values.begin(), values.end());
    const double pos = p * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + (values[hi] - values[lo]) * frac;
}

nlohmann::json UNetConfig::to_json() const {
    return {{"image_size", image_size}, {"depth", depth}, {"base_channels", base_channels}};
}

UNetConfig UNetConfig::from_json(const nlohmann::json& j) {
    UNetConfig c;
    c.image_size = j.value("image_size", c.image_size);
    c.depth = j.value("depth", c.depth);
    c.base_channels = j.value("base_channels", c.base_channels);
    return c;
}

namespace {

int groups_for(int channels) { return channels % 8 == 0 ? 8 : (channels % 4 == 0 ? 4 : 1); }

// conv -> GN -> SiLU, twice.
struct DoubleConv {
    nn::Conv2d conv1;
    nn::GroupNorm gn1;
    nn::Conv2d conv2;
    nn::GroupNorm gn2;

    DoubleConv() = default;
    DoubleConv(nn::ParameterSet& p, const std::string& name, int in, int out, nn::Rng& rng)
        : conv1(p, name + ".conv1", in, out, 3, 1, rng),
          gn1(p, name + ".gn1", out, groups_for(out)),
          conv2(p, name + ".conv2", out, out, 3, 1, rng),
          gn2(p, name + ".gn2", out, groups_for(out)) {}

    Var operator()(const Var& x) const {
        return nn::silu(gn2(conv2(nn::silu(gn1(conv1(x))))));
    }
};

}  // namespace

struct UNet::Net {
    std::vector<DoubleConv> down;      // one per level
    std::vector<nn::Conv2d> pool;      // stride-2 convs between levels
    std::vector<nn::Conv2d> up_proj;   // 1x1 after upsampling, level l+1 -> l
    std::vector<DoubleConv> up;        // after concatenating the skip
    nn::Conv2d head;
};

UNet::UNet(UNetConfig config, std::uint64_t init_seed) : config_(config), net_(std::make_shared<Net>()) {
    if (config_.depth < 1 || config_.base_channels < 1) {
        throw std::invalid_argument("UNet: depth and base_channels must be >= 1");
    }
    if (config_.image_size % (1 << (config_.depth - 1)) != 0) {
        throw std::invalid_argument("UNet: image_size must be divisible by 2^(depth-1)");
    }
    nn::Rng rng(init_seed);
    Net& n = *net_;
    auto width = [&](int level) { return config_.base_channels << level; };
    for (int l = 0; l < config_.depth; ++l) {
        const std::string tag = std::to_string(l);
        n.down.emplace_back(params_, "down" + tag, l == 0 ? 1 : width(l), width(l), rng);
        if (l + 1 < config_.depth) {
            n.pool.emplace_back(params_, "pool" + tag, width(l), width(l + 1), 3, 2, rng);
        }
    }
    for (int l = config_.depth - 2; l >= 0; --l) {
        const std::string tag = std::to_string(l);
        n.up_proj.emplace_back(params_, "up_proj" + tag, width(l + 1), width(l), 1, 1, rng);
        n.up.emplace_back(params_, "up" + tag, 2 * width(l), width(l), rng);
    }
    n.head = nn::Conv2d(params_, "head", width(0), 1, 1, 1, rng);
}

Var UNet::forward(const Var& x) const {
    const Shape s = x->value.shape();
    if (s.c != 1 || s.h != config_.image_size || s.w != config_.image_size) {
        throw std::invalid_argument("UNet: input " + nn::to_string(s) + " does not match resolution " +
                                    std::to_string(config_.image_size));
    }
    const Net& n = *net_;
    std::vector<Var> skips;
    Var h = x;
    for (int l = 0; l < config_.depth; ++l) {
        if (l > 0) {
            h = n.pool[static_cast<std::size_t>(l - 1)](h);
        }
        h = n.down[static_cast<std::size_t>(l)](h);
        skips.push_back(h);
    }
    for (std::size_t i = 0; i < n.up.size(); ++i) {
        const std::size_t level = skips.size() - 2 - i;
        h = n.up_proj[i](nn::upsample2x(h));
        h = n.up[i](nn::concat_channels(h, skips[level]));
    }
    return n.head(h);
}

Tensor UNet::logits(const Tensor& x) const {
    nn::NoGradGuard guard;
    return forward(nn::constant(x))->value;
}

std::vector<Mask> predict_masks(std::span<const Image> images, const SegModel& model, double threshold) {
    std::vector<Mask> out;
    constexpr std::size_t kBatch = 16;
    for (std::size_t first = 0; first < images.size(); first += kBatch) {
        const std::size_t count = std::min(kBatch, images.size() - first);
        const Tensor l = model.net.logits(diffae::to_tensor(images.subspan(first, count)));
        const Shape s = l.shape();
        for (std::size_t i = 0; i < count; ++i) {
            Mask m(s.h, s.w, 0);
            for (std::size_t p = 0; p < m.size(); ++p) {
                m[p] = nn::sigmoid(l[s.plane() * i + p]) > threshold ? 1 : 0;
            }
            out.push_back(std::move(m));
        }
    }
    return out;
}

Mask predict_mask(const Image& image, const SegModel& model, double threshold) {
    return predict_masks(std::span<const Image>(&image, 1), model, threshold).front();
}

nlohmann::json SegTrainConfig::to_json() const {
    return {{"net", net.to_json()},         {"folds", folds},         {"test_fraction", test_fraction},
            {"steps", steps},               {"batch_size", batch_size}, {"lr", lr},
            {"eval_every", eval_every},     {"dice_weight", dice_weight}, {"flip_augment", flip_augment},
            {"seed", seed}};
}

SegTrainConfig SegTrainConfig::from_json(const nlohmann::json& j) {
    SegTrainConfig c;
    if (j.contains("net")) {
        c.net = UNetConfig::from_json(j.at("net"));
    }
    c.folds = j.value("folds", c.folds);
    c.test_fraction = j.value("test_fraction", c.test_fraction);
    c.steps = j.value("steps", c.steps);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    c.eval_every = j.value("eval_every", c.eval_every);
    c.dice_weight = j.value("dice_weight", c.dice_weight);
    c.flip_augment = j.value("flip_augment", c.flip_augment);
    c.seed = j.value("seed", c.seed);
    return c;
}

std::vector<std::size_t> FoldPlan::train_indices(int fold) const {
    std::vector<std::size_t> out;
    for (std::size_t f = 0; f < folds.size(); ++f) {
        if (static_cast<int>(f) != fold) {
            out.insert(out.end(), folds[f].begin(), folds[f].end());
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

FoldPlan plan_folds(std::size_t count, int folds, double test_fraction, std::uint64_t seed) {
    if (folds < 2) {
        throw std::invalid_argument("plan_folds: folds must be >= 2");
    }
    if (!(test_fraction >= 0.0 && test_fraction < 1.0)) {
        throw std::invalid_argument("plan_folds: test_fraction must lie in [0, 1)");
    }
    if (count < static_cast<std::size_t>(folds) * 2) {
        throw std::invalid_argument("plan_folds: need at least 2 pairs per fold");
    }
    std::vector<std::size_t> order(count);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(derive_seed(seed, "folds"));
    std::shuffle(order.begin(), order.end(), rng);
    FoldPlan plan;
    const auto n_test = static_cast<std::size_t>(std::floor(test_fraction * static_cast<double>(count)));
    plan.test.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
    std::sort(plan.test.begin(), plan.test.end());
    const std::size_t pool = count - n_test;
    if (pool < static_cast<std::size_t>(folds) * 2) {
        throw std::invalid_argument("plan_folds: too few pairs left after the test split");
    }
    plan.folds.resize(static_cast<std::size_t>(folds));
    // Contiguous blocks of the shuffled pool; sizes differ by at most one.
    std::size_t at = n_test;
    for (int f = 0; f < folds; ++f) {
        const std::size_t size = pool / folds + (static_cast<std::size_t>(f) < pool % folds ? 1 : 0);
        auto& block = plan.folds[static_cast<std::size_t>(f)];
        block.assign(order.begin() + static_cast<std::ptrdiff_t>(at),
                     order.begin() + static_cast<std::ptrdiff_t>(at + size));
        std::sort(block.begin(), block.end());
        at += size;
    }
    return plan;
}

namespace {

double mean_dice(std::span<const TrainingPair> pairs, const std::vector<std::size_t>& idx, const SegModel& model) {
    if (idx.empty()) {
        return 0.0;
    }
    std::vector<Image> images;
    for (auto i : idx) {
        images.push_back(pairs[i].image);
    }
    const auto pred = predict_masks(images, model);
    double s = 0.0;
    for (std::size_t k = 0; k < idx.size(); ++k) {
        s += dice(pred[k], pairs[idx[k]].mask);
    }
    return s / static_cast<double>(idx.size());
}

SegModel train_fold(std::span<const TrainingPair> pairs, const FoldPlan& plan, int fold,
                    const SegTrainConfig& config) {
    const std::uint64_t fold_seed = derive_seed(config.seed, "fold" + std::to_string(fold));
    SegModel model{UNet(config.net, derive_seed(fold_seed, "init")), fold, -1.0, 0};
    const auto train = plan.train_indices(fold);
    const auto& val = plan.folds[static_cast<std::size_t>(fold)];
    nn::Adam opt(model.net.params(), nn::AdamConfig{.lr = config.lr});
    nn::Rng rng(derive_seed(fold_seed, "batches"));
    std::uniform_int_distribution<std::size_t> pick(0, train.size() - 1);
    std::bernoulli_distribution flip(0.5);
    const int size = config.net.image_size;
    std::vector<Tensor> best = nn::snapshot(model.net.params());

    for (int step = 1; step <= config.steps; ++step) {
        // Cosine decay keeps late checkpoints stable for selection.
        const double progress = static_cast<double>(step - 1) / std::max(1, config.steps);
        opt.set_lr(static_cast<float>(config.lr * 0.5 * (1.0 + std::cos(progress * 3.14159265358979))));
        Tensor x(Shape{config.batch_size, 1, size, size});
        Tensor y(Shape{config.batch_size, 1, size, size});
        for (int b = 0; b < config.batch_size; ++b) {
            const auto& pair = pairs[train[pick(rng)]];
            const bool mirror = config.flip_augment && flip(rng);
            for (int r = 0; r < size; ++r) {
                for (int c = 0; c < size; ++c) {
                    const int sc = mirror ? size - 1 - c : c;
                    x.at(b, 0, r, c) = pair.image.at(r, sc);
                    y.at(b, 0, r, c) = pair.mask.at(r, sc) != 0 ? 1.0F : 0.0F;
                }
            }
        }
        const Var logits = model.net.forward(nn::constant(x));
        const Var loss = nn::weighted_sum(nn::bce_with_logits(logits, y), 1.0F, nn::soft_dice_loss(logits, y),
                                          static_cast<float>(config.dice_weight));
        if (!std::isfinite(loss->value[0])) {
            throw std::runtime_error("train_unet: non-finite loss in fold " + std::to_string(fold));
        }
        nn::backward(loss);
        opt.step();
        model.net.params().zero_grad();

        if (step % config.eval_every == 0 || step == config.steps) {
            const double d = mean_dice(pairs, val, model);
            if (d > model.val_dice) {
                model.val_dice = d;
                model.best_step = step;
                best = nn::snapshot(model.net.params());
            }
            log::info("segnet", "fold eval",
                      {{"fold", fold}, {"step", step}, {"loss", loss->value[0]}, {"val_dice", d}});
        }
    }
    nn::restore(model.net.params(), best);
    model.val_dice = std::clamp(model.val_dice, 0.0, 1.0);
    return model;
}

}  // namespace

TrainOutcome train_unet(std::span<const TrainingPair> pairs, const SegTrainConfig& config) {
    if (config.steps < 1 || config.batch_size < 1 || config.eval_every < 1) {
        throw std::invalid_argument("train_unet: steps, batch_size and eval_every must be >= 1");
    }
    if (pairs.size() < static_cast<std::size_t>(std::max(config.folds, 0)) * 2) {
        throw std::invalid_argument("train_unet: need at least 2 pairs per fold");
    }
    for (const auto& p : pairs) {
        if (p.image.height() != config.net.image_size || p.image.width() != config.net.image_size ||
            !p.image.same_shape(p.mask)) {
            throw std::invalid_argument("train_unet: pair '" + p.id + "' has the wrong resolution");
        }
    }
    TrainOutcome out;
    out.plan = plan_folds(pairs.size(), config.folds, config.test_fraction, config.seed);
    for (int f = 0; f < config.folds; ++f) {
        out.models.push_back(train_fold(pairs, out.plan, f, config));
        log::info("segnet", "fold done", {{"fold", f}, {"val_dice", out.models.back().val_dice},
                                          {"best_step", out.models.back().best_step}});
    }
    out.internal_test_dice = mean_dice(pairs, out.plan.test, best_model(out.models));
    return out;
}

const SegModel& best_model(std::span<const SegModel> models) {
    if (models.empty()) {
        throw std::invalid_argument("best_model: no models");
    }
    const SegModel* best = &models.front();
    for (const auto& m : models) {
        if (m.val_dice > best->val_dice) {
            best = &m;
        }
    }
    return *best;
}

nlohmann::json EvalReport::to_json() const {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t i = 0; i < n; ++i) {
        rows.push_back({{"id", ids[i]}, {"dice", dice[i]}});
    }
    return {{"n", n},       {"mean", mean}, {"median", median}, {"q25", q25},
            {"q75", q75},   {"model_fold", model_fold},         {"per_slice", rows}};
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
    EvalReport r;
    for (const auto& row : j.at("per_slice")) {
        r.ids.push_back(row.at("id").get<std::string>());
        r.dice.push_back(row.at("dice").get<double>());
    }
    r.n = j.at("n").get<std::size_t>();
    r.mean = j.at("mean").get<double>();
    r.median = j.at("median").get<double>();
    r.q25 = j.at("q25").get<double>();
    r.q75 = j.at("q75").get<double>();
    r.model_fold = j.value("model_fold", 0);
    return r;
}

EvalReport summarize(std::vector<std::string> ids, std::vector<double> dice) {
    if (dice.empty() || ids.size() != dice.size()) {
        throw std::invalid_argument("summarize: need a non-empty Dice list with matching ids");
    }
    EvalReport r;
    r.n = dice.size();
    r.mean = std::accumulate(dice.begin(), dice.end(), 0.0) / static_cast<double>(r.n);
    r.median = percentile(dice, 0.5);
    r.q25 = percentile(dice, 0.25);
    r.q75 = percentile(dice, 0.75);
    r.ids = std::move(ids);
    r.dice = std::move(dice);
    return r;
}

EvalReport evaluate(std::span<const SegModel> models, std::span<const Slice> test) {
    if (test.empty()) {
        throw std::invalid_argument("evaluate: no test slices");
    }
    for (const auto& s : test) {
        if (!s.gt_mask) {
            throw std::invalid_argument("evaluate: slice '" + s.id + "' has no ground-truth mask");
        }
    }
    const SegModel& model = best_model(models);
    std::vector<Image> images;
    for (const auto& s : test) {
        images.push_back(s.pixels);
    }
    const auto pred = predict_masks(images, model);
    std::vector<std::string> ids;
    std::vector<double> scores;
    for (std::size_t i = 0; i < test.size(); ++i) {
        ids.push_back(test[i].id);
        scores.push_back(dice(pred[i], *test[i].gt_mask));
    }
    EvalReport r = summarize(std::move(ids), std::move(scores));
    r.model_fold = model.fold;
    return r;
}

void save_model(const std::filesystem::path& path, const SegModel& model) {
    nlohmann::json meta = {{"kind", "unet"},
                           {"version", 1},
                           {"config", model.net.config().to_json()},
                           {"fold", model.fold},
                           {"val_dice", model.val_dice},
                           {"best_step", model.best_step}};
    nn::save_checkpoint(path, nn::make_checkpoint(model.net.params(), meta));
}

SegModel load_model(const std::filesystem::path& path) {
    const nn::Checkpoint ckpt = nn::load_checkpoint(path);
    if (ckpt.header.value("kind", "") != "unet") {
        throw std::invalid_argument("not a U-Net checkpoint: " + path.string());
    }
    SegModel m{UNet(UNetConfig::from_json(ckpt.header.at("config"))), ckpt.header.at("fold").get<int>(),
               ckpt.header.at("val_dice").get<double>(), ckpt.header.value("best_step", 0)};
    nn::load_into(m.net.params(), ckpt);
    return m;
}

void write_report(const std::filesystem::path& dir, const EvalReport& report) {
    io::ensure_dir(dir);
    io::write_json(dir / "report.json", report.to_json());
    std::ostringstream csv;
    csv << "id,dice\n";
    for (std::size_t i = 0; i < report.n; ++i) {
        char line[64];
        std::snprintf(line, sizeof line, ",%.17g\n", report.dice[i]);
        csv << report.ids[i] << line;
    }
    io::write_text(dir / "dice.csv", csv.str());
}

void write_panel(const std::filesystem::path& path, const Image& input, const Mask* pseudo, const Mask* prediction,
                 const Mask* truth) {
    const int h = input.height();
    const int w = input.width();
    constexpr int kCols = 4;
    constexpr int kGap = 2;
    const int total_w = kCols * w + (kCols - 1) * kGap;
    std::vector<std::uint8_t> rgb(static_cast<std::size_t>(h) * total_w * 3, 40);
    const Mask* masks[kCols] = {nullptr, pseudo, prediction, truth};
    // Mask columns draw the image in gray with the mask tinted on top.
    const std::uint8_t tint[kCols][3] = {{0, 0, 0}, {255, 200, 0}, {0, 160, 255}, {0, 220, 90}};
    for (int col = 0; col < kCols; ++col) {
        if (col > 0 && masks[col] == nullptr) {
            continue;
        }
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const auto g = static_cast<std::uint8_t>(std::clamp((input.at(y, x) + 1.0F) * 127.5F, 0.0F, 255.0F));
                const std::size_t i = (static_cast<std::size_t>(y) * total_w + col * (w + kGap) + x) * 3;
                const bool on = col > 0 && masks[col]->at(y, x) != 0;
                for (int c = 0; c < 3; ++c) {
                    rgb[i + c] = on ? static_cast<std::uint8_t>((g + 2 * tint[col][c]) / 3) : g;
                }
            }
        }
    }
    io::write_rgb_png8(path, h, total_w, rgb);
}

}  // namespace diffseg::segnet
