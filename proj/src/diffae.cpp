// Copyright (C) 2026 The DiffSeg Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffseg/diffae.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "diffseg/hashing.hpp"
#include "diffseg/io.hpp"

namespace diffseg::diffae {

using nn::Shape;
using nn::Tensor;
using nn::Var;

namespace {

void check_schedule(const std::vector<double>& ab) {
    if (ab.size() < 3) {
        throw std::invalid_argument("schedule: need at least two steps");
    }
    if (ab.front() != 1.0) {
        throw std::invalid_argument("schedule: alpha_bar[0] must be 1");
    }
    for (double v : ab) {
        if (!(v > 0.0 && v <= 1.0)) {
            throw std::invalid_argument("schedule: alpha_bar entries must lie in (0, 1]");
        }
    }
}

void check_t(int t, const NoiseSchedule& s, const char* what) {
    if (t < 0 || t > s.steps) {
        throw std::invalid_argument(what);
    }
}

}  // namespace

NoiseSchedule make_schedule(int steps, double beta_start, double beta_end) {
    if (steps < 2) {
        throw std::invalid_argument("make_schedule: steps must be >= 2");
    }
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
        throw std::invalid_argument("make_schedule: require 0 < beta_start <= beta_end < 1");
    }
    NoiseSchedule s;
    s.steps = steps;
    s.alpha_bar.resize(static_cast<std::size_t>(steps) + 1);
    s.alpha_bar[0] = 1.0;
    for (int t = 1; t <= steps; ++t) {
        const double beta = beta_start + (beta_end - beta_start) * (t - 1) / (steps - 1);
        s.alpha_bar[static_cast<std::size_t>(t)] = s.alpha_bar[static_cast<std::size_t>(t) - 1] * (1.0 - beta);
    }
    return s;
}

NoiseSchedule schedule_from_alpha_bar(std::vector<double> alpha_bar) {
    check_schedule(alpha_bar);
    NoiseSchedule s;
    s.steps = static_cast<int>(alpha_bar.size()) - 1;
    s.alpha_bar = std::move(alpha_bar);
    return s;
}

Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& schedule) {
    if (x0.shape() != eps.shape()) {
        throw std::invalid_argument("q_sample: eps shape does not match x0");
    }
    if (t < 1 || t > schedule.steps) {
        throw std::invalid_argument("q_sample: t out of range");
    }
    const double ab = schedule.at(t);
    const auto a = static_cast<float>(std::sqrt(ab));
    const auto b = static_cast<float>(std::sqrt(1.0 - ab));
    Tensor out(x0.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) {
        out[i] = a * x0[i] + b * eps[i];
    }
    return out;
}

Image q_sample(const Image& x0, int t, const Image& eps, const NoiseSchedule& schedule) {
    require_same_shape(x0, eps, "q_sample: eps shape does not match x0");
    return to_image(q_sample(to_tensor(x0), t, to_tensor(eps), schedule));
}

Tensor ddim_step(const Tensor& x_t, int t, int t_prev, const Tensor& z, const NoiseSchedule& schedule,
                 const NoisePredictor& model) {
    check_t(t, schedule, "ddim_step: t out of range");
    check_t(t_prev, schedule, "ddim_step: t_prev out of range");
    if (t_prev >= t) {
        throw std::invalid_argument("ddim_step: t_prev must be < t");
    }
    const Tensor eps = model.predict_noise(x_t, t, z);
    if (eps.shape() != x_t.shape()) {
        throw std::invalid_argument("ddim_step: predictor returned wrong shape");
    }
    const double ab_t = schedule.at(t);
    const double ab_p = schedule.at(t_prev);
    const double ratio = std::sqrt(ab_p) / std::sqrt(ab_t);
    const double s_t = std::sqrt(1.0 - ab_t);
    const double s_p = std::sqrt(1.0 - ab_p);
    Tensor out(x_t.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) {
        const double e = eps[i];
        out[i] = static_cast<float>(ratio * (x_t[i] - s_t * e) + s_p * e);
    }
    return out;
}

std::vector<int> ddim_timesteps(int steps, int substeps) {
    if (substeps < 1) {
        throw std::invalid_argument("ddim: substeps must be >= 1");
    }
    if (substeps > steps) {
        throw std::invalid_argument("ddim: substeps must not exceed T");
    }
    std::vector<int> ts(static_cast<std::size_t>(substeps) + 1);
    for (int i = 0; i <= substeps; ++i) {
        // Integer arithmetic keeps stride-1 sequences exact.
        ts[static_cast<std::size_t>(i)] =
            static_cast<int>((static_cast<std::int64_t>(i) * steps + substeps / 2) / substeps);
    }
    ts.back() = steps;
    return ts;
}

namespace {

// Sampling and inversion carry the state in double across steps so that
// per-step float rounding does not accumulate; only the network sees floats.
void ddim_move(std::vector<double>& x, const Tensor& eps, double ab_from, double ab_to) {
    const double ratio = std::sqrt(ab_to) / std::sqrt(ab_from);
    const double s_from = std::sqrt(1.0 - ab_from);
    const double s_to = std::sqrt(1.0 - ab_to);
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double e = eps[i];
        x[i] = ratio * (x[i] - s_from * e) + s_to * e;
    }
}

Tensor to_float_tensor(const std::vector<double>& x, Shape shape) {
    Tensor t = Tensor::uninitialized(shape);
    for (std::size_t i = 0; i < x.size(); ++i) {
        t[i] = static_cast<float>(x[i]);
    }
    return t;
}

Tensor predict_checked(const NoisePredictor& model, const Tensor& x, int t, const Tensor& z) {
    Tensor eps = model.predict_noise(x, t, z);
    if (eps.shape() != x.shape()) {
        throw std::invalid_argument("ddim: predictor returned wrong shape");
    }
    return eps;
}

}  // namespace

Tensor ddim_sample(const Tensor& x_T, const Tensor& z, const NoiseSchedule& schedule, int substeps,
                   const NoisePredictor& model) {
    const auto ts = ddim_timesteps(schedule.steps, substeps);
    std::vector<double> x(x_T.values().begin(), x_T.values().end());
    Tensor xf = x_T;
    for (std::size_t i = ts.size() - 1; i > 0; --i) {
        ddim_move(x, predict_checked(model, xf, ts[i], z), schedule.at(ts[i]), schedule.at(ts[i - 1]));
        xf = to_float_tensor(x, x_T.shape());
    }
    return xf;
}

Tensor ddim_invert(const Tensor& x0, const Tensor& z, const NoiseSchedule& schedule, int substeps,
                   const NoisePredictor& model) {
    const auto ts = ddim_timesteps(schedule.steps, substeps);
    std::vector<double> x(x0.values().begin(), x0.values().end());
    Tensor xf = x0;
    for (std::size_t i = 0; i + 1 < ts.size(); ++i) {
        ddim_move(x, predict_checked(model, xf, ts[i + 1], z), schedule.at(ts[i]), schedule.at(ts[i + 1]));
        xf = to_float_tensor(x, x0.shape());
    }
    return xf;
}

Image ddim_sample(const Image& x_T, std::span<const float> z, const NoiseSchedule& schedule, int substeps,
                  const NoisePredictor& model) {
    return to_image(ddim_sample(to_tensor(x_T), latent_tensor(z), schedule, substeps, model));
}

Image ddim_invert(const Image& x0, std::span<const float> z, const NoiseSchedule& schedule, int substeps,
                  const NoisePredictor& model) {
    return to_image(ddim_invert(to_tensor(x0), latent_tensor(z), schedule, substeps, model));
}

Tensor to_tensor(const Image& image) {
    return Tensor(Shape{1, 1, image.height(), image.width()}, image.values());
}

Tensor to_tensor(std::span<const Image> images) {
    if (images.empty()) {
        throw std::invalid_argument("to_tensor: no images");
    }
    const int h = images.front().height();
    const int w = images.front().width();
    Tensor out(Shape{static_cast<int>(images.size()), 1, h, w});
    for (std::size_t n = 0; n < images.size(); ++n) {
        if (images[n].height() != h || images[n].width() != w) {
            throw std::invalid_argument("to_tensor: images differ in size");
        }
        std::copy(images[n].values().begin(), images[n].values().end(),
                  out.data() + static_cast<std::size_t>(h) * w * n);
    }
    return out;
}

Image to_image(const Tensor& t, int n) {
    const Shape s = t.shape();
    if (s.c != 1 || n < 0 || n >= s.n) {
        throw std::invalid_argument("to_image: expected single-channel tensor");
    }
    const auto first = t.values().begin() + static_cast<std::ptrdiff_t>(s.plane() * n);
    return Image(s.h, s.w, std::vector<float>(first, first + static_cast<std::ptrdiff_t>(s.plane())));
}

Tensor latent_tensor(std::span<const float> z) {
    return Tensor(Shape{1, static_cast<int>(z.size()), 1, 1}, std::vector<float>(z.begin(), z.end()));
}

Tensor latent_tensor(const std::vector<std::vector<float>>& zs) {
    if (zs.empty()) {
        throw std::invalid_argument("latent_tensor: empty batch");
    }
    const auto d = zs.front().size();
    std::vector<float> flat;
    flat.reserve(d * zs.size());
    for (const auto& z : zs) {
        if (z.size() != d) {
            throw std::invalid_argument("latent_tensor: ragged latents");
        }
        flat.insert(flat.end(), z.begin(), z.end());
    }
    return Tensor(Shape{static_cast<int>(zs.size()), static_cast<int>(d), 1, 1}, std::move(flat));
}

std::vector<float> latent_row(const Tensor& z, int n) {
    const auto d = z.shape().sample();
    const auto first = z.values().begin() + static_cast<std::ptrdiff_t>(d * n);
    return {first, first + static_cast<std::ptrdiff_t>(d)};
}

nlohmann::json DiffAEConfig::to_json() const {
    return {{"image_size", image_size}, {"latent_dim", latent_dim},   {"steps", steps},
            {"beta_start", beta_start}, {"beta_end", beta_end},       {"base_channels", base_channels},
            {"sample_substeps", sample_substeps}};
}

DiffAEConfig DiffAEConfig::from_json(const nlohmann::json& j) {
    DiffAEConfig c;
    c.image_size = j.value("image_size", c.image_size);
    c.latent_dim = j.value("latent_dim", c.latent_dim);
    c.steps = j.value("steps", c.steps);
    c.beta_start = j.value("beta_start", c.beta_start);
    c.beta_end = j.value("beta_end", c.beta_end);
    c.base_channels = j.value("base_channels", c.base_channels);
    c.sample_substeps = j.value("sample_substeps", c.sample_substeps);
    return c;
}

namespace {

constexpr int kTimeDim = 32;
constexpr int kCondDim = 64;

int groups_for(int channels) { return channels % 8 == 0 ? 8 : (channels % 4 == 0 ? 4 : 1); }

Tensor timestep_embedding(std::span<const int> ts) {
    Tensor out(Shape{static_cast<int>(ts.size()), kTimeDim, 1, 1});
    const int half = kTimeDim / 2;
    for (std::size_t n = 0; n < ts.size(); ++n) {
        for (int i = 0; i < half; ++i) {
            const double freq = std::exp(-std::log(10000.0) * i / half);
            const double arg = ts[n] * freq;
            out[n * kTimeDim + static_cast<std::size_t>(i)] = static_cast<float>(std::sin(arg));
            out[n * kTimeDim + static_cast<std::size_t>(half + i)] = static_cast<float>(std::cos(arg));
        }
    }
    return out;
}

// Pre-activation residual unit: x + conv(silu(gn(x))) + cond, optionally with
// a second conv after the conditioning is added.
struct ResBlock {
    nn::GroupNorm gn1;
    nn::Conv2d conv1;
    nn::Linear cond;
    nn::GroupNorm gn2;
    nn::Conv2d conv2;
    bool two_convs = false;

    ResBlock() = default;
    ResBlock(nn::ParameterSet& p, const std::string& name, int channels, int cond_dim, bool two, nn::Rng& rng)
        : gn1(p, name + ".gn1", channels, groups_for(channels)),
          conv1(p, name + ".conv1", channels, channels, 3, 1, rng, two ? 1.0F : 0.5F),
          cond(p, name + ".cond", cond_dim, channels, rng),
          two_convs(two) {
        if (two) {
            gn2 = nn::GroupNorm(p, name + ".gn2", channels, groups_for(channels));
            conv2 = nn::Conv2d(p, name + ".conv2", channels, channels, 3, 1, rng, 0.5F);
        }
    }

    Var operator()(const Var& x, const Var& c) const {
        Var h = conv1(nn::silu(gn1(x)));
        h = nn::add_channel(h, cond(c));
        if (two_convs) {
            h = conv2(nn::silu(gn2(h)));
        }
        return nn::add(x, h);
    }
};

}  // namespace

struct DiffAE::Net {
    // Encoder: four stride-2 stages, global average pool to d.
    nn::Conv2d enc1, enc2, enc3, enc4;
    nn::GroupNorm enc_gn2, enc_gn3;
    // Decoder.
    nn::Linear time1, time2;
    nn::Conv2d conv_in, down1, down2, lat2, lat1, conv_out;
    ResBlock block1, mid, block3, block4;
    nn::GroupNorm out_gn;
};

DiffAE::DiffAE(DiffAEConfig config, std::uint64_t init_seed)
    : config_(config),
      schedule_(make_schedule(config.steps, config.beta_start, config.beta_end)),
      net_(std::make_shared<Net>()) {
    if (config_.image_size < 16 || config_.image_size % 8 != 0) {
        throw std::invalid_argument("DiffAE: image_size must be a multiple of 8, >= 16");
    }
    if (config_.latent_dim < 1 || config_.base_channels < 4) {
        throw std::invalid_argument("DiffAE: invalid latent_dim/base_channels");
    }
    nn::Rng rng(init_seed);
    auto& p = params_;
    Net& n = *net_;
    const int c0 = config_.base_channels;
    const int c1 = 2 * c0;
    const int c2 = 3 * c0;
    const int d = config_.latent_dim;

    n.enc1 = nn::Conv2d(p, "enc.conv1", 1, 16, 3, 2, rng);
    n.enc2 = nn::Conv2d(p, "enc.conv2", 16, 32, 3, 2, rng);
    n.enc_gn2 = nn::GroupNorm(p, "enc.gn2", 32, 8);
    n.enc3 = nn::Conv2d(p, "enc.conv3", 32, 64, 3, 2, rng);
    n.enc_gn3 = nn::GroupNorm(p, "enc.gn3", 64, 8);
    n.enc4 = nn::Conv2d(p, "enc.conv4", 64, d, 3, 2, rng);

    const int cond_dim = kCondDim + d;
    n.time1 = nn::Linear(p, "dec.time1", kTimeDim, kCondDim, rng);
    n.time2 = nn::Linear(p, "dec.time2", kCondDim, kCondDim, rng);
    n.conv_in = nn::Conv2d(p, "dec.conv_in", 1, c0, 3, 1, rng);
    n.down1 = nn::Conv2d(p, "dec.down1", c0, c1, 3, 2, rng);
    n.block1 = ResBlock(p, "dec.block1", c1, cond_dim, false, rng);
    n.down2 = nn::Conv2d(p, "dec.down2", c1, c2, 3, 2, rng);
    n.mid = ResBlock(p, "dec.mid", c2, cond_dim, true, rng);
    n.lat2 = nn::Conv2d(p, "dec.lat2", c2, c1, 1, 1, rng);
    n.block3 = ResBlock(p, "dec.block3", c1, cond_dim, false, rng);
    n.lat1 = nn::Conv2d(p, "dec.lat1", c1, c0, 1, 1, rng);
    n.block4 = ResBlock(p, "dec.block4", c0, cond_dim, false, rng);
    n.out_gn = nn::GroupNorm(p, "dec.out_gn", c0, groups_for(c0));
    n.conv_out = nn::Conv2d(p, "dec.conv_out", c0, 1, 3, 1, rng, 0.0F);
}

void DiffAE::check_resolution(const Tensor& x) const {
    const Shape s = x.shape();
    if (s.c != 1 || s.h != config_.image_size || s.w != config_.image_size) {
        throw std::invalid_argument("DiffAE: input resolution " + nn::to_string(s) + " does not match trained " +
                                    std::to_string(config_.image_size));
    }
}

Var DiffAE::encode_var(const Var& x0) const {
    check_resolution(x0->value);
    const Net& n = *net_;
    Var h = nn::silu(n.enc1(x0));
    h = nn::silu(n.enc_gn2(n.enc2(h)));
    h = nn::silu(n.enc_gn3(n.enc3(h)));
    h = n.enc4(h);
    return nn::global_avg_pool(h);
}

Var DiffAE::predict_var(const Var& x_t, std::span<const int> t, const Var& z) const {
    check_resolution(x_t->value);
    const Net& n = *net_;
    if (static_cast<int>(t.size()) != x_t->value.shape().n || z->value.shape().n != x_t->value.shape().n ||
        z->value.shape().c != config_.latent_dim) {
        throw std::invalid_argument("DiffAE: batch/latent shape mismatch");
    }
    Var temb = nn::constant(timestep_embedding(t));
    temb = n.time2(nn::silu(n.time1(temb)));
    const Var cond = nn::concat_channels(nn::silu(temb), z);

    Var h0 = n.conv_in(x_t);
    Var h1 = n.block1(n.down1(h0), cond);
    Var h2 = n.mid(n.down2(h1), cond);
    Var u1 = nn::add(nn::upsample2x(n.lat2(h2)), h1);
    u1 = n.block3(u1, cond);
    Var u0 = nn::add(nn::upsample2x(n.lat1(u1)), h0);
    u0 = n.block4(u0, cond);
    return n.conv_out(nn::silu(n.out_gn(u0)));
}

Tensor DiffAE::encode(const Tensor& x0) const {
    nn::NoGradGuard guard;
    return encode_var(nn::constant(x0))->value;
}

std::vector<float> DiffAE::encode(const Image& x0) const { return latent_row(encode(to_tensor(x0)), 0); }

Tensor DiffAE::predict_noise(const Tensor& x_t, int t, const Tensor& z) const {
    nn::NoGradGuard guard;
    std::vector<int> ts(static_cast<std::size_t>(x_t.shape().n), t);
    return predict_var(nn::constant(x_t), ts, nn::constant(z))->value;
}

Image DiffAE::reconstruct(const Image& x0) const {
    const Tensor x = to_tensor(x0);
    const Tensor z = encode(x);
    const Tensor xT = ddim_invert(x, z, schedule_, config_.sample_substeps, *this);
    return to_image(ddim_sample(xT, z, schedule_, config_.sample_substeps, *this));
}

std::string DiffAE::config_hash() const { return sha256_hex(config_.to_json().dump()).substr(0, 16); }

void save_diffae(const std::filesystem::path& path, const DiffAE& model) {
    nlohmann::json meta = {{"kind", "diffae"},
                           {"version", 1},
                           {"config", model.config().to_json()},
                           {"config_hash", model.config_hash()},
                           {"latent_dim", model.config().latent_dim},
                           {"T", model.config().steps},
                           {"train_steps", model.train_steps}};
    nn::save_checkpoint(path, nn::make_checkpoint(model.params(), meta));
}

DiffAE load_diffae(const std::filesystem::path& path) {
    const nn::Checkpoint ckpt = nn::load_checkpoint(path);
    if (ckpt.header.value("kind", "") != "diffae") {
        throw std::invalid_argument("not a DiffAE checkpoint: " + path.string());
    }
    DiffAE model(DiffAEConfig::from_json(ckpt.header.at("config")));
    nn::load_into(model.params(), ckpt);
    model.train_steps = ckpt.header.value("train_steps", std::int64_t{0});
    return model;
}

namespace {

struct Batch {
    Tensor x0;
    Tensor x_t;
    Tensor eps;
    std::vector<int> ts;
};

Batch draw_batch(std::span<const Image> data, int batch, const NoiseSchedule& schedule, nn::Rng& rng) {
    std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
    std::uniform_int_distribution<int> pick_t(1, schedule.steps);
    std::normal_distribution<float> normal(0.0F, 1.0F);
    std::vector<Image> chosen;
    chosen.reserve(static_cast<std::size_t>(batch));
    Batch b;
    for (int i = 0; i < batch; ++i) {
        chosen.push_back(data[pick(rng)]);
        b.ts.push_back(pick_t(rng));
    }
    b.x0 = to_tensor(chosen);
    b.eps = Tensor(b.x0.shape());
    for (auto& v : b.eps.values()) {
        v = normal(rng);
    }
    b.x_t = Tensor(b.x0.shape());
    const std::size_t plane = b.x0.shape().plane();
    for (int n = 0; n < batch; ++n) {
        const double ab = schedule.at(b.ts[static_cast<std::size_t>(n)]);
        const auto a = static_cast<float>(std::sqrt(ab));
        const auto s = static_cast<float>(std::sqrt(1.0 - ab));
        for (std::size_t i = 0; i < plane; ++i) {
            const std::size_t k = plane * n + i;
            b.x_t[k] = a * b.x0[k] + s * b.eps[k];
        }
    }
    return b;
}

}  // namespace

double validation_loss(const DiffAE& model, std::span<const Image> val, int samples, std::uint64_t seed) {
    if (val.empty() || samples <= 0) {
        return 0.0;
    }
    nn::NoGradGuard guard;
    nn::Rng rng(seed);
    double total = 0.0;
    int done = 0;
    while (done < samples) {
        const int b = std::min(8, samples - done);
        Batch batch = draw_batch(val, b, model.schedule(), rng);
        Var z = model.encode_var(nn::constant(batch.x0));
        Var pred = model.predict_var(nn::constant(batch.x_t), batch.ts, z);
        total += nn::l1_loss(pred, batch.eps)->value[0] * b;
        done += b;
    }
    return total / samples;
}

TrainResult train_diffae(DiffAE& model, std::span<const Image> train, std::span<const Image> val,
                         const TrainConfig& config, std::vector<Tensor>* last,
                         const std::function<void(const LossRecord&)>& on_record) {
    if (train.empty()) {
        throw std::invalid_argument("train_diffae: empty training split");
    }
    if (config.steps < 0 || config.batch_size < 1) {
        throw std::invalid_argument("train_diffae: invalid steps/batch_size");
    }
    nn::Rng rng(config.seed);
    nn::Adam opt(model.params(), nn::AdamConfig{.lr = config.lr});
    const std::uint64_t val_seed = derive_seed(config.seed, "diffae-val");
    TrainResult result;
    result.best_val_loss = std::numeric_limits<double>::infinity();
    std::vector<Tensor> best = nn::snapshot(model.params());
    double ema = -1.0;
    const int warmup = std::min(200, std::max(1, config.steps / 10));

    for (int step = 1; step <= config.steps; ++step) {
        opt.set_lr(config.lr * std::min(1.0F, static_cast<float>(step) / static_cast<float>(warmup)));
        Batch batch = draw_batch(train, config.batch_size, model.schedule(), rng);
        Var z = model.encode_var(nn::constant(batch.x0));
        Var pred = model.predict_var(nn::constant(batch.x_t), batch.ts, z);
        Var loss = nn::l1_loss(pred, batch.eps);
        const double lv = loss->value[0];
        if (!std::isfinite(lv)) {
            throw std::runtime_error("train_diffae: non-finite loss at step " + std::to_string(step));
        }
        nn::backward(loss);
        opt.step();
        model.params().zero_grad();
        ++model.train_steps;
        ema = ema < 0.0 ? lv : 0.98 * ema + 0.02 * lv;

        const bool eval_now = !val.empty() && (step % config.eval_every == 0 || step == config.steps);
        const bool log_now = step % config.log_every == 0 || step == config.steps || eval_now;
        if (!log_now) {
            continue;
        }
        LossRecord rec{step, ema, -1.0};
        if (eval_now) {
            rec.val_loss = validation_loss(model, val, config.val_samples, val_seed);
            if (rec.val_loss < result.best_val_loss) {
                result.best_val_loss = rec.val_loss;
                result.best_step = step;
                best = nn::snapshot(model.params());
            }
        }
        result.history.push_back(rec);
        if (on_record) {
            on_record(rec);
        }
    }
    if (last != nullptr) {
        *last = nn::snapshot(model.params());
    }
    if (val.empty() || config.steps == 0) {
        result.best_step = config.steps;
        result.best_val_loss = val.empty() ? 0.0 : validation_loss(model, val, config.val_samples, val_seed);
    } else {
        nn::restore(model.params(), best);
    }
    return result;
}

double psnr(const Image& reference, const Image& test, double peak_to_peak) {
    require_same_shape(reference, test, "psnr: shape mismatch");
    double mse = 0.0;
    for (std::size_t i = 0; i < reference.size(); ++i) {
        const double d = static_cast<double>(reference[i]) - test[i];
        mse += d * d;
    }
    mse /= static_cast<double>(reference.size());
    if (mse == 0.0) {
        return std::numeric_limits<double>::infinity();
    }
    return 10.0 * std::log10(peak_to_peak * peak_to_peak / mse);
}

}  // namespace diffseg::diffae
