// Copyright (C) 2026 The DiffSeg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "diffseg/image.hpp"
#include "diffseg/nn/checkpoint.hpp"
#include "diffseg/nn/module.hpp"

namespace diffseg::diffae {

/// Cumulative signal retention: alpha_bar[0] = 1, strictly decreasing to
/// alpha_bar[steps] > 0.
struct NoiseSchedule {
    int steps = 0;
    std::vector<double> alpha_bar;

    [[nodiscard]] double at(int t) const { return alpha_bar.at(static_cast<std::size_t>(t)); }
};

/// Linear betas from beta_start (t = 1) to beta_end (t = steps).
NoiseSchedule make_schedule(int steps, double beta_start, double beta_end);
/// Builds a schedule from explicit cumulative coefficients (index 0..T). Only
/// requires entries in (0, 1] and alpha_bar[0] = 1; used for algebraic checks
/// such as equal neighbouring coefficients.
NoiseSchedule schedule_from_alpha_bar(std::vector<double> alpha_bar);

/// sqrt(ab_t) * x0 + sqrt(1 - ab_t) * eps.
Image q_sample(const Image& x0, int t, const Image& eps, const NoiseSchedule& schedule);
nn::Tensor q_sample(const nn::Tensor& x0, int t, const nn::Tensor& eps, const NoiseSchedule& schedule);

/// eps-prediction network D(x_t, t, z) evaluated on a batch sharing one t.
/// x_t is (N, 1, H, W); z is (N, d, 1, 1).
class NoisePredictor {
public:
    virtual ~NoisePredictor() = default;
    [[nodiscard]] virtual nn::Tensor predict_noise(const nn::Tensor& x_t, int t, const nn::Tensor& z) const = 0;
};

/// One deterministic DDIM update from t to t_prev (t_prev < t):
///   x' = sqrt(ab_prev / ab_t) (x - sqrt(1 - ab_t) e) + sqrt(1 - ab_prev) e,  e = D(x, t, z).
nn::Tensor ddim_step(const nn::Tensor& x_t, int t, int t_prev, const nn::Tensor& z,
                     const NoiseSchedule& schedule, const NoisePredictor& model);

/// Strided timestep sequence T = s_K > ... > s_0 = 0 with K = substeps.
std::vector<int> ddim_timesteps(int steps, int substeps);

/// Iterates ddim_step from T down to 0 along ddim_timesteps.
nn::Tensor ddim_sample(const nn::Tensor& x_T, const nn::Tensor& z, const NoiseSchedule& schedule, int substeps,
                       const NoisePredictor& model);

/// Runs the update in reverse (0 up to T). The noise estimate for the move
/// s_i -> s_{i+1} is D(x_{s_i}, s_{i+1}, z), the network call the sampler will
/// make when stepping back from s_{i+1}.
nn::Tensor ddim_invert(const nn::Tensor& x0, const nn::Tensor& z, const NoiseSchedule& schedule, int substeps,
                       const NoisePredictor& model);

// Single-image conveniences over the batched forms.
Image ddim_sample(const Image& x_T, std::span<const float> z, const NoiseSchedule& schedule, int substeps,
                  const NoisePredictor& model);
Image ddim_invert(const Image& x0, std::span<const float> z, const NoiseSchedule& schedule, int substeps,
                  const NoisePredictor& model);

nn::Tensor to_tensor(const Image& image);
nn::Tensor to_tensor(std::span<const Image> images);
Image to_image(const nn::Tensor& t, int n = 0);
nn::Tensor latent_tensor(std::span<const float> z);
nn::Tensor latent_tensor(const std::vector<std::vector<float>>& zs);
std::vector<float> latent_row(const nn::Tensor& z, int n);

struct DiffAEConfig {
    int image_size = 64;
    int latent_dim = 64;
    int steps = 100;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    int base_channels = 16;
    int sample_substeps = 20;

    [[nodiscard]] nlohmann::json to_json() const;
    static DiffAEConfig from_json(const nlohmann::json& j);
};

/// Semantic encoder E plus conditional noise predictor D.
class DiffAE final : public NoisePredictor {
public:
    explicit DiffAE(DiffAEConfig config, std::uint64_t init_seed = 0);

    [[nodiscard]] const DiffAEConfig& config() const noexcept { return config_; }
    [[nodiscard]] const NoiseSchedule& schedule() const noexcept { return schedule_; }
    [[nodiscard]] nn::ParameterSet& params() noexcept { return params_; }
    [[nodiscard]] const nn::ParameterSet& params() const noexcept { return params_; }

    /// Graph-building forms used by training.
    nn::Var encode_var(const nn::Var& x0) const;
    nn::Var predict_var(const nn::Var& x_t, std::span<const int> t, const nn::Var& z) const;

    /// Inference: (N, 1, H, W) -> (N, d, 1, 1).
    [[nodiscard]] nn::Tensor encode(const nn::Tensor& x0) const;
    [[nodiscard]] std::vector<float> encode(const Image& x0) const;
    [[nodiscard]] nn::Tensor predict_noise(const nn::Tensor& x_t, int t, const nn::Tensor& z) const override;

    /// z = E(x0); x_T = invert(x0, z); returns sample(x_T, z).
    [[nodiscard]] Image reconstruct(const Image& x0) const;

    [[nodiscard]] std::string config_hash() const;

    std::int64_t train_steps = 0;

private:
    void check_resolution(const nn::Tensor& x) const;

    DiffAEConfig config_;
    NoiseSchedule schedule_;
    nn::ParameterSet params_;
    struct Net;
    std::shared_ptr<Net> net_;
};

void save_diffae(const std::filesystem::path& path, const DiffAE& model);
DiffAE load_diffae(const std::filesystem::path& path);

struct TrainConfig {
    int steps = 10000;
    int batch_size = 8;
    float lr = 2e-4F;
    std::uint64_t seed = 0;
    int log_every = 100;
    int eval_every = 1000;
    int val_samples = 32;
};

struct LossRecord {
    int step = 0;
    double train_loss = 0.0;       // exponential moving average of the batch L1 loss
    double val_loss = -1.0;        // negative when not evaluated at this step
};

struct TrainResult {
    std::vector<LossRecord> history;
    double best_val_loss = 0.0;
    int best_step = 0;
};

/// Minimises E|eps - D(x_t, t, E(x0))|_1 with t ~ U{1..T}, eps ~ N(0, I).
/// On return `model` holds the parameters with the lowest validation loss
/// (the last step's when `val` is empty); `last` receives the final ones.
TrainResult train_diffae(DiffAE& model, std::span<const Image> train, std::span<const Image> val,
                         const TrainConfig& config, std::vector<nn::Tensor>* last = nullptr,
                         const std::function<void(const LossRecord&)>& on_record = {});

/// Fixed-seed validation loss over a deterministic set of (t, eps) draws.
double validation_loss(const DiffAE& model, std::span<const Image> val, int samples, std::uint64_t seed);

double psnr(const Image& reference, const Image& test, double peak_to_peak = 2.0);

}  // namespace diffseg::diffae
