// Copyright (C) 2026 The DiffSeg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "diffseg/nn/autograd.hpp"

namespace diffseg::nn {

using Rng = std::mt19937_64;

/// Ordered, named collection of trainable leaves. Order is registration order
/// and defines the on-disk layout of checkpoints.
class ParameterSet {
public:
    Var add(std::string name, Tensor init);

    [[nodiscard]] const std::vector<std::pair<std::string, Var>>& items() const noexcept { return items_; }
    [[nodiscard]] Var find(const std::string& name) const;
    [[nodiscard]] std::size_t count() const noexcept;

    void zero_grad();

private:
    std::vector<std::pair<std::string, Var>> items_;
};

/// Fan-in scaled uniform initialisation, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
Tensor uniform_init(Shape shape, int fan_in, Rng& rng, float gain = 1.0F);

class Conv2d {
public:
    Conv2d() = default;
    Conv2d(ParameterSet& params, const std::string& name, int in, int out, int kernel, int stride,
           Rng& rng, float gain = 1.0F);
    Var operator()(const Var& x) const;

private:
    Var weight_;
    Var bias_;
    int stride_ = 1;
    int pad_ = 0;
};

class Linear {
public:
    Linear() = default;
    Linear(ParameterSet& params, const std::string& name, int in, int out, Rng& rng, float gain = 1.0F);
    Var operator()(const Var& x) const;

private:
    Var weight_;
    Var bias_;
};

class GroupNorm {
public:
    GroupNorm() = default;
    GroupNorm(ParameterSet& params, const std::string& name, int channels, int groups);
    Var operator()(const Var& x) const;

private:
    Var gamma_;
    Var beta_;
    int groups_ = 1;
};

struct AdamConfig {
    float lr = 1e-3F;
    float beta1 = 0.9F;
    float beta2 = 0.999F;
    float eps = 1e-8F;
    float clip_norm = 1.0F;  // <= 0 disables global-norm clipping
};

class Adam {
public:
    Adam(const ParameterSet& params, AdamConfig config);
    /// Applies one update from the accumulated gradients; returns the pre-clip
    /// global gradient norm.
    float step();
    void set_lr(float lr) noexcept { config_.lr = lr; }
    [[nodiscard]] std::int64_t steps() const noexcept { return t_; }

private:
    std::vector<Var> params_;
    std::vector<std::vector<float>> m_;
    std::vector<std::vector<float>> v_;
    AdamConfig config_;
    std::int64_t t_ = 0;
};

/// Copies parameter values (e.g. to keep a best-so-far snapshot).
std::vector<Tensor> snapshot(const ParameterSet& params);
void restore(const ParameterSet& params, const std::vector<Tensor>& values);

}  // namespace diffseg::nn
