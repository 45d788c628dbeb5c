// Copyright (C) 2026 The DiffSeg Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffseg/nn/module.hpp"

#include <cmath>
#include <stdexcept>

namespace diffseg::nn {

Var ParameterSet::add(std::string name, Tensor init) {
    if (find(name)) {
        throw std::invalid_argument("duplicate parameter name: " + name);
    }
    Var v = parameter(std::move(init));
    items_.emplace_back(std::move(name), v);
    return v;
}

Var ParameterSet::find(const std::string& name) const {
    for (const auto& [n, v] : items_) {
        if (n == name) {
            return v;
        }
    }
    return nullptr;
}

std::size_t ParameterSet::count() const noexcept {
    std::size_t total = 0;
    for (const auto& item : items_) {
        total += item.second->value.numel();
    }
    return total;
}

void ParameterSet::zero_grad() {
    for (auto& item : items_) {
        item.second->zero_grad();
    }
}

Tensor uniform_init(Shape shape, int fan_in, Rng& rng, float gain) {
    const float bound = gain / std::sqrt(static_cast<float>(fan_in));
    std::uniform_real_distribution<float> dist(-bound, bound);
    Tensor t(shape);
    for (auto& v : t.values()) {
        v = dist(rng);
    }
    return t;
}

Conv2d::Conv2d(ParameterSet& params, const std::string& name, int in, int out, int kernel, int stride,
               Rng& rng, float gain)
    : stride_(stride), pad_(kernel / 2) {
    const int fan_in = in * kernel * kernel;
    weight_ = params.add(name + ".weight", uniform_init(Shape{out, in, kernel, kernel}, fan_in, rng, gain));
    bias_ = params.add(name + ".bias", uniform_init(Shape{1, out, 1, 1}, fan_in, rng, gain));
}

Var Conv2d::operator()(const Var& x) const { return conv2d(x, weight_, bias_, stride_, pad_); }

Linear::Linear(ParameterSet& params, const std::string& name, int in, int out, Rng& rng, float gain) {
    weight_ = params.add(name + ".weight", uniform_init(Shape{out, in, 1, 1}, in, rng, gain));
    bias_ = params.add(name + ".bias", uniform_init(Shape{1, out, 1, 1}, in, rng, gain));
}

Var Linear::operator()(const Var& x) const { return linear(x, weight_, bias_); }

GroupNorm::GroupNorm(ParameterSet& params, const std::string& name, int channels, int groups)
    : groups_(groups) {
    gamma_ = params.add(name + ".gamma", Tensor(Shape{1, channels, 1, 1}, 1.0F));
    beta_ = params.add(name + ".beta", Tensor(Shape{1, channels, 1, 1}, 0.0F));
}

Var GroupNorm::operator()(const Var& x) const { return group_norm(x, gamma_, beta_, groups_); }

Adam::Adam(const ParameterSet& params, AdamConfig config) : config_(config) {
    for (const auto& item : params.items()) {
        params_.push_back(item.second);
        m_.emplace_back(item.second->value.numel(), 0.0F);
        v_.emplace_back(item.second->value.numel(), 0.0F);
    }
}

float Adam::step() {
    double sq = 0.0;
    for (const auto& p : params_) {
        if (p->grad.empty()) {
            continue;
        }
        for (float g : p->grad.values()) {
            sq += static_cast<double>(g) * g;
        }
    }
    const auto norm = static_cast<float>(std::sqrt(sq));
    float scale = 1.0F;
    if (config_.clip_norm > 0.0F && norm > config_.clip_norm) {
        scale = config_.clip_norm / norm;
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(static_cast<double>(config_.beta1), static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(static_cast<double>(config_.beta2), static_cast<double>(t_));
    const auto step_size = static_cast<float>(config_.lr * std::sqrt(bc2) / bc1);
    for (std::size_t k = 0; k < params_.size(); ++k) {
        Node& p = *params_[k];
        if (p.grad.empty()) {
            continue;
        }
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::size_t i = 0; i < p.value.numel(); ++i) {
            const float g = p.grad[i] * scale;
            m[i] = config_.beta1 * m[i] + (1.0F - config_.beta1) * g;
            v[i] = config_.beta2 * v[i] + (1.0F - config_.beta2) * g * g;
            p.value[i] -= step_size * m[i] / (std::sqrt(v[i]) + config_.eps);
        }
    }
    return norm;
}

std::vector<Tensor> snapshot(const ParameterSet& params) {
    std::vector<Tensor> out;
    out.reserve(params.items().size());
    for (const auto& item : params.items()) {
        out.push_back(item.second->value);
    }
    return out;
}

void restore(const ParameterSet& params, const std::vector<Tensor>& values) {
    if (values.size() != params.items().size()) {
        throw std::invalid_argument("restore: parameter count mismatch");
    }
    for (std::size_t k = 0; k < values.size(); ++k) {
        if (values[k].shape() != params.items()[k].second->value.shape()) {
            throw std::invalid_argument("restore: shape mismatch for " + params.items()[k].first);
        }
        params.items()[k].second->value = values[k];
    }
}

}  // namespace diffseg::nn
