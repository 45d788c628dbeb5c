// Copyright (C) 2026 The DiffSeg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "diffseg/nn/tensor.hpp"

namespace diffseg::nn {

struct Node;
using Var = std::shared_ptr<Node>;

/// One value in a reverse-mode graph. Leaves created with `parameter` keep
/// their gradient between backward passes until `zero_grad` is called.
struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<Var> parents;
    std::function<void(Node&)> backward_fn;

    /// Allocates a zero gradient of the value's shape on first use.
    Tensor& grad_buffer();
    void zero_grad();
};

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled() noexcept;

Var constant(Tensor t);
Var parameter(Tensor t);

/// Runs reverse accumulation from a scalar root (numel == 1).
void backward(const Var& root);

// Layers. Weight layouts: conv (O, C, k, k); linear (O, I, 1, 1); biases (1, O, 1, 1).
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad);
Var linear(const Var& x, const Var& weight, const Var& bias);
Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, float eps = 1e-5F);

// Elementwise and structural ops.
Var add(const Var& a, const Var& b);
/// x (N, C, H, W) + v broadcast from (N, C, 1, 1) or (1, C, 1, 1).
Var add_channel(const Var& x, const Var& v);
/// x * (1 + v) with v broadcast like add_channel.
Var scale_channel(const Var& x, const Var& v);
Var silu(const Var& x);
Var upsample2x(const Var& x);
Var concat_channels(const Var& a, const Var& b);
Var global_avg_pool(const Var& x);

// Scalar losses (shape (1, 1, 1, 1)).
Var l1_loss(const Var& pred, const Tensor& target);
Var bce_with_logits(const Var& logits, const Tensor& target);
/// Mean over samples of 1 - (2 sum(p t) + 1) / (sum p + sum t + 1), p = sigmoid(logits).
Var soft_dice_loss(const Var& logits, const Tensor& target);
Var weighted_sum(const Var& a, float wa, const Var& b, float wb);

float sigmoid(float v) noexcept;

}  // namespace diffseg::nn
