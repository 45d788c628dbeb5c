// Copyright (C) 2026 The DiffSeg Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffseg/nn/tensor.hpp"

#include <algorithm>
#include <stdexcept>

namespace diffseg::nn {

std::string to_string(const Shape& s) {
    return "(" + std::to_string(s.n) + "," + std::to_string(s.c) + "," + std::to_string(s.h) + "," +
           std::to_string(s.w) + ")";
}

Tensor::Tensor(Shape shape, float fill) : shape_(shape), data_(shape.numel(), fill) {}

Tensor::Tensor(Shape shape, const std::vector<float>& values)
    : Tensor(shape, FloatBuffer(values.begin(), values.end())) {}

Tensor::Tensor(Shape shape, FloatBuffer values) : shape_(shape), data_(std::move(values)) {
    if (data_.size() != shape_.numel()) {
        throw std::invalid_argument("tensor: value count does not match shape " + to_string(shape_));
    }
}

Tensor Tensor::uninitialized(Shape shape) {
    Tensor t;
    t.shape_ = shape;
    t.data_.resize(shape.numel());
    return t;
}

void Tensor::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::reshape(Shape s) {
    if (s.numel() != data_.size()) {
        throw std::invalid_argument("tensor: cannot reshape to " + to_string(s));
    }
    shape_ = s;
}

Tensor Tensor::sample(int n) const {
    Shape s = shape_;
    s.n = 1;
    const auto stride = shape_.sample();
    const auto first = data_.begin() + static_cast<std::ptrdiff_t>(stride * n);
    return Tensor(s, FloatBuffer(first, first + static_cast<std::ptrdiff_t>(stride)));
}

Tensor stack(std::span<const Tensor> samples) {
    if (samples.empty()) {
        throw std::invalid_argument("stack: no samples");
    }
    Shape s = samples.front().shape();
    s.n = 0;
    FloatBuffer out;
    out.reserve(samples.front().numel() * samples.size());
    for (const auto& t : samples) {
        Shape ts = t.shape();
        if (ts.c != s.c || ts.h != s.h || ts.w != s.w) {
            throw std::invalid_argument("stack: shape mismatch");
        }
        s.n += ts.n;
        out.insert(out.end(), t.values().begin(), t.values().end());
    }
    return Tensor(s, std::move(out));
}

}  // namespace diffseg::nn
