// Copyright (C) 2026 The DiffSeg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace diffseg::nn {

/// NCHW extent. Vectors are stored as (N, C, 1, 1); weight banks reuse the
/// same layout with N = output channels.
struct Shape {
    int n = 1;
    int c = 1;
    int h = 1;
    int w = 1;

    [[nodiscard]] std::size_t numel() const noexcept {
        return static_cast<std::size_t>(n) * c * h * w;
    }
    [[nodiscard]] std::size_t plane() const noexcept { return static_cast<std::size_t>(h) * w; }
    [[nodiscard]] std::size_t sample() const noexcept { return static_cast<std::size_t>(c) * h * w; }

    friend bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& s);

/// Allocator that leaves elements uninitialised on resize; activations are
/// always written before they are read. Storage is 64-byte aligned so the
/// vectorised kernels split their loops the same way for every buffer, which
/// keeps float sums bitwise reproducible across allocations.
template <typename T>
struct DefaultInitAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};

    DefaultInitAllocator() noexcept = default;
    template <typename U>
    DefaultInitAllocator(const DefaultInitAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

    template <typename U>
    void construct(U* p) noexcept {
        ::new (static_cast<void*>(p)) U;
    }
    template <typename U, typename... Args>
    void construct(U* p, Args&&... args) {
        ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
    }

    template <typename U>
    friend bool operator==(const DefaultInitAllocator&, const DefaultInitAllocator<U>&) noexcept {
        return true;
    }
};

using FloatBuffer = std::vector<float, DefaultInitAllocator<float>>;

/// Dense float32 tensor with value semantics.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, float fill = 0.0F);
    Tensor(Shape shape, const std::vector<float>& values);
    Tensor(Shape shape, FloatBuffer values);
    /// Contents are indeterminate until written.
    static Tensor uninitialized(Shape shape);

    [[nodiscard]] const Shape& shape() const noexcept { return shape_; }
    [[nodiscard]] std::size_t numel() const noexcept { return data_.size(); }
    [[nodiscard]] bool empty() const noexcept { return data_.empty(); }

    [[nodiscard]] float* data() noexcept { return data_.data(); }
    [[nodiscard]] const float* data() const noexcept { return data_.data(); }
    [[nodiscard]] std::span<float> values() noexcept { return data_; }
    [[nodiscard]] std::span<const float> values() const noexcept { return data_; }

    float& operator[](std::size_t i) noexcept { return data_[i]; }
    float operator[](std::size_t i) const noexcept { return data_[i]; }

    float& at(int n, int c, int y, int x) noexcept {
        return data_[((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x];
    }
    [[nodiscard]] float at(int n, int c, int y, int x) const noexcept {
        return data_[((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x];
    }

    void fill(float v);
    /// Reinterprets the extent; element count must match.
    void reshape(Shape s);

    /// Copies sample `n` out as a (1, C, H, W) tensor.
    [[nodiscard]] Tensor sample(int n) const;

private:
    Shape shape_{0, 0, 0, 0};
    FloatBuffer data_;
};

/// Stacks equally shaped single-sample tensors along N.
Tensor stack(std::span<const Tensor> samples);

}  // namespace diffseg::nn
