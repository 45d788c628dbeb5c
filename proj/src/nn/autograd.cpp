// Copyright (C) 2026 The DiffSeg Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffseg/nn/autograd.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace diffseg::nn {
namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

thread_local bool g_grad_enabled = true;

Var make_result(Tensor value, std::vector<Var> parents, std::function<void(Node&)> fn) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    if (!g_grad_enabled) {
        return node;
    }
    const bool needs = std::any_of(parents.begin(), parents.end(),
                                   [](const Var& p) { return p && p->requires_grad; });
    if (needs) {
        node->requires_grad = true;
        node->parents = std::move(parents);
        node->backward_fn = std::move(fn);
    }
    return node;
}

void require(bool cond, const char* what) {
    if (!cond) {
        throw std::invalid_argument(what);
    }
}

using StridedMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using ConstStridedMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

// Column layout for output rows [oy0, oy1): row r = (c * k + ky) * k + kx,
// column = (oy - oy0) * out_w + ox, row stride ld = (oy1 - oy0) * out_w.
void im2col(const float* x, int channels, int height, int width, int k, int stride, int pad, int oy0, int oy1,
            int out_w, float* col, std::size_t ld) {
    for (int c = 0; c < channels; ++c) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                float* row = col + static_cast<std::size_t>((c * k + ky) * k + kx) * ld;
                // Valid output columns satisfy 0 <= ox * stride - pad + kx < width.
                int lo = 0;
                while (lo < out_w && lo * stride - pad + kx < 0) {
                    ++lo;
                }
                int hi = out_w;
                while (hi > lo && (hi - 1) * stride - pad + kx >= width) {
                    --hi;
                }
                for (int oy = oy0; oy < oy1; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    float* dst = row + static_cast<std::size_t>(oy - oy0) * out_w;
                    if (iy < 0 || iy >= height) {
                        std::fill(dst, dst + out_w, 0.0F);
                        continue;
                    }
                    const float* src = x + (static_cast<std::size_t>(c) * height + iy) * width - pad + kx;
                    std::fill(dst, dst + lo, 0.0F);
                    if (stride == 1) {
                        std::copy(src + lo, src + hi, dst + lo);
                    } else {
                        for (int ox = lo; ox < hi; ++ox) {
                            dst[ox] = src[ox * stride];
                        }
                    }
                    std::fill(dst + hi, dst + out_w, 0.0F);
                }
            }
        }
    }
}

void col2im_add(const float* col, int channels, int height, int width, int k, int stride, int pad, int oy0,
                int oy1, int out_w, float* dx, std::size_t ld) {
    for (int c = 0; c < channels; ++c) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const float* row = col + static_cast<std::size_t>((c * k + ky) * k + kx) * ld;
                int lo = 0;
                while (lo < out_w && lo * stride - pad + kx < 0) {
                    ++lo;
                }
                int hi = out_w;
                while (hi > lo && (hi - 1) * stride - pad + kx >= width) {
                    --hi;
                }
                for (int oy = oy0; oy < oy1; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= height) {
                        continue;
                    }
                    const float* src = row + static_cast<std::size_t>(oy - oy0) * out_w;
                    float* dst = dx + (static_cast<std::size_t>(c) * height + iy) * width - pad + kx;
                    for (int ox = lo; ox < hi; ++ox) {
                        dst[ox * stride] += src[ox];
                    }
                }
            }
        }
    }
}

}  // namespace

float sigmoid(float v) noexcept {
    if (v >= 0.0F) {
        return 1.0F / (1.0F + std::exp(-v));
    }
    const float e = std::exp(v);
    return e / (1.0F + e);
}

Tensor& Node::grad_buffer() {
    if (grad.shape() != value.shape() || grad.numel() != value.numel()) {
        grad = Tensor(value.shape(), 0.0F);
    }
    return grad;
}

void Node::zero_grad() {
    if (!grad.empty()) {
        grad.fill(0.0F);
    }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() noexcept { return g_grad_enabled; }

Var constant(Tensor t) {
    auto node = std::make_shared<Node>();
    node->value = std::move(t);
    return node;
}

Var parameter(Tensor t) {
    auto node = std::make_shared<Node>();
    node->value = std::move(t);
    node->requires_grad = true;
    return node;
}

void backward(const Var& root) {
    require(root && root->value.numel() == 1, "backward: root must be a scalar");
    if (!root->requires_grad) {
        return;
    }
    // Iterative post-order DFS; reversed order is a valid topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second) {
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root->grad_buffer()[0] += 1.0F;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backward_fn) {
            node->grad_buffer();
            node->backward_fn(*node);
        }
    }
    // Interior nodes release their graph so the tape can be freed.
    for (Node* node : order) {
        if (node->backward_fn) {
            node->parents.clear();
            node->backward_fn = nullptr;
        }
    }
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad) {
    const Shape xs = x->value.shape();
    const Shape ws = weight->value.shape();
    require(ws.c == xs.c && ws.h == ws.w, "conv2d: weight/input channel mismatch");
    require(bias->value.numel() == static_cast<std::size_t>(ws.n), "conv2d: bias size mismatch");
    require(stride >= 1 && pad >= 0, "conv2d: invalid stride/pad");
    const int k = ws.h;
    const int out_h = (xs.h + 2 * pad - k) / stride + 1;
    const int out_w = (xs.w + 2 * pad - k) / stride + 1;
    const int rows = xs.c * k * k;
    const int cols = out_h * out_w;

    // Bands of output rows small enough for the column block to stay in
    // cache; GEMMs on the whole image are memory bound at these sizes.
    const int band = std::clamp(1024 / std::max(out_w, 1), 1, out_h);
    const int bands = (out_h + band - 1) / band;
    const std::size_t band_block = static_cast<std::size_t>(rows) * band * out_w;
    auto col = std::make_shared<FloatBuffer>(band_block * bands * xs.n);

    auto out = Tensor::uninitialized(Shape{xs.n, ws.n, out_h, out_w});
    const ConstMatMap w(weight->value.data(), ws.n, rows);
    const float* b = bias->value.data();
    for (int n = 0; n < xs.n; ++n) {
        for (int j = 0; j < bands; ++j) {
            const int oy0 = j * band;
            const int oy1 = std::min(out_h, oy0 + band);
            const int cc = (oy1 - oy0) * out_w;
            float* block = col->data() + band_block * (static_cast<std::size_t>(n) * bands + j);
            im2col(x->value.data() + xs.sample() * n, xs.c, xs.h, xs.w, k, stride, pad, oy0, oy1, out_w, block,
                   static_cast<std::size_t>(cc));
            StridedMap dst(out.data() + static_cast<std::size_t>(n) * ws.n * cols + static_cast<std::size_t>(oy0) * out_w,
                           ws.n, cc, Eigen::OuterStride<>(cols));
            dst.noalias() = w * ConstMatMap(block, rows, cc);
            for (int o = 0; o < ws.n; ++o) {
                dst.row(o).array() += b[o];
            }
        }
    }
    if (!g_grad_enabled) {
        col.reset();
    }

    return make_result(std::move(out), {x, weight, bias}, [=](Node& self) {
        const Var& xv = self.parents[0];
        const Var& wv = self.parents[1];
        const Var& bv = self.parents[2];
        const ConstMatMap wm(wv->value.data(), ws.n, rows);
        RowMat dcol;
        for (int n = 0; n < xs.n; ++n) {
            for (int j = 0; j < bands; ++j) {
                const int oy0 = j * band;
                const int oy1 = std::min(out_h, oy0 + band);
                const int cc = (oy1 - oy0) * out_w;
                const float* block = col->data() + band_block * (static_cast<std::size_t>(n) * bands + j);
                const ConstStridedMap go(self.grad.data() + static_cast<std::size_t>(n) * ws.n * cols +
                                             static_cast<std::size_t>(oy0) * out_w,
                                         ws.n, cc, Eigen::OuterStride<>(cols));
                if (bv->requires_grad) {
                    float* gb = bv->grad_buffer().data();
                    for (int o = 0; o < ws.n; ++o) {
                        gb[o] += go.row(o).sum();
                    }
                }
                if (wv->requires_grad) {
                    MatMap gw(wv->grad_buffer().data(), ws.n, rows);
                    gw.noalias() += go * ConstMatMap(block, rows, cc).transpose();
                }
                if (xv->requires_grad) {
                    dcol.resize(rows, cc);
                    dcol.noalias() = wm.transpose() * go;
                    col2im_add(dcol.data(), xs.c, xs.h, xs.w, k, stride, pad, oy0, oy1, out_w,
                               xv->grad_buffer().data() + xs.sample() * n, static_cast<std::size_t>(cc));
                }
            }
        }
    });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
    const Shape xs = x->value.shape();
    const Shape ws = weight->value.shape();
    const int in = static_cast<int>(xs.sample());
    require(ws.c * ws.h * ws.w == in, "linear: input size mismatch");
    require(bias->value.numel() == static_cast<std::size_t>(ws.n), "linear: bias size mismatch");
    Tensor out(Shape{xs.n, ws.n, 1, 1});
    ConstMatMap xm(x->value.data(), xs.n, in);
    ConstMatMap wm(weight->value.data(), ws.n, in);
    MatMap om(out.data(), xs.n, ws.n);
    om.noalias() = xm * wm.transpose();
    for (int n = 0; n < xs.n; ++n) {
        for (int o = 0; o < ws.n; ++o) {
            om(n, o) += bias->value[o];
        }
    }
    return make_result(std::move(out), {x, weight, bias}, [=](Node& self) {
        const Var& xv = self.parents[0];
        const Var& wv = self.parents[1];
        const Var& bv = self.parents[2];
        ConstMatMap go(self.grad.data(), xs.n, ws.n);
        if (xv->requires_grad) {
            MatMap gx(xv->grad_buffer().data(), xs.n, in);
            gx.noalias() += go * ConstMatMap(wv->value.data(), ws.n, in);
        }
        if (wv->requires_grad) {
            MatMap gw(wv->grad_buffer().data(), ws.n, in);
            gw.noalias() += go.transpose() * ConstMatMap(xv->value.data(), xs.n, in);
        }
        if (bv->requires_grad) {
            float* gb = bv->grad_buffer().data();
            for (int n = 0; n < xs.n; ++n) {
                for (int o = 0; o < ws.n; ++o) {
                    gb[o] += go(n, o);
                }
            }
        }
    });
}

Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, float eps) {
    const Shape xs = x->value.shape();
    require(groups >= 1 && xs.c % groups == 0, "group_norm: channels not divisible by groups");
    require(gamma->value.numel() == static_cast<std::size_t>(xs.c) &&
                beta->value.numel() == static_cast<std::size_t>(xs.c),
            "group_norm: affine size mismatch");
    const int per_group = xs.c / groups;
    const std::size_t group_size = static_cast<std::size_t>(per_group) * xs.plane();
    auto out = Tensor::uninitialized(xs);
    // Normalized activations and inverse std are kept for the backward pass.
    auto xhat = std::make_shared<FloatBuffer>(xs.numel());
    auto inv_std = std::make_shared<std::vector<float>>(static_cast<std::size_t>(xs.n) * groups);
    for (int n = 0; n < xs.n; ++n) {
        for (int g = 0; g < groups; ++g) {
            const std::size_t base = xs.sample() * n + group_size * g;
            const float* src = x->value.data() + base;
            double sum = 0.0;
            for (std::size_t i = 0; i < group_size; ++i) {
                sum += src[i];
            }
            const double mean = sum / static_cast<double>(group_size);
            double var = 0.0;
            for (std::size_t i = 0; i < group_size; ++i) {
                const double d = src[i] - mean;
                var += d * d;
            }
            var /= static_cast<double>(group_size);
            const float istd = static_cast<float>(1.0 / std::sqrt(var + eps));
            (*inv_std)[static_cast<std::size_t>(n) * groups + g] = istd;
            for (int cc = 0; cc < per_group; ++cc) {
                const int c = g * per_group + cc;
                const float ga = gamma->value[c];
                const float be = beta->value[c];
                const std::size_t off = base + cc * xs.plane();
                const float* xi = x->value.data() + off;
                float* xo = xhat->data() + off;
                float* yo = out.data() + off;
                const auto fmean = static_cast<float>(mean);
                for (std::size_t p = 0; p < xs.plane(); ++p) {
                    xo[p] = (xi[p] - fmean) * istd;
                    yo[p] = xo[p] * ga + be;
                }
            }
        }
    }
    return make_result(std::move(out), {x, gamma, beta}, [=](Node& self) {
        const Var& xv = self.parents[0];
        const Var& gv = self.parents[1];
        const Var& bv = self.parents[2];
        const Tensor& gout = self.grad;
        for (int n = 0; n < xs.n; ++n) {
            for (int g = 0; g < groups; ++g) {
                const std::size_t base = xs.sample() * n + group_size * g;
                double sum_dxh = 0.0;
                double sum_dxh_xh = 0.0;
                for (int cc = 0; cc < per_group; ++cc) {
                    const int c = g * per_group + cc;
                    const std::size_t off = base + cc * xs.plane();
                    const float* dy = gout.data() + off;
                    const float* xh = xhat->data() + off;
                    float gsum = 0.0F;
                    float bsum = 0.0F;
                    for (std::size_t p = 0; p < xs.plane(); ++p) {
                        gsum += dy[p] * xh[p];
                        bsum += dy[p];
                    }
                    const float ga = gv->value[c];
                    sum_dxh += static_cast<double>(bsum) * ga;
                    sum_dxh_xh += static_cast<double>(gsum) * ga;
                    if (gv->requires_grad) {
                        gv->grad_buffer()[c] += gsum;
                    }
                    if (bv->requires_grad) {
                        bv->grad_buffer()[c] += bsum;
                    }
                }
                if (!xv->requires_grad) {
                    continue;
                }
                const float istd = (*inv_std)[static_cast<std::size_t>(n) * groups + g];
                const auto m = static_cast<double>(group_size);
                float* gx = xv->grad_buffer().data();
                const auto mean_dxh = static_cast<float>(sum_dxh / m);
                const auto mean_dxh_xh = static_cast<float>(sum_dxh_xh / m);
                for (int cc = 0; cc < per_group; ++cc) {
                    const int c = g * per_group + cc;
                    const std::size_t off = base + cc * xs.plane();
                    const float* dy = gout.data() + off;
                    const float* xh = xhat->data() + off;
                    float* gxi = gx + off;
                    const float scale = gv->value[c] * istd;
                    for (std::size_t p = 0; p < xs.plane(); ++p) {
                        gxi[p] += scale * dy[p] - istd * (mean_dxh + xh[p] * mean_dxh_xh);
                    }
                }
            }
        }
    });
}

Var add(const Var& a, const Var& b) {
    require(a->value.shape() == b->value.shape(), "add: shape mismatch");
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.numel(); ++i) {
        out[i] += b->value[i];
    }
    return make_result(std::move(out), {a, b}, [](Node& self) {
        for (const Var& p : self.parents) {
            if (!p->requires_grad) {
                continue;
            }
            Tensor& g = p->grad_buffer();
            for (std::size_t i = 0; i < g.numel(); ++i) {
                g[i] += self.grad[i];
            }
        }
    });
}

Var weighted_sum(const Var& a, float wa, const Var& b, float wb) {
    require(a->value.shape() == b->value.shape(), "weighted_sum: shape mismatch");
    auto out = Tensor::uninitialized(a->value.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) {
        out[i] = wa * a->value[i] + wb * b->value[i];
    }
    return make_result(std::move(out), {a, b}, [wa, wb](Node& self) {
        const float w[2] = {wa, wb};
        for (int k = 0; k < 2; ++k) {
            const Var& p = self.parents[static_cast<std::size_t>(k)];
            if (!p->requires_grad) {
                continue;
            }
            Tensor& g = p->grad_buffer();
            for (std::size_t i = 0; i < g.numel(); ++i) {
                g[i] += w[k] * self.grad[i];
            }
        }
    });
}

namespace {

// Shared broadcast geometry for per-channel ops.
struct ChannelBroadcast {
    Shape xs;
    bool per_sample;
    [[nodiscard]] std::size_t vindex(int n, int c) const {
        return static_cast<std::size_t>(per_sample ? n : 0) * xs.c + c;
    }
};

ChannelBroadcast check_channel(const Var& x, const Var& v, const char* what) {
    const Shape xs = x->value.shape();
    const Shape vs = v->value.shape();
    require(vs.c == xs.c && vs.h == 1 && vs.w == 1 && (vs.n == xs.n || vs.n == 1), what);
    return {xs, vs.n == xs.n && xs.n != 1};
}

}  // namespace

Var add_channel(const Var& x, const Var& v) {
    const auto geo = check_channel(x, v, "add_channel: shape mismatch");
    const Shape xs = geo.xs;
    Tensor out = x->value;
    for (int n = 0; n < xs.n; ++n) {
        for (int c = 0; c < xs.c; ++c) {
            const float add = v->value[geo.vindex(n, c)];
            float* p = out.data() + (static_cast<std::size_t>(n) * xs.c + c) * xs.plane();
            for (std::size_t i = 0; i < xs.plane(); ++i) {
                p[i] += add;
            }
        }
    }
    return make_result(std::move(out), {x, v}, [geo](Node& self) {
        const Shape xs = geo.xs;
        const Var& xv = self.parents[0];
        const Var& vv = self.parents[1];
        if (xv->requires_grad) {
            Tensor& g = xv->grad_buffer();
            for (std::size_t i = 0; i < g.numel(); ++i) {
                g[i] += self.grad[i];
            }
        }
        if (vv->requires_grad) {
            Tensor& g = vv->grad_buffer();
            for (int n = 0; n < xs.n; ++n) {
                for (int c = 0; c < xs.c; ++c) {
                    const float* p = self.grad.data() + (static_cast<std::size_t>(n) * xs.c + c) * xs.plane();
                    double s = 0.0;
                    for (std::size_t i = 0; i < xs.plane(); ++i) {
                        s += p[i];
                    }
                    g[geo.vindex(n, c)] += static_cast<float>(s);
                }
            }
        }
    });
}

Var scale_channel(const Var& x, const Var& v) {
    const auto geo = check_channel(x, v, "scale_channel: shape mismatch");
    const Shape xs = geo.xs;
    Tensor out = x->value;
    for (int n = 0; n < xs.n; ++n) {
        for (int c = 0; c < xs.c; ++c) {
            const float s = 1.0F + v->value[geo.vindex(n, c)];
            float* p = out.data() + (static_cast<std::size_t>(n) * xs.c + c) * xs.plane();
            for (std::size_t i = 0; i < xs.plane(); ++i) {
                p[i] *= s;
            }
        }
    }
    return make_result(std::move(out), {x, v}, [geo](Node& self) {
        const Shape xs = geo.xs;
        const Var& xv = self.parents[0];
        const Var& vv = self.parents[1];
        for (int n = 0; n < xs.n; ++n) {
            for (int c = 0; c < xs.c; ++c) {
                const std::size_t off = (static_cast<std::size_t>(n) * xs.c + c) * xs.plane();
                const float s = 1.0F + vv->value[geo.vindex(n, c)];
                if (xv->requires_grad) {
                    float* g = xv->grad_buffer().data() + off;
                    for (std::size_t i = 0; i < xs.plane(); ++i) {
                        g[i] += self.grad[off + i] * s;
                    }
                }
                if (vv->requires_grad) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < xs.plane(); ++i) {
                        acc += static_cast<double>(self.grad[off + i]) * xv->value[off + i];
                    }
                    vv->grad_buffer()[geo.vindex(n, c)] += static_cast<float>(acc);
                }
            }
        }
    });
}

Var silu(const Var& x) {
    const std::size_t count = x->value.numel();
    auto out = Tensor::uninitialized(x->value.shape());
    auto sig = std::make_shared<FloatBuffer>(count);
    const float* in = x->value.data();
    for (std::size_t i = 0; i < count; ++i) {
        (*sig)[i] = 1.0F / (1.0F + std::exp(-in[i]));
    }
    for (std::size_t i = 0; i < count; ++i) {
        out[i] = in[i] * (*sig)[i];
    }
    return make_result(std::move(out), {x}, [sig](Node& self) {
        const Var& xv = self.parents[0];
        float* g = xv->grad_buffer().data();
        const float* v = xv->value.data();
        const float* s = sig->data();
        const float* go = self.grad.data();
        for (std::size_t i = 0; i < sig->size(); ++i) {
            g[i] += go[i] * s[i] * (1.0F + v[i] * (1.0F - s[i]));
        }
    });
}

Var upsample2x(const Var& x) {
    const Shape xs = x->value.shape();
    auto out = Tensor::uninitialized(Shape{xs.n, xs.c, xs.h * 2, xs.w * 2});
    for (int n = 0; n < xs.n; ++n) {
        for (int c = 0; c < xs.c; ++c) {
            for (int y = 0; y < xs.h * 2; ++y) {
                for (int xx = 0; xx < xs.w * 2; ++xx) {
                    out.at(n, c, y, xx) = x->value.at(n, c, y / 2, xx / 2);
                }
            }
        }
    }
    return make_result(std::move(out), {x}, [xs](Node& self) {
        Tensor& g = self.parents[0]->grad_buffer();
        for (int n = 0; n < xs.n; ++n) {
            for (int c = 0; c < xs.c; ++c) {
                for (int y = 0; y < xs.h * 2; ++y) {
                    for (int xx = 0; xx < xs.w * 2; ++xx) {
                        g.at(n, c, y / 2, xx / 2) += self.grad.at(n, c, y, xx);
                    }
                }
            }
        }
    });
}

Var concat_channels(const Var& a, const Var& b) {
    const Shape as = a->value.shape();
    const Shape bs = b->value.shape();
    require(as.n == bs.n && as.h == bs.h && as.w == bs.w, "concat_channels: shape mismatch");
    auto out = Tensor::uninitialized(Shape{as.n, as.c + bs.c, as.h, as.w});
    for (int n = 0; n < as.n; ++n) {
        std::copy_n(a->value.data() + as.sample() * n, as.sample(), out.data() + out.shape().sample() * n);
        std::copy_n(b->value.data() + bs.sample() * n, bs.sample(),
                    out.data() + out.shape().sample() * n + as.sample());
    }
    return make_result(std::move(out), {a, b}, [as, bs](Node& self) {
        const std::size_t stride = as.sample() + bs.sample();
        for (int n = 0; n < as.n; ++n) {
            const float* g = self.grad.data() + stride * n;
            if (self.parents[0]->requires_grad) {
                float* ga = self.parents[0]->grad_buffer().data() + as.sample() * n;
                for (std::size_t i = 0; i < as.sample(); ++i) {
                    ga[i] += g[i];
                }
            }
            if (self.parents[1]->requires_grad) {
                float* gb = self.parents[1]->grad_buffer().data() + bs.sample() * n;
                for (std::size_t i = 0; i < bs.sample(); ++i) {
                    gb[i] += g[as.sample() + i];
                }
            }
        }
    });
}

Var global_avg_pool(const Var& x) {
    const Shape xs = x->value.shape();
    Tensor out(Shape{xs.n, xs.c, 1, 1});
    const auto plane = static_cast<double>(xs.plane());
    for (int n = 0; n < xs.n; ++n) {
        for (int c = 0; c < xs.c; ++c) {
            const float* p = x->value.data() + (static_cast<std::size_t>(n) * xs.c + c) * xs.plane();
            double s = 0.0;
            for (std::size_t i = 0; i < xs.plane(); ++i) {
                s += p[i];
            }
            out[static_cast<std::size_t>(n) * xs.c + c] = static_cast<float>(s / plane);
        }
    }
    return make_result(std::move(out), {x}, [xs](Node& self) {
        Tensor& g = self.parents[0]->grad_buffer();
        const auto inv = static_cast<float>(1.0 / static_cast<double>(xs.plane()));
        for (int n = 0; n < xs.n; ++n) {
            for (int c = 0; c < xs.c; ++c) {
                const float v = self.grad[static_cast<std::size_t>(n) * xs.c + c] * inv;
                float* p = g.data() + (static_cast<std::size_t>(n) * xs.c + c) * xs.plane();
                for (std::size_t i = 0; i < xs.plane(); ++i) {
                    p[i] += v;
                }
            }
        }
    });
}

Var l1_loss(const Var& pred, const Tensor& target) {
    require(pred->value.shape() == target.shape(), "l1_loss: shape mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < target.numel(); ++i) {
        s += std::fabs(pred->value[i] - target[i]);
    }
    const auto m = static_cast<double>(target.numel());
    Tensor out(Shape{1, 1, 1, 1}, static_cast<float>(s / m));
    return make_result(std::move(out), {pred}, [target, m](Node& self) {
        Tensor& g = self.parents[0]->grad_buffer();
        const auto scale = static_cast<float>(self.grad[0] / m);
        const Tensor& p = self.parents[0]->value;
        for (std::size_t i = 0; i < g.numel(); ++i) {
            const float d = p[i] - target[i];
            g[i] += d > 0.0F ? scale : (d < 0.0F ? -scale : 0.0F);
        }
    });
}

Var bce_with_logits(const Var& logits, const Tensor& target) {
    require(logits->value.shape() == target.shape(), "bce_with_logits: shape mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < target.numel(); ++i) {
        const double l = logits->value[i];
        s += std::max(l, 0.0) - l * target[i] + std::log1p(std::exp(-std::fabs(l)));
    }
    const auto m = static_cast<double>(target.numel());
    Tensor out(Shape{1, 1, 1, 1}, static_cast<float>(s / m));
    return make_result(std::move(out), {logits}, [target, m](Node& self) {
        Tensor& g = self.parents[0]->grad_buffer();
        const auto scale = static_cast<float>(self.grad[0] / m);
        const Tensor& l = self.parents[0]->value;
        for (std::size_t i = 0; i < g.numel(); ++i) {
            g[i] += scale * (sigmoid(l[i]) - target[i]);
        }
    });
}

Var soft_dice_loss(const Var& logits, const Tensor& target) {
    require(logits->value.shape() == target.shape(), "soft_dice_loss: shape mismatch");
    const Shape s = target.shape();
    const std::size_t per = s.sample();
    std::vector<double> inter(static_cast<std::size_t>(s.n));
    std::vector<double> denom(static_cast<std::size_t>(s.n));
    double loss = 0.0;
    for (int n = 0; n < s.n; ++n) {
        double in = 0.0;
        double de = 1.0;
        for (std::size_t i = 0; i < per; ++i) {
            const float p = sigmoid(logits->value[per * n + i]);
            const float t = target[per * n + i];
            in += static_cast<double>(p) * t;
            de += static_cast<double>(p) + t;
        }
        inter[static_cast<std::size_t>(n)] = in;
        denom[static_cast<std::size_t>(n)] = de;
        loss += 1.0 - (2.0 * in + 1.0) / de;
    }
    Tensor out(Shape{1, 1, 1, 1}, static_cast<float>(loss / s.n));
    return make_result(std::move(out), {logits}, [target, inter, denom, s, per](Node& self) {
        Tensor& g = self.parents[0]->grad_buffer();
        const Tensor& l = self.parents[0]->value;
        const double scale = self.grad[0] / s.n;
        for (int n = 0; n < s.n; ++n) {
            const double num = 2.0 * inter[static_cast<std::size_t>(n)] + 1.0;
            const double de = denom[static_cast<std::size_t>(n)];
            for (std::size_t i = 0; i < per; ++i) {
                const std::size_t k = per * n + i;
                const double p = sigmoid(l[k]);
                // d/dp of -(num/de) = -(2 t de - num) / de^2
                const double dp = -(2.0 * target[k] * de - num) / (de * de);
                g[k] += static_cast<float>(scale * dp * p * (1.0 - p));
            }
        }
    });
}

}  // namespace diffseg::nn
