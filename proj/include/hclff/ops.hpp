#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>

#include "hclff/tensor.hpp"

namespace hclff {

// ---------------------------------------------------------------------------
// 2-D convolution. input [Cin,H,W], weights [Cout,Cin,kh,kw], bias [Cout].
// Odd kernels, stride 1 or 2, zero padding. Loops accumulate in a fixed order
// (co, ci, kh, kw, oh, ow) so results are reproducible bit-for-bit.
// ---------------------------------------------------------------------------

inline std::size_t conv_out_extent(std::size_t in, std::size_t k, int stride, int padding) {
    const long long num = static_cast<long long>(in) + 2LL * padding - static_cast<long long>(k);
    if (num < 0) throw argument_error("conv2d: kernel larger than padded input");
    return static_cast<std::size_t>(num / stride) + 1;
}

// Output coordinates y for which y*stride - padding + tap lands inside [0, in).
struct ConvRange {
    std::size_t lo, hi;  // half-open
};
inline ConvRange conv_valid_range(std::size_t out, std::size_t in, int stride, int padding, std::size_t tap) {
    const long long off = static_cast<long long>(tap) - padding;
    long long lo = off >= 0 ? 0 : (-off + stride - 1) / stride;
    long long hi = (static_cast<long long>(in) - 1 - off) / stride + 1;
    lo = std::max(0LL, lo);
    hi = std::min(hi, static_cast<long long>(out));
    if (hi < lo) hi = lo;
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

template <class R>
inline void conv2d_check(const Tensor<R>& input, const Tensor<R>& weights, const Tensor<R>* bias, int stride,
                         int padding) {
    if (input.rank() != 3) throw argument_error("conv2d: input must be [C,H,W], got " + input.shape_str());
    if (weights.rank() != 4)
        throw argument_error("conv2d: weights must be [Cout,Cin,kh,kw], got " + weights.shape_str());
    if (weights.dim(1) != input.dim(0))
        throw argument_error("conv2d: input channels " + std::to_string(input.dim(0)) + " do not match weights " +
                             weights.shape_str());
    if (weights.dim(2) % 2 == 0 || weights.dim(3) % 2 == 0)
        throw argument_error("conv2d: kernel extents must be odd");
    if (stride != 1 && stride != 2) throw argument_error("conv2d: stride must be 1 or 2");
    if (padding < 0) throw argument_error("conv2d: negative padding");
    if (bias && bias->shape != std::vector<std::size_t>{weights.dim(0)})
        throw argument_error("conv2d: bias shape mismatch");
    check_finite(input, "conv2d input");
    check_finite(weights, "conv2d weights");
    if (bias) check_finite(*bias, "conv2d bias");
}

template <class R>
Tensor<R> conv2d(const Tensor<R>& input, const Tensor<R>& weights, const Tensor<R>& bias, int stride, int padding) {
    conv2d_check(input, weights, &bias, stride, padding);
    const std::size_t cin = input.dim(0), h = input.dim(1), w = input.dim(2);
    const std::size_t cout = weights.dim(0), kh = weights.dim(2), kw = weights.dim(3);
    const std::size_t oh = conv_out_extent(h, kh, stride, padding);
    const std::size_t ow = conv_out_extent(w, kw, stride, padding);

    Tensor<R> out({cout, oh, ow});
    for (std::size_t co = 0; co < cout; ++co) {
        R* outc = &out.data[co * oh * ow];
        const R bv = bias[co];
        for (std::size_t i = 0; i < oh * ow; ++i) outc[i] = bv;
        for (std::size_t ci = 0; ci < cin; ++ci) {
            const R* inc = &input.data[ci * h * w];
            const R* wk = &weights.data[(co * cin + ci) * kh * kw];
            for (std::size_t r = 0; r < kh; ++r) {
                const ConvRange ry = conv_valid_range(oh, h, stride, padding, r);
                for (std::size_t c = 0; c < kw; ++c) {
                    const R wv = wk[r * kw + c];
                    const ConvRange rx = conv_valid_range(ow, w, stride, padding, c);
                    if (rx.lo >= rx.hi) continue;
                    const std::size_t ix0 = static_cast<std::size_t>(
                        static_cast<long long>(rx.lo) * stride - padding + static_cast<long long>(c));
                    for (std::size_t y = ry.lo; y < ry.hi; ++y) {
                        const std::size_t iy = y * stride - padding + r;
                        const R* inrow = inc + iy * w + ix0;
                        R* outrow = outc + y * ow;
                        if (stride == 1) {
                            for (std::size_t x = rx.lo; x < rx.hi; ++x) outrow[x] += wv * inrow[x - rx.lo];
                        } else {
                            for (std::size_t x = rx.lo; x < rx.hi; ++x) outrow[x] += wv * inrow[(x - rx.lo) * 2];
                        }
                    }
                }
            }
        }
    }
    return out;
}

template <class R>
struct Conv2dGrads {
    Tensor<R> weights;
    Tensor<R> bias;
    Tensor<R> input;  // empty when not requested
};

template <class R>
Conv2dGrads<R> conv2d_backward(const Tensor<R>& input, const Tensor<R>& weights, const Tensor<R>& grad_output,
                               int stride, int padding, bool need_grad_input = true) {
    conv2d_check(input, weights, static_cast<const Tensor<R>*>(nullptr), stride, padding);
    const std::size_t cin = input.dim(0), h = input.dim(1), w = input.dim(2);
    const std::size_t cout = weights.dim(0), kh = weights.dim(2), kw = weights.dim(3);
    const std::size_t oh = conv_out_extent(h, kh, stride, padding);
    const std::size_t ow = conv_out_extent(w, kw, stride, padding);
    check_shape(grad_output, {cout, oh, ow}, "conv2d_backward grad_output");
    check_finite(grad_output, "conv2d_backward grad_output");

    Conv2dGrads<R> g;
    g.weights = Tensor<R>({cout, cin, kh, kw});
    g.bias = Tensor<R>({cout});
    if (need_grad_input) g.input = Tensor<R>({cin, h, w});

    for (std::size_t co = 0; co < cout; ++co) {
        const R* gout = &grad_output.data[co * oh * ow];
        R bacc = R(0);
        for (std::size_t i = 0; i < oh * ow; ++i) bacc += gout[i];
        g.bias[co] = bacc;
        for (std::size_t ci = 0; ci < cin; ++ci) {
            const R* inc = &input.data[ci * h * w];
            R* ginc = need_grad_input ? &g.input.data[ci * h * w] : nullptr;
            const R* wk = &weights.data[(co * cin + ci) * kh * kw];
            R* gwk = &g.weights.data[(co * cin + ci) * kh * kw];
            for (std::size_t r = 0; r < kh; ++r) {
                const ConvRange ry = conv_valid_range(oh, h, stride, padding, r);
                for (std::size_t c = 0; c < kw; ++c) {
                    const R wv = wk[r * kw + c];
                    const ConvRange rx = conv_valid_range(ow, w, stride, padding, c);
                    R wacc = R(0);
                    if (rx.lo >= rx.hi) {
                        gwk[r * kw + c] = wacc;
                        continue;
                    }
                    const std::size_t ix0 = static_cast<std::size_t>(
                        static_cast<long long>(rx.lo) * stride - padding + static_cast<long long>(c));
                    for (std::size_t y = ry.lo; y < ry.hi; ++y) {
                        const std::size_t iy = y * stride - padding + r;
                        const R* inrow = inc + iy * w + ix0;
                        const R* grow = gout + y * ow;
                        if (stride == 1) {
                            for (std::size_t x = rx.lo; x < rx.hi; ++x) wacc += grow[x] * inrow[x - rx.lo];
                        } else {
                            for (std::size_t x = rx.lo; x < rx.hi; ++x) wacc += grow[x] * inrow[(x - rx.lo) * 2];
                        }
                        if (need_grad_input) {
                            R* ginrow = ginc + iy * w + ix0;
                            if (stride == 1) {
                                for (std::size_t x = rx.lo; x < rx.hi; ++x) ginrow[x - rx.lo] += wv * grow[x];
                            } else {
                                for (std::size_t x = rx.lo; x < rx.hi; ++x) ginrow[(x - rx.lo) * 2] += wv * grow[x];
                            }
                        }
                    }
                    gwk[r * kw + c] = wacc;
                }
            }
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// ReLU. Subgradient at exactly zero is defined as zero.
// ---------------------------------------------------------------------------

template <class R>
Tensor<R> relu(const Tensor<R>& x) {
    check_finite(x, "relu input");
    Tensor<R> out = x;
    for (R& v : out.data) v = v > R(0) ? v : R(0);
    return out;
}

template <class R>
Tensor<R> relu_backward(const Tensor<R>& x, const Tensor<R>& grad_output) {
    if (!x.same_shape(grad_output)) throw argument_error("relu_backward: shape mismatch");
    Tensor<R> out = grad_output;
    for (std::size_t i = 0; i < out.numel(); ++i)
        if (!(x.data[i] > R(0))) out.data[i] = R(0);
    return out;
}

// ---------------------------------------------------------------------------
// Group normalization over `groups` equal contiguous slabs of the tensor
// (channel-partition layout: [C,H,W] with C divisible by groups). No affine
// parameters: output = (x - mean_g) / sqrt(var_g + eps) with biased variance.
// Returned stds are sqrt(var + eps), the denominators actually used.
// ---------------------------------------------------------------------------

template <class R>
struct GroupNormOut {
    Tensor<R> normalized;
    Tensor<R> mean;  // [groups]
    Tensor<R> std;   // [groups], sqrt(var + eps)
};

template <class R>
inline void group_norm_check(const Tensor<R>& x, std::size_t groups, double eps) {
    if (groups == 0 || x.numel() % groups != 0)
        throw argument_error("group_norm: element count " + std::to_string(x.numel()) + " not divisible into " +
                             std::to_string(groups) + " groups");
    if (x.numel() / groups < 2) throw argument_error("group_norm: groups need at least 2 elements");
    if (!(eps > 0)) throw argument_error("group_norm: eps must be positive");
    check_finite(x, "group_norm input");
}

template <class R>
GroupNormOut<R> group_norm(const Tensor<R>& x, std::size_t groups, double eps) {
    group_norm_check(x, groups, eps);
    const std::size_t gsize = x.numel() / groups;
    GroupNormOut<R> out;
    out.normalized = Tensor<R>(x.shape);
    out.mean = Tensor<R>({groups});
    out.std = Tensor<R>({groups});
    for (std::size_t g = 0; g < groups; ++g) {
        const R* xs = &x.data[g * gsize];
        R* ys = &out.normalized.data[g * gsize];
        R mean = R(0);
        for (std::size_t i = 0; i < gsize; ++i) mean += xs[i];
        mean /= static_cast<R>(gsize);
        R var = R(0);
        for (std::size_t i = 0; i < gsize; ++i) {
            const R d = xs[i] - mean;
            var += d * d;
        }
        var /= static_cast<R>(gsize);
        const R denom = std::sqrt(var + static_cast<R>(eps));
        for (std::size_t i = 0; i < gsize; ++i) ys[i] = (xs[i] - mean) / denom;
        out.mean[g] = mean;
        out.std[g] = denom;
    }
    return out;
}

template <class R>
Tensor<R> group_norm_backward(const Tensor<R>& x, const Tensor<R>& grad_output, std::size_t groups, double eps) {
    group_norm_check(x, groups, eps);
    if (!x.same_shape(grad_output)) throw argument_error("group_norm_backward: shape mismatch");
    const std::size_t gsize = x.numel() / groups;
    Tensor<R> gx(x.shape);
    for (std::size_t g = 0; g < groups; ++g) {
        const R* xs = &x.data[g * gsize];
        const R* ds = &grad_output.data[g * gsize];
        R* os = &gx.data[g * gsize];
        R mean = R(0);
        for (std::size_t i = 0; i < gsize; ++i) mean += xs[i];
        mean /= static_cast<R>(gsize);
        R var = R(0);
        for (std::size_t i = 0; i < gsize; ++i) {
            const R d = xs[i] - mean;
            var += d * d;
        }
        var /= static_cast<R>(gsize);
        const R denom = std::sqrt(var + static_cast<R>(eps));
        // dx = (d - mean(d) - xhat * mean(d * xhat)) / denom
        R dmean = R(0), dxhat = R(0);
        for (std::size_t i = 0; i < gsize; ++i) {
            const R xhat = (xs[i] - mean) / denom;
            dmean += ds[i];
            dxhat += ds[i] * xhat;
        }
        dmean /= static_cast<R>(gsize);
        dxhat /= static_cast<R>(gsize);
        for (std::size_t i = 0; i < gsize; ++i) {
            const R xhat = (xs[i] - mean) / denom;
            os[i] = (ds[i] - dmean - xhat * dxhat) / denom;
        }
    }
    return gx;
}

// ---------------------------------------------------------------------------
// Pooling and the linear map.
// ---------------------------------------------------------------------------

template <class R>
Tensor<R> global_avg_pool(const Tensor<R>& x) {
    if (x.rank() != 3) throw argument_error("global_avg_pool: input must be [C,H,W]");
    const std::size_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
    Tensor<R> out({c});
    for (std::size_t i = 0; i < c; ++i) {
        R acc = R(0);
        const R* xs = &x.data[i * hw];
        for (std::size_t j = 0; j < hw; ++j) acc += xs[j];
        out[i] = acc / static_cast<R>(hw);
    }
    return out;
}

template <class R>
Tensor<R> global_avg_pool_backward(const Tensor<R>& grad_output, std::size_t h, std::size_t w) {
    if (grad_output.rank() != 1) throw argument_error("global_avg_pool_backward: grad must be [C]");
    const std::size_t c = grad_output.dim(0);
    Tensor<R> gx({c, h, w});
    for (std::size_t i = 0; i < c; ++i) {
        const R v = grad_output[i] / static_cast<R>(h * w);
        R* xs = &gx.data[i * h * w];
        for (std::size_t j = 0; j < h * w; ++j) xs[j] = v;
    }
    return gx;
}

template <class R>
Tensor<R> avg_pool_2x2(const Tensor<R>& x) {
    if (x.rank() != 3) throw argument_error("avg_pool_2x2: input must be [C,H,W]");
    const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (h % 2 != 0 || w % 2 != 0)
        throw argument_error("avg_pool_2x2: spatial extents must be even, got " + x.shape_str());
    Tensor<R> out({c, h / 2, w / 2});
    for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t y = 0; y < h / 2; ++y)
            for (std::size_t x2 = 0; x2 < w / 2; ++x2)
                out.at(ci, y, x2) = (x.at(ci, 2 * y, 2 * x2) + x.at(ci, 2 * y, 2 * x2 + 1) +
                                     x.at(ci, 2 * y + 1, 2 * x2) + x.at(ci, 2 * y + 1, 2 * x2 + 1)) /
                                    R(4);
    return out;
}

template <class R>
Tensor<R> avg_pool_2x2_backward(const Tensor<R>& grad_output) {
    if (grad_output.rank() != 3) throw argument_error("avg_pool_2x2_backward: grad must be [C,H,W]");
    const std::size_t c = grad_output.dim(0), h = grad_output.dim(1), w = grad_output.dim(2);
    Tensor<R> gx({c, 2 * h, 2 * w});
    for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x2 = 0; x2 < w; ++x2) {
                const R v = grad_output.at(ci, y, x2) / R(4);
                gx.at(ci, 2 * y, 2 * x2) = v;
                gx.at(ci, 2 * y, 2 * x2 + 1) = v;
                gx.at(ci, 2 * y + 1, 2 * x2) = v;
                gx.at(ci, 2 * y + 1, 2 * x2 + 1) = v;
            }
    return gx;
}

template <class R>
Tensor<R> linear(const Tensor<R>& x, const Tensor<R>& w, const Tensor<R>& b) {
    if (x.rank() != 1 || w.rank() != 2) throw argument_error("linear: expected x [Din], w [Dout,Din]");
    const std::size_t din = x.dim(0), dout = w.dim(0);
    if (w.dim(1) != din || b.shape != std::vector<std::size_t>{dout})
        throw argument_error("linear: shape mismatch: x " + x.shape_str() + ", w " + w.shape_str());
    Tensor<R> out({dout});
    for (std::size_t i = 0; i < dout; ++i) {
        R acc = b[i];
        const R* wr = &w.data[i * din];
        for (std::size_t j = 0; j < din; ++j) acc += wr[j] * x.data[j];
        out[i] = acc;
    }
    return out;
}

template <class R>
struct LinearGrads {
    Tensor<R> weights;
    Tensor<R> bias;
    Tensor<R> input;
};

template <class R>
LinearGrads<R> linear_backward(const Tensor<R>& x, const Tensor<R>& w, const Tensor<R>& grad_output) {
    const std::size_t din = x.dim(0), dout = w.dim(0);
    if (grad_output.shape != std::vector<std::size_t>{dout}) throw argument_error("linear_backward: shape mismatch");
    LinearGrads<R> g;
    g.weights = Tensor<R>({dout, din});
    g.bias = grad_output;
    g.input = Tensor<R>({din});
    for (std::size_t i = 0; i < dout; ++i) {
        const R gi = grad_output[i];
        const R* wr = &w.data[i * din];
        R* gwr = &g.weights.data[i * din];
        for (std::size_t j = 0; j < din; ++j) {
            gwr[j] = gi * x.data[j];
            g.input[j] += gi * wr[j];
        }
    }
    return g;
}

// In-place helpers used by the gradient accumulation path.
template <class R>
inline void axpy(Tensor<R>& y, const Tensor<R>& x, R alpha = R(1)) {
    if (!y.same_shape(x)) throw argument_error("axpy: shape mismatch");
    for (std::size_t i = 0; i < y.numel(); ++i) y.data[i] += alpha * x.data[i];
}

template <class R>
inline void scale(Tensor<R>& y, R alpha) {
    for (R& v : y.data) v *= alpha;
}

}  // namespace hclff
