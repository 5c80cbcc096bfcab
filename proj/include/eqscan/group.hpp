#pragma once

#include <array>
#include <cmath>

#include "eqscan/kernels.hpp"
#include "eqscan/tensor.hpp"

namespace eqscan {

// The discrete rotation group: T 2x2 matrices G_t, row-major.
struct RotationGroup {
    int order = 0;
    std::array<std::array<double, 4>, 4> matrices{};
};

// Only T = 4 (the p4 grid rotations) is supported.
RotationGroup build_group(int order);

template <typename S>
struct LiftingKernel {
    Ten<S> base;  // (K, K, Cin, Cout); the orbit is derived, never stored as parameters
};

template <typename S>
struct GroupKernel {
    Ten<S> base;  // (K, K, Cin, 4, Cout), or (K, K, 4, C) when depthwise
    bool depthwise = false;
};

template <typename S>
struct EqLinearWeights {
    Ten<S> W;  // (C1, Tw, C2); Tw = 4 couples the group axis, Tw = 1 is one shared per-slot map
    Ten<S> b;  // (C2)
};

template <typename S>
LiftingKernel<S> make_lifting_kernel(Ten<S> base) {
    if (base.rank() != 4 || base.dim(0) != base.dim(1))
        throw ShapeError("lifting kernel base must be (K,K,Cin,Cout), got " + dims_str(base.dims));
    return {std::move(base)};
}

template <typename S>
GroupKernel<S> make_group_kernel(Ten<S> base) {
    if (base.rank() != 5 || base.dim(0) != base.dim(1) || base.dim(3) != 4)
        throw ShapeError("group kernel base must be (K,K,Cin,4,Cout), got " + dims_str(base.dims));
    return {std::move(base), false};
}

template <typename S>
GroupKernel<S> make_depthwise_group_kernel(Ten<S> base) {
    if (base.rank() != 4 || base.dim(0) != base.dim(1) || base.dim(2) != 4)
        throw ShapeError("depthwise group kernel base must be (K,K,4,C), got " + dims_str(base.dims));
    return {std::move(base), true};
}

template <typename S>
EqLinearWeights<S> make_eq_linear_weights(Ten<S> w, Ten<S> b) {
    if (w.rank() != 3 || (w.dim(1) != 4 && w.dim(1) != 1))
        throw ShapeError("eq_linear weight must be (C1,4,C2) or (C1,1,C2), got " + dims_str(w.dims));
    if (b.rank() != 1 || b.dim(0) != w.dim(2)) throw ShapeError("eq_linear bias must be (C2)");
    return {std::move(w), std::move(b)};
}

namespace detail {

// Source coordinates of t CCW quarter turns on a square K-grid.
inline void rot_src(int t, int64_t k, int64_t a, int64_t b, int64_t& sa, int64_t& sb) {
    switch (t & 3) {
        case 0: sa = a; sb = b; break;
        case 1: sa = b; sb = k - 1 - a; break;
        case 2: sa = k - 1 - a; sb = k - 1 - b; break;
        default: sa = k - 1 - b; sb = a; break;
    }
}

// Orbit slice t of a lifting kernel: spatial rotation of the base.
template <typename S>
Ten<S> lift_orbit(const Ten<S>& base, int t) {
    return rotate_spatial(base, t);
}

// Scatter the adjoint of lift_orbit back onto the base.
template <typename S>
void lift_orbit_adjoint(const Ten<S>& g_orbit, int t, Ten<S>& g_base) {
    Ten<S> back = rotate_spatial(g_orbit, (4 - t) % 4);
    for (size_t i = 0; i < g_base.data.size(); ++i) g_base.data[i] += back.data[i];
}

// Orbit slice t of a group kernel: spatial rotation plus a cyclic shift of
// the input-group axis (axis rank-2) by t.
template <typename S>
Ten<S> group_orbit(const Ten<S>& base, int t) {
    Ten<S> rot = rotate_spatial(base, t);
    Ten<S> out(rot.dims);
    const int64_t co = rot.dims.back();
    const int64_t blocks = rot.numel() / (4 * co);
    for (int64_t u = 0; u < blocks; ++u)
        for (int64_t g = 0; g < 4; ++g) {
            const S* src = rot.data.data() + (u * 4 + ((g - t) & 3)) * co;
            S* dst = out.data.data() + (u * 4 + g) * co;
            std::copy(src, src + co, dst);
        }
    return out;
}

template <typename S>
void group_orbit_adjoint(const Ten<S>& g_orbit, int t, Ten<S>& g_base) {
    Ten<S> unshifted(g_orbit.dims);
    const int64_t co = g_orbit.dims.back();
    const int64_t blocks = g_orbit.numel() / (4 * co);
    for (int64_t u = 0; u < blocks; ++u)
        for (int64_t g = 0; g < 4; ++g) {
            const S* src = g_orbit.data.data() + (u * 4 + g) * co;
            S* dst = unshifted.data.data() + (u * 4 + ((g - t) & 3)) * co;
            std::copy(src, src + co, dst);
        }
    Ten<S> back = rotate_spatial(unshifted, (4 - t) % 4);
    for (size_t i = 0; i < g_base.data.size(); ++i) g_base.data[i] += back.data[i];
}

}  // namespace detail

// Lifting convolution (image -> group feature map): component t is the
// cross-correlation of the image with the t-rotated base kernel.
template <typename S>
Ten<S> eq_conv_lift(const Ten<S>& img, const LiftingKernel<S>& ker, int64_t stride, int64_t pad,
                    const Ten<S>* bias = nullptr) {
    if (img.rank() != 3) throw ShapeError("eq_conv_lift expects (H,W,C), got " + dims_str(img.dims));
    const int64_t k = ker.base.dim(0), ci = ker.base.dim(2), co = ker.base.dim(3);
    if (img.dim(2) != ci)
        throw ShapeError("eq_conv_lift channel mismatch: image has " + std::to_string(img.dim(2)) +
                         ", kernel expects " + std::to_string(ci));
    const int64_t ho = kern::conv_out_dim(img.dim(0), k, stride, pad);
    const int64_t wo = kern::conv_out_dim(img.dim(1), k, stride, pad);
    if (ho < 1 || wo < 1) throw ShapeError("eq_conv_lift output would be empty");
    Ten<S> out({ho, wo, co, 4});
    for (int t = 0; t < 4; ++t) {
        Ten<S> orbit = detail::lift_orbit(ker.base, t);
        kern::conv2d(img.data.data(), img.dim(0), img.dim(1), ci, orbit.data.data(), k, co, stride,
                     pad, out.data.data() + t, ho, wo, 4);
    }
    if (bias) {
        for (int64_t u = 0; u < ho * wo; ++u)
            for (int64_t c = 0; c < co; ++c)
                for (int64_t t = 0; t < 4; ++t) out.data[size_t((u * co + c) * 4 + t)] += bias->data[size_t(c)];
    }
    return out;
}

// Group-to-group convolution: output slot t sums convolutions of every input
// slot with the jointly rotated-and-shifted kernel orbit.
template <typename S>
Ten<S> eq_conv_group(const Ten<S>& x, const GroupKernel<S>& ker, int64_t stride, int64_t pad,
                     const Ten<S>* bias = nullptr) {
    if (x.rank() != 4 || x.dim(3) != 4)
        throw ShapeError("eq_conv_group expects (H,W,C,4), got " + dims_str(x.dims));
    const int64_t k = ker.base.dim(0);
    const int64_t ci = ker.depthwise ? ker.base.dim(3) : ker.base.dim(2);
    const int64_t co = ker.depthwise ? ker.base.dim(3) : ker.base.dim(4);
    if (x.dim(2) != ci)
        throw ShapeError("eq_conv_group channel mismatch: input has " + std::to_string(x.dim(2)) +
                         ", kernel expects " + std::to_string(ci));
    const int64_t ho = kern::conv_out_dim(x.dim(0), k, stride, pad);
    const int64_t wo = kern::conv_out_dim(x.dim(1), k, stride, pad);
    if (ho < 1 || wo < 1) throw ShapeError("eq_conv_group output would be empty");
    Ten<S> out({ho, wo, co, 4});
    for (int t = 0; t < 4; ++t) {
        Ten<S> orbit = detail::group_orbit(ker.base, t);
        if (ker.depthwise) {
            kern::conv2d_dwg(x.data.data(), x.dim(0), x.dim(1), ci, orbit.data.data(), k, stride,
                             pad, out.data.data(), ho, wo, t);
        } else {
            kern::conv2d(x.data.data(), x.dim(0), x.dim(1), ci * 4, orbit.data.data(), k, co,
                         stride, pad, out.data.data() + t, ho, wo, 4);
        }
    }
    if (bias) {
        for (int64_t u = 0; u < ho * wo; ++u)
            for (int64_t c = 0; c < co; ++c)
                for (int64_t t = 0; t < 4; ++t) out.data[size_t((u * co + c) * 4 + t)] += bias->data[size_t(c)];
    }
    return out;
}

// EQ-Linear over trailing (C1, T) axes; leading axes are pointwise.
template <typename S>
Ten<S> eq_linear(const Ten<S>& x, const EqLinearWeights<S>& w) {
    if (x.rank() < 2 || x.dims.back() != 4)
        throw ShapeError("eq_linear expects trailing (C1,4) axes, got " + dims_str(x.dims));
    const int64_t c1 = x.dim(x.rank() - 2);
    if (c1 != w.W.dim(0))
        throw ShapeError("eq_linear channel mismatch: input C1=" + std::to_string(c1) + ", weight C1=" +
                         std::to_string(w.W.dim(0)));
    const int64_t c2 = w.W.dim(2);
    const int64_t p = x.numel() / (c1 * 4);
    std::vector<int64_t> od(x.dims.begin(), x.dims.end() - 2);
    od.push_back(c2);
    od.push_back(4);
    Ten<S> out(od);
    kern::eq_linear(x.data.data(), p, c1, w.W.data.data(), w.W.dim(1), c2, w.b.data.data(),
                    out.data.data());
    return out;
}

// Per-channel normalization; statistics over (H, W) and, when the group axis
// is present, over T as well, so they are invariant under the group action.
template <typename S>
Ten<S> eq_norm(const Ten<S>& x, const Ten<S>& gamma, const Ten<S>& beta, double eps = 1e-5) {
    if (x.rank() != 3 && x.rank() != 4)
        throw ShapeError("eq_norm expects (H,W,C) or (H,W,C,T), got " + dims_str(x.dims));
    const int64_t c = x.dim(2);
    if (gamma.numel() != c || beta.numel() != c) throw ShapeError("eq_norm scale/bias must be (C)");
    const int64_t post = x.rank() == 4 ? x.dim(3) : 1;
    Ten<S> out(x.dims);
    kern::norm_channel(x.data.data(), x.dim(0) * x.dim(1), c, post, gamma.data.data(),
                       beta.data.data(), eps, out.data.data(), nullptr, nullptr);
    return out;
}

// EQ patch embedding: strided lifting convolution followed by the invariant
// normalization. Spatial dims must be divisible by the stride; callers pad
// explicitly instead of relying on silent padding.
template <typename S>
Ten<S> eq_patch_embed(const Ten<S>& img, const LiftingKernel<S>& ker, int64_t stride,
                      const Ten<S>* gamma = nullptr, const Ten<S>* beta = nullptr,
                      const Ten<S>* bias = nullptr) {
    if (img.rank() != 3) throw ShapeError("eq_patch_embed expects (H,W,C)");
    if (img.dim(0) % stride != 0 || img.dim(1) % stride != 0)
        throw ShapeError("eq_patch_embed requires H and W divisible by the stride (pad the input): " +
                         dims_str(img.dims) + " with stride " + std::to_string(stride));
    Ten<S> out = eq_conv_lift(img, ker, stride, 0, bias);
    if (gamma && beta) out = eq_norm(out, *gamma, *beta);
    return out;
}

// EQ downsampling: K=2, stride 2, no padding group convolution.
template <typename S>
Ten<S> eq_downsample(const Ten<S>& x, const GroupKernel<S>& ker, const Ten<S>* bias = nullptr) {
    if (x.rank() != 4) throw ShapeError("eq_downsample expects (H,W,C,4)");
    if (x.dim(0) % 2 != 0 || x.dim(1) % 2 != 0)
        throw ShapeError("eq_downsample requires even H and W, got " + dims_str(x.dims));
    if (ker.base.dim(0) != 2) throw ShapeError("eq_downsample kernel must have K=2");
    return eq_conv_group(x, ker, 2, 0, bias);
}

// Classification head: spatial mean, EQ-Linear, then mean over the group
// axis; the result is invariant under the joint transform of the input.
template <typename S>
Ten<S> invariant_head(const Ten<S>& x, const EqLinearWeights<S>& w) {
    if (x.rank() != 4 || x.dim(3) != 4) throw ShapeError("invariant_head expects (H,W,C,4)");
    const int64_t hw = x.dim(0) * x.dim(1), c = x.dim(2);
    Ten<S> pooled({c, 4});
    for (int64_t e = 0; e < c * 4; ++e) {
        double acc = 0.0;
        for (int64_t u = 0; u < hw; ++u) acc += double(x.data[size_t(u * c * 4 + e)]);
        pooled.data[size_t(e)] = S(acc / double(hw));
    }
    Ten<S> logits_t = eq_linear(pooled, w);  // (num_classes, 4)
    const int64_t nc = logits_t.dim(0);
    Ten<S> out({nc});
    for (int64_t o = 0; o < nc; ++o) {
        double acc = 0.0;
        for (int64_t t = 0; t < 4; ++t) acc += double(logits_t(o, t));
        out.data[size_t(o)] = S(acc / 4.0);
    }
    return out;
}

namespace detail {
// Channel index feeding subpixel offset (a, b) in group slot t: the base
// row-major placement with the offset grid rotated back by t quarter turns.
inline int64_t shuffle_channel(int t, int64_t r, int64_t a, int64_t b) {
    for (int s = 0; s < (t & 3); ++s) {
        const int64_t na = b, nb = r - 1 - a;  // CW point map
        a = na;
        b = nb;
    }
    return a * r + b;
}
}  // namespace detail

// Equivariant sub-pixel upsampling: the r^2 channel-to-subpixel placement is
// rotated per group slot so the layer commutes with the joint transform.
template <typename S>
Ten<S> eq_pixel_shuffle(const Ten<S>& x, int64_t r) {
    if (x.rank() != 4 || x.dim(3) != 4) throw ShapeError("eq_pixel_shuffle expects (H,W,C,4)");
    if (r < 1) throw ValueError("upscale factor must be >= 1");
    const int64_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
    if (c % (r * r) != 0)
        throw ShapeError("eq_pixel_shuffle: C=" + std::to_string(c) + " not divisible by r^2=" +
                         std::to_string(r * r));
    const int64_t cq = c / (r * r);
    Ten<S> out({h * r, w * r, cq, 4});
    for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < w; ++j)
            for (int64_t a = 0; a < r; ++a)
                for (int64_t b = 0; b < r; ++b)
                    for (int t = 0; t < 4; ++t) {
                        const int64_t kidx = detail::shuffle_channel(t, r, a, b);
                        for (int64_t e = 0; e < cq; ++e)
                            out((i * r + a), (j * r + b), e, int64_t(t)) = x(i, j, e * r * r + kidx, int64_t(t));
                    }
    return out;
}

// SiLU, applied pointwise (commutes with every permutation operator).
template <typename S>
inline S silu(S v) {
    return S(double(v) / (1.0 + std::exp(-double(v))));
}

template <typename S>
Ten<S> silu_map(const Ten<S>& x) {
    Ten<S> out(x.dims);
    for (size_t i = 0; i < x.data.size(); ++i) out.data[i] = silu(x.data[i]);
    return out;
}

}  // namespace eqscan
