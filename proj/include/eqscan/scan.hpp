#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "eqscan/tensor.hpp"

namespace eqscan {

// Precomputed index permutations for one (H, W) grid. Path t is the base
// row-major path rotated by G_t, so applying it to component t reads that
// component through the inverse spatial rotation. fwd[t][l] is the flat
// (i*W + j) source position for sequence slot l; inv[t] is the inverse table.
struct ScanPlan {
    int64_t h = 0, w = 0;
    std::array<std::vector<int64_t>, 4> fwd;
    std::array<std::vector<int64_t>, 4> inv;
    std::array<std::vector<int64_t>, 4> base_fwd;  // row, col, reversed row, reversed col
    std::array<std::vector<int64_t>, 4> base_inv;
};

// Plans are immutable once built and cached per (H, W).
const ScanPlan& scan_plan(int64_t h, int64_t w);

// Image-to-sequence carrier. tensor has shape (L, ..., T); origin dims are
// kept so the merge can restore (H, W, ..., T).
template <typename S>
struct ScanSequence {
    Ten<S> tensor;
    int64_t origin_h = 0;
    int64_t origin_w = 0;
};

namespace detail {
template <typename S>
Ten<S> gather_paths(const Ten<S>& x, const std::array<std::vector<int64_t>, 4>& paths) {
    const int64_t h = x.dim(0), w = x.dim(1), l = h * w;
    int64_t mid = 1;
    for (int i = 2; i + 1 < x.rank(); ++i) mid *= x.dim(i);
    std::vector<int64_t> od;
    od.push_back(l);
    for (int i = 2; i < x.rank(); ++i) od.push_back(x.dim(i));
    Ten<S> out(od);
    for (int t = 0; t < 4; ++t) {
        const auto& p = paths[size_t(t)];
        for (int64_t s = 0; s < l; ++s) {
            const S* src = x.data.data() + (p[size_t(s)] * mid) * 4 + t;
            S* dst = out.data.data() + (s * mid) * 4 + t;
            for (int64_t m = 0; m < mid; ++m) dst[m * 4] = src[m * 4];
        }
    }
    return out;
}
}  // namespace detail

// EQ-cross-scan: slot t of the output is component t of x read along the
// G_t-rotated base path. Accepts any (H, W, ..., T) tensor with T = 4; middle
// axes ride along (used for flattening generated SSM parameters too).
template <typename S>
ScanSequence<S> eq_cross_scan(const Ten<S>& x) {
    if (x.rank() < 3 || x.dims.back() != 4)
        throw ShapeError("eq_cross_scan expects (H, W, ..., T=4), got " + dims_str(x.dims));
    const ScanPlan& plan = scan_plan(x.dim(0), x.dim(1));
    ScanSequence<S> out;
    out.origin_h = x.dim(0);
    out.origin_w = x.dim(1);
    out.tensor = detail::gather_paths(x, plan.fwd);
    return out;
}

// EQ-cross-merge: exact inverse of eq_cross_scan.
template <typename S>
Ten<S> eq_cross_merge(const ScanSequence<S>& s) {
    const Ten<S>& x = s.tensor;
    if (x.rank() < 2 || x.dims.back() != 4)
        throw ShapeError("eq_cross_merge expects (L, ..., T=4), got " + dims_str(x.dims));
    if (x.dim(0) != s.origin_h * s.origin_w)
        throw ShapeError("sequence length " + std::to_string(x.dim(0)) + " does not match origin dims " +
                         std::to_string(s.origin_h) + "x" + std::to_string(s.origin_w));
    const ScanPlan& plan = scan_plan(s.origin_h, s.origin_w);
    const int64_t l = x.dim(0);
    int64_t mid = 1;
    for (int i = 1; i + 1 < x.rank(); ++i) mid *= x.dim(i);
    std::vector<int64_t> od;
    od.push_back(s.origin_h);
    od.push_back(s.origin_w);
    for (int i = 1; i < x.rank(); ++i) od.push_back(x.dim(i));
    Ten<S> out(od);
    for (int t = 0; t < 4; ++t) {
        const auto& p = plan.fwd[size_t(t)];
        for (int64_t q = 0; q < l; ++q) {
            const S* src = x.data.data() + (q * mid) * 4 + t;
            S* dst = out.data.data() + (p[size_t(q)] * mid) * 4 + t;
            for (int64_t m = 0; m < mid; ++m) dst[m * 4] = src[m * 4];
        }
    }
    return out;
}

// VMamba's four-direction cross-scan (non-equivariant control). Every
// direction scans the full map; output gains a trailing direction axis of 4.
template <typename S>
ScanSequence<S> cross_scan_baseline(const Ten<S>& x) {
    if (x.rank() < 2) throw ShapeError("cross_scan_baseline expects (H, W, ...), got " + dims_str(x.dims));
    const ScanPlan& plan = scan_plan(x.dim(0), x.dim(1));
    const int64_t l = x.dim(0) * x.dim(1);
    int64_t mid = 1;
    for (int i = 2; i < x.rank(); ++i) mid *= x.dim(i);
    std::vector<int64_t> od;
    od.push_back(l);
    for (int i = 2; i < x.rank(); ++i) od.push_back(x.dim(i));
    od.push_back(4);
    ScanSequence<S> out;
    out.origin_h = x.dim(0);
    out.origin_w = x.dim(1);
    out.tensor = Ten<S>(od);
    for (int d = 0; d < 4; ++d) {
        const auto& p = plan.base_fwd[size_t(d)];
        for (int64_t s = 0; s < l; ++s) {
            const S* src = x.data.data() + p[size_t(s)] * mid;
            S* dst = out.tensor.data.data() + (s * mid) * 4 + d;
            for (int64_t m = 0; m < mid; ++m) dst[m * 4] = src[m];
        }
    }
    return out;
}

// Inverse of cross_scan_baseline in the VMamba sense: each direction is
// unscanned back to the grid and the four maps are summed.
template <typename S>
Ten<S> cross_merge_baseline(const ScanSequence<S>& s) {
    const Ten<S>& x = s.tensor;
    if (x.rank() < 2 || x.dims.back() != 4)
        throw ShapeError("cross_merge_baseline expects (L, ..., 4), got " + dims_str(x.dims));
    if (x.dim(0) != s.origin_h * s.origin_w) throw ShapeError("sequence length does not match origin dims");
    const ScanPlan& plan = scan_plan(s.origin_h, s.origin_w);
    const int64_t l = x.dim(0);
    int64_t mid = 1;
    for (int i = 1; i + 1 < x.rank(); ++i) mid *= x.dim(i);
    std::vector<int64_t> od;
    od.push_back(s.origin_h);
    od.push_back(s.origin_w);
    for (int i = 1; i + 1 < x.rank(); ++i) od.push_back(x.dim(i));
    Ten<S> out(od);
    for (int d = 0; d < 4; ++d) {
        const auto& p = plan.base_fwd[size_t(d)];
        for (int64_t q = 0; q < l; ++q) {
            const S* src = x.data.data() + (q * mid) * 4 + d;
            S* dst = out.data.data() + p[size_t(q)] * mid;
            for (int64_t m = 0; m < mid; ++m) dst[m] += src[m * 4];
        }
    }
    return out;
}

}  // namespace eqscan
