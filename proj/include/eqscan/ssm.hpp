#pragma once

#include <cmath>

#include "eqscan/group.hpp"
#include "eqscan/kernels.hpp"
#include "eqscan/scan.hpp"

namespace eqscan {

// Per-position recurrence parameters, one group slot per trailing index.
template <typename S>
struct SsmParams {
    Ten<S> A_seq;  // (L, C, N, T), entries in (0, 1]
    Ten<S> B_seq;  // (L, N, T)
    Ten<S> C_seq;  // (L, N, T)
    Ten<S> D;      // (C) shared skip coefficients, or (1) in scalar mode
    Ten<S> delta;  // (L, C, T), strictly positive step sizes
};

enum class SsmMode { group, independent };

inline const char* ssm_mode_name(SsmMode m) { return m == SsmMode::group ? "group" : "independent"; }

// Weights of one group Mamba block. The three maps generate Δ, B and C from
// the feature map; A derives from Δ and a_log. In independent mode the maps
// carry a group extent of 1 (one shared map applied per slot, no inter-group
// coupling); parameters never hold per-slot copies either way.
template <typename S>
struct GroupMambaWeights {
    EqLinearWeights<S> w_delta;  // C1 -> C1
    EqLinearWeights<S> w_B;      // C1 -> N
    EqLinearWeights<S> w_C;      // C1 -> N
    Ten<S> a_log;                // (C1, N)
    Ten<S> D;                    // (C1), or (1) when scalar_d
    bool scalar_d = false;

    SsmMode mode() const { return w_delta.W.dim(1) == 4 ? SsmMode::group : SsmMode::independent; }
};

template <typename S>
inline S softplus(S v) {
    const double x = double(v);
    return S(x > 30.0 ? x : std::log1p(std::exp(x)));
}

namespace detail {

template <typename S>
void validate_scan_inputs(const Ten<S>& x, const Ten<S>& A) {
    for (S v : x.data)
        if (!std::isfinite(double(v))) throw DomainError("selective_scan: non-finite input value");
    for (S v : A.data)
        if (!(double(v) > 0.0 && double(v) <= 1.0))
            throw DomainError("selective_scan: transition entry " + std::to_string(double(v)) +
                              " outside (0, 1]");
}

}  // namespace detail

// Single-slot recurrence (Eq.-1 shape): x (L,C), A (L,C,N), B and Cc (L,N),
// D (C); h_0 = 0. y_i = C_i · h_i + D x_i with h_i = A_i ⊙ h_{i-1} + B_i x_i.
template <typename S>
Ten<S> selective_scan(const Ten<S>& x, const Ten<S>& A, const Ten<S>& B, const Ten<S>& Cc,
                      const Ten<S>& D) {
    if (x.rank() != 2) throw ShapeError("selective_scan expects x (L,C)");
    const int64_t l = x.dim(0), c = x.dim(1);
    if (A.rank() != 3 || A.dim(0) != l || A.dim(1) != c) throw ShapeError("selective_scan: A must be (L,C,N)");
    const int64_t n = A.dim(2);
    if (B.rank() != 2 || B.dim(0) != l || B.dim(1) != n) throw ShapeError("selective_scan: B must be (L,N)");
    if (Cc.rank() != 2 || Cc.dim(0) != l || Cc.dim(1) != n) throw ShapeError("selective_scan: C must be (L,N)");
    if (D.numel() != c && D.numel() != 1) throw ShapeError("selective_scan: D must be (C) or scalar");
    detail::validate_scan_inputs(x, A);
    Ten<S> y({l, c});
    Ten<S> d_full({c});
    for (int64_t e = 0; e < c; ++e) d_full.data[size_t(e)] = D.data[D.numel() == 1 ? 0 : size_t(e)];
    kern::sscan(x.data.data(), A.data.data(), B.data.data(), Cc.data.data(), d_full.data.data(),
                false, l, c, n, 1, y.data.data(), static_cast<S*>(nullptr));
    return y;
}

// All four slots at once: x (L,C,T) with slot-matched parameters.
template <typename S>
Ten<S> selective_scan_slots(const Ten<S>& x, const SsmParams<S>& p) {
    if (x.rank() != 3 || x.dims.back() != 4) throw ShapeError("selective_scan_slots expects (L,C,4)");
    const int64_t l = x.dim(0), c = x.dim(1), n = p.A_seq.dim(2);
    detail::validate_scan_inputs(x, p.A_seq);
    Ten<S> y(x.dims);
    Ten<S> d_full({c});
    for (int64_t e = 0; e < c; ++e) d_full.data[size_t(e)] = p.D.data[p.D.numel() == 1 ? 0 : size_t(e)];
    kern::sscan(x.data.data(), p.A_seq.data.data(), p.B_seq.data.data(), p.C_seq.data.data(),
                d_full.data.data(), false, l, c, n, 4, y.data.data(), static_cast<S*>(nullptr));
    return y;
}

// Input-dependent parameter generation: B, C and Δ come from the (eq-)linear
// maps on the 2D feature map, are flattened along the same per-slot scan
// paths as the features, and A = exp(-Δ ⊙ exp(a_log)) lands in (0, 1].
template <typename S>
SsmParams<S> generate_params(const Ten<S>& x, const GroupMambaWeights<S>& w) {
    if (x.rank() != 4 || x.dim(3) != 4) throw ShapeError("generate_params expects (H,W,C,4)");
    const int64_t c = x.dim(2), n = w.a_log.dim(1);
    if (w.a_log.dim(0) != c) throw ShapeError("generate_params: a_log must be (C,N)");

    SsmParams<S> p;
    p.B_seq = eq_cross_scan(eq_linear(x, w.w_B)).tensor;
    p.C_seq = eq_cross_scan(eq_linear(x, w.w_C)).tensor;
    Ten<S> delta2d = eq_linear(x, w.w_delta);
    for (auto& v : delta2d.data) v = softplus(v);
    p.delta = eq_cross_scan(delta2d).tensor;

    const int64_t l = p.delta.dim(0);
    p.A_seq = Ten<S>({l, c, n, 4});
    for (int64_t i = 0; i < l; ++i)
        for (int64_t e = 0; e < c; ++e)
            for (int64_t j = 0; j < n; ++j) {
                const double mag = std::exp(double(w.a_log(e, j)));
                for (int64_t t = 0; t < 4; ++t)
                    p.A_seq(i, e, j, t) = S(std::exp(-double(p.delta(i, e, t)) * mag));
            }
    p.D = w.D;
    return p;
}

// The group Mamba block body: EQ-cross-scan, slot-matched recurrences, and
// EQ-cross-merge. Equivariant in both modes; only the group mode couples
// feature content across slots through its parameter maps.
template <typename S>
Ten<S> group_mamba(const Ten<S>& x, const GroupMambaWeights<S>& w) {
    if (x.rank() != 4 || x.dim(3) != 4) throw ShapeError("group_mamba expects (H,W,C,4)");
    SsmParams<S> p = generate_params(x, w);
    ScanSequence<S> seq = eq_cross_scan(x);
    ScanSequence<S> out{selective_scan_slots(seq.tensor, p), seq.origin_h, seq.origin_w};
    return eq_cross_merge(out);
}

}  // namespace eqscan
