#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "eqscan/common.hpp"

// Compute cores. kern:: holds the OpenMP-parallel kernels used by the layers;
// ref:: holds plain serial implementations kept as oracles for the tests and
// the benchmark target. Dot products and statistics accumulate in double so
// f32 results stay stable when rotations reorder reductions.

namespace eqscan::kern {

using i64 = int64_t;

inline i64 conv_out_dim(i64 n, i64 k, i64 stride, i64 pad) {
    return (n + 2 * pad - k) / stride + 1;
}

// Cross-correlation. in (H,W,Ci) row-major, ker (K,K,Ci,Co), out (Ho,Wo,Co)
// written with an element stride of out_cstride between channels (so a group
// component can be written in place inside an (Ho,Wo,Co,T) map).
template <typename S>
void conv2d(const S* in, i64 h, i64 w, i64 ci, const S* ker, i64 k, i64 co, i64 stride, i64 pad,
            S* out, i64 ho, i64 wo, i64 out_cstride = 1) {
#pragma omp parallel for schedule(static)
    for (i64 oi = 0; oi < ho; ++oi) {
        for (i64 oj = 0; oj < wo; ++oj) {
            for (i64 c = 0; c < co; ++c) {
                double acc = 0.0;
                for (i64 a = 0; a < k; ++a) {
                    const i64 p = oi * stride + a - pad;
                    if (p < 0 || p >= h) continue;
                    for (i64 b = 0; b < k; ++b) {
                        const i64 q = oj * stride + b - pad;
                        if (q < 0 || q >= w) continue;
                        const S* inp = in + (p * w + q) * ci;
                        const S* kp = ker + ((a * k + b) * ci) * co + c;
                        for (i64 e = 0; e < ci; ++e) acc += double(inp[e]) * double(kp[e * co]);
                    }
                }
                out[((oi * wo + oj) * co + c) * out_cstride] = S(acc);
            }
        }
    }
}

// Depthwise variant: ker (K,K,C); channel c of the input only feeds channel c.
template <typename S>
void conv2d_dw(const S* in, i64 h, i64 w, i64 c, const S* ker, i64 k, i64 stride, i64 pad, S* out,
               i64 ho, i64 wo) {
#pragma omp parallel for schedule(static)
    for (i64 oi = 0; oi < ho; ++oi) {
        for (i64 oj = 0; oj < wo; ++oj) {
            for (i64 e = 0; e < c; ++e) {
                double acc = 0.0;
                for (i64 a = 0; a < k; ++a) {
                    const i64 p = oi * stride + a - pad;
                    if (p < 0 || p >= h) continue;
                    for (i64 b = 0; b < k; ++b) {
                        const i64 q = oj * stride + b - pad;
                        if (q < 0 || q >= w) continue;
                        acc += double(in[(p * w + q) * c + e]) * double(ker[(a * k + b) * c + e]);
                    }
                }
                out[(oi * wo + oj) * c + e] = S(acc);
            }
        }
    }
}

// Gradient of conv2d w.r.t. its input; gathers so rows parallelize racelessly.
// gout may be strided like the forward output.
template <typename S>
void conv2d_grad_in(const S* gout, i64 ho, i64 wo, i64 co, i64 gout_cstride, const S* ker, i64 k,
                    i64 ci, i64 stride, i64 pad, S* gin, i64 h, i64 w) {
#pragma omp parallel for schedule(static)
    for (i64 p = 0; p < h; ++p) {
        for (i64 q = 0; q < w; ++q) {
            for (i64 e = 0; e < ci; ++e) {
                double acc = 0.0;
                for (i64 a = 0; a < k; ++a) {
                    const i64 num_i = p + pad - a;
                    if (num_i < 0 || num_i % stride != 0) continue;
                    const i64 oi = num_i / stride;
                    if (oi >= ho) continue;
                    for (i64 b = 0; b < k; ++b) {
                        const i64 num_j = q + pad - b;
                        if (num_j < 0 || num_j % stride != 0) continue;
                        const i64 oj = num_j / stride;
                        if (oj >= wo) continue;
                        const S* gp = gout + ((oi * wo + oj) * co) * gout_cstride;
                        const S* kp = ker + ((a * k + b) * ci + e) * co;
                        for (i64 c = 0; c < co; ++c) acc += double(gp[c * gout_cstride]) * double(kp[c]);
                    }
                }
                gin[(p * w + q) * ci + e] += S(acc);
            }
        }
    }
}

template <typename S>
void conv2d_grad_ker(const S* gout, i64 ho, i64 wo, i64 co, i64 gout_cstride, const S* in, i64 h,
                     i64 w, i64 ci, i64 k, i64 stride, i64 pad, S* gker) {
#pragma omp parallel for collapse(2) schedule(static)
    for (i64 a = 0; a < k; ++a) {
        for (i64 b = 0; b < k; ++b) {
            for (i64 e = 0; e < ci; ++e) {
                for (i64 c = 0; c < co; ++c) {
                    double acc = 0.0;
                    for (i64 oi = 0; oi < ho; ++oi) {
                        const i64 p = oi * stride + a - pad;
                        if (p < 0 || p >= h) continue;
                        for (i64 oj = 0; oj < wo; ++oj) {
                            const i64 q = oj * stride + b - pad;
                            if (q < 0 || q >= w) continue;
                            acc += double(gout[((oi * wo + oj) * co + c) * gout_cstride]) *
                                   double(in[(p * w + q) * ci + e]);
                        }
                    }
                    gker[((a * k + b) * ci + e) * co + c] += S(acc);
                }
            }
        }
    }
}

template <typename S>
void conv2d_dw_grad_in(const S* gout, i64 ho, i64 wo, const S* ker, i64 k, i64 c, i64 stride,
                       i64 pad, S* gin, i64 h, i64 w) {
#pragma omp parallel for schedule(static)
    for (i64 p = 0; p < h; ++p) {
        for (i64 q = 0; q < w; ++q) {
            for (i64 e = 0; e < c; ++e) {
                double acc = 0.0;
                for (i64 a = 0; a < k; ++a) {
                    const i64 num_i = p + pad - a;
                    if (num_i < 0 || num_i % stride != 0) continue;
                    const i64 oi = num_i / stride;
                    if (oi >= ho) continue;
                    for (i64 b = 0; b < k; ++b) {
                        const i64 num_j = q + pad - b;
                        if (num_j < 0 || num_j % stride != 0) continue;
                        const i64 oj = num_j / stride;
                        if (oj >= wo) continue;
                        acc += double(gout[(oi * wo + oj) * c + e]) * double(ker[(a * k + b) * c + e]);
                    }
                }
                gin[(p * w + q) * c + e] += S(acc);
            }
        }
    }
}

template <typename S>
void conv2d_dw_grad_ker(const S* gout, i64 ho, i64 wo, const S* in, i64 h, i64 w, i64 c, i64 k,
                        i64 stride, i64 pad, S* gker) {
#pragma omp parallel for collapse(2) schedule(static)
    for (i64 a = 0; a < k; ++a) {
        for (i64 b = 0; b < k; ++b) {
            for (i64 e = 0; e < c; ++e) {
                double acc = 0.0;
                for (i64 oi = 0; oi < ho; ++oi) {
                    const i64 p = oi * stride + a - pad;
                    if (p < 0 || p >= h) continue;
                    for (i64 oj = 0; oj < wo; ++oj) {
                        const i64 q = oj * stride + b - pad;
                        if (q < 0 || q >= w) continue;
                        acc += double(gout[(oi * wo + oj) * c + e]) * double(in[(p * w + q) * c + e]);
                    }
                }
                gker[(a * k + b) * c + e] += S(acc);
            }
        }
    }
}

// Depthwise group convolution for one output slot t. in (H,W,C,4), kernel
// slice (K,K,4,C) (the orbit for slot t), out written strided into slot t of
// an (Ho,Wo,C,4) map. Diagonal in channels, dense over the input group axis.
template <typename S>
void conv2d_dwg(const S* in, i64 h, i64 w, i64 c, const S* ker, i64 k, i64 stride, i64 pad, S* out,
                i64 ho, i64 wo, i64 t) {
#pragma omp parallel for schedule(static)
    for (i64 oi = 0; oi < ho; ++oi) {
        for (i64 oj = 0; oj < wo; ++oj) {
            for (i64 e = 0; e < c; ++e) {
                double acc = 0.0;
                for (i64 a = 0; a < k; ++a) {
                    const i64 p = oi * stride + a - pad;
                    if (p < 0 || p >= h) continue;
                    for (i64 b = 0; b < k; ++b) {
                        const i64 q = oj * stride + b - pad;
                        if (q < 0 || q >= w) continue;
                        const S* inp = in + ((p * w + q) * c + e) * 4;
                        const S* kp = ker + ((a * k + b) * 4) * c + e;
                        for (i64 g = 0; g < 4; ++g) acc += double(inp[g]) * double(kp[g * c]);
                    }
                }
                out[((oi * wo + oj) * c + e) * 4 + t] = S(acc);
            }
        }
    }
}

template <typename S>
void conv2d_dwg_grad_in(const S* gout, i64 ho, i64 wo, const S* ker, i64 k, i64 c, i64 stride,
                        i64 pad, S* gin, i64 h, i64 w, i64 t) {
#pragma omp parallel for schedule(static)
    for (i64 p = 0; p < h; ++p) {
        for (i64 q = 0; q < w; ++q) {
            for (i64 e = 0; e < c; ++e) {
                for (i64 g = 0; g < 4; ++g) {
                    double acc = 0.0;
                    for (i64 a = 0; a < k; ++a) {
                        const i64 num_i = p + pad - a;
                        if (num_i < 0 || num_i % stride != 0) continue;
                        const i64 oi = num_i / stride;
                        if (oi >= ho) continue;
                        for (i64 b = 0; b < k; ++b) {
                            const i64 num_j = q + pad - b;
                            if (num_j < 0 || num_j % stride != 0) continue;
                            const i64 oj = num_j / stride;
                            if (oj >= wo) continue;
                            acc += double(gout[((oi * wo + oj) * c + e) * 4 + t]) *
                                   double(ker[((a * k + b) * 4 + g) * c + e]);
                        }
                    }
                    gin[((p * w + q) * c + e) * 4 + g] += S(acc);
                }
            }
        }
    }
}

template <typename S>
void conv2d_dwg_grad_ker(const S* gout, i64 ho, i64 wo, const S* in, i64 h, i64 w, i64 c, i64 k,
                         i64 stride, i64 pad, S* gker, i64 t) {
#pragma omp parallel for collapse(2) schedule(static)
    for (i64 a = 0; a < k; ++a) {
        for (i64 b = 0; b < k; ++b) {
            for (i64 g = 0; g < 4; ++g) {
                for (i64 e = 0; e < c; ++e) {
                    double acc = 0.0;
                    for (i64 oi = 0; oi < ho; ++oi) {
                        const i64 p = oi * stride + a - pad;
                        if (p < 0 || p >= h) continue;
                        for (i64 oj = 0; oj < wo; ++oj) {
                            const i64 q = oj * stride + b - pad;
                            if (q < 0 || q >= w) continue;
                            acc += double(gout[((oi * wo + oj) * c + e) * 4 + t]) *
                                   double(in[((p * w + q) * c + e) * 4 + g]);
                        }
                    }
                    gker[((a * k + b) * 4 + g) * c + e] += S(acc);
                }
            }
        }
    }
}

// Per-channel normalization with statistics over everything except the
// channel axis. The tensor is addressed as (pre, C, post); statistics are
// accumulated in double so reordered reductions stay stable in f32.
template <typename S>
void norm_channel(const S* x, i64 pre, i64 c, i64 post, const S* gamma, const S* beta, double eps,
                  S* y, double* mean_out, double* inv_out) {
#pragma omp parallel for schedule(static)
    for (i64 e = 0; e < c; ++e) {
        const i64 m = pre * post;
        double sum = 0.0, sq = 0.0;
        for (i64 u = 0; u < pre; ++u) {
            const S* xp = x + (u * c + e) * post;
            for (i64 v = 0; v < post; ++v) {
                const double val = double(xp[v]);
                sum += val;
                sq += val * val;
            }
        }
        const double mean = sum / double(m);
        const double var = sq / double(m) - mean * mean;
        const double inv = 1.0 / std::sqrt(var > 0 ? var + eps : eps);
        if (mean_out) mean_out[e] = mean;
        if (inv_out) inv_out[e] = inv;
        const double g = double(gamma[e]), bta = double(beta[e]);
        for (i64 u = 0; u < pre; ++u) {
            const S* xp = x + (u * c + e) * post;
            S* yp = y + (u * c + e) * post;
            for (i64 v = 0; v < post; ++v) yp[v] = S((double(xp[v]) - mean) * inv * g + bta);
        }
    }
}

template <typename S>
void norm_channel_bwd(const S* x, i64 pre, i64 c, i64 post, const S* gamma, const double* mean,
                      const double* inv, const S* gy, S* gx, S* ggamma, S* gbeta) {
#pragma omp parallel for schedule(static)
    for (i64 e = 0; e < c; ++e) {
        const i64 m = pre * post;
        double gsum = 0.0, gxhat = 0.0;
        for (i64 u = 0; u < pre; ++u) {
            const S* xp = x + (u * c + e) * post;
            const S* gp = gy + (u * c + e) * post;
            for (i64 v = 0; v < post; ++v) {
                const double xhat = (double(xp[v]) - mean[e]) * inv[e];
                gsum += double(gp[v]);
                gxhat += double(gp[v]) * xhat;
            }
        }
        ggamma[e] += S(gxhat);
        gbeta[e] += S(gsum);
        const double gmean = gsum / double(m);
        const double gxhat_mean = gxhat / double(m);
        const double scale = double(gamma[e]) * inv[e];
        for (i64 u = 0; u < pre; ++u) {
            const S* xp = x + (u * c + e) * post;
            const S* gp = gy + (u * c + e) * post;
            S* op = gx + (u * c + e) * post;
            for (i64 v = 0; v < post; ++v) {
                const double xhat = (double(xp[v]) - mean[e]) * inv[e];
                op[v] += S(scale * (double(gp[v]) - gmean - xhat * gxhat_mean));
            }
        }
    }
}

// EQ-Linear contraction. x (P,C1,4) -> y (P,C2,4), weight (C1,Tw,C2) with
// Tw = 4 (group-coupled, cyclically shifted per output slot) or Tw = 1
// (one shared map applied to every slot independently).
template <typename S>
void eq_linear(const S* x, i64 p, i64 c1, const S* wgt, i64 tw, i64 c2, const S* bias, S* y) {
#pragma omp parallel for schedule(static)
    for (i64 u = 0; u < p; ++u) {
        const S* xp = x + u * c1 * 4;
        S* yp = y + u * c2 * 4;
        for (i64 o = 0; o < c2; ++o) {
            for (i64 t = 0; t < 4; ++t) {
                double acc = bias ? double(bias[o]) : 0.0;
                if (tw == 4) {
                    for (i64 e = 0; e < c1; ++e)
                        for (i64 g = 0; g < 4; ++g)
                            acc += double(xp[e * 4 + g]) * double(wgt[(e * 4 + ((g - t) & 3)) * c2 + o]);
                } else {
                    for (i64 e = 0; e < c1; ++e) acc += double(xp[e * 4 + t]) * double(wgt[e * c2 + o]);
                }
                yp[o * 4 + t] = S(acc);
            }
        }
    }
}

template <typename S>
void eq_linear_grad_x(const S* gy, i64 p, i64 c2, const S* wgt, i64 tw, i64 c1, S* gx) {
#pragma omp parallel for schedule(static)
    for (i64 u = 0; u < p; ++u) {
        const S* gp = gy + u * c2 * 4;
        S* xp = gx + u * c1 * 4;
        for (i64 e = 0; e < c1; ++e) {
            for (i64 g = 0; g < 4; ++g) {
                double acc = 0.0;
                if (tw == 4) {
                    for (i64 o = 0; o < c2; ++o)
                        for (i64 t = 0; t < 4; ++t)
                            acc += double(gp[o * 4 + t]) * double(wgt[(e * 4 + ((g - t) & 3)) * c2 + o]);
                } else {
                    for (i64 o = 0; o < c2; ++o) acc += double(gp[o * 4 + g]) * double(wgt[e * c2 + o]);
                }
                xp[e * 4 + g] += S(acc);
            }
        }
    }
}

template <typename S>
void eq_linear_grad_w(const S* gy, i64 p, i64 c2, const S* x, i64 c1, i64 tw, S* gw, S* gb) {
#pragma omp parallel for schedule(static)
    for (i64 e = 0; e < c1; ++e) {
        for (i64 s = 0; s < tw; ++s) {
            for (i64 o = 0; o < c2; ++o) {
                double acc = 0.0;
                for (i64 u = 0; u < p; ++u) {
                    const S* xp = x + u * c1 * 4;
                    const S* gp = gy + u * c2 * 4;
                    if (tw == 4) {
                        for (i64 t = 0; t < 4; ++t)
                            acc += double(xp[e * 4 + ((s + t) & 3)]) * double(gp[o * 4 + t]);
                    } else {
                        for (i64 t = 0; t < 4; ++t) acc += double(xp[e * 4 + t]) * double(gp[o * 4 + t]);
                    }
                }
                gw[(e * tw + s) * c2 + o] += S(acc);
            }
        }
    }
    if (gb) {
        for (i64 o = 0; o < c2; ++o) {
            double acc = 0.0;
            for (i64 u = 0; u < p; ++u)
                for (i64 t = 0; t < 4; ++t) acc += double(gy[(u * c2 + o) * 4 + t]);
            gb[o] += S(acc);
        }
    }
}

// Plain dense map over the trailing channel axis. x (P,C1) -> y (P,C2).
template <typename S>
void dense(const S* x, i64 p, i64 c1, const S* wgt, i64 c2, const S* bias, S* y) {
#pragma omp parallel for schedule(static)
    for (i64 u = 0; u < p; ++u) {
        const S* xp = x + u * c1;
        S* yp = y + u * c2;
        for (i64 o = 0; o < c2; ++o) {
            double acc = bias ? double(bias[o]) : 0.0;
            for (i64 e = 0; e < c1; ++e) acc += double(xp[e]) * double(wgt[e * c2 + o]);
            yp[o] = S(acc);
        }
    }
}

template <typename S>
void dense_grad_x(const S* gy, i64 p, i64 c2, const S* wgt, i64 c1, S* gx) {
#pragma omp parallel for schedule(static)
    for (i64 u = 0; u < p; ++u) {
        const S* gp = gy + u * c2;
        S* xp = gx + u * c1;
        for (i64 e = 0; e < c1; ++e) {
            double acc = 0.0;
            for (i64 o = 0; o < c2; ++o) acc += double(gp[o]) * double(wgt[e * c2 + o]);
            xp[e] += S(acc);
        }
    }
}

template <typename S>
void dense_grad_w(const S* gy, i64 p, i64 c2, const S* x, i64 c1, S* gw, S* gb) {
#pragma omp parallel for schedule(static)
    for (i64 e = 0; e < c1; ++e) {
        for (i64 o = 0; o < c2; ++o) {
            double acc = 0.0;
            for (i64 u = 0; u < p; ++u) acc += double(x[u * c1 + e]) * double(gy[u * c2 + o]);
            gw[e * c2 + o] += S(acc);
        }
    }
    if (gb) {
        for (i64 o = 0; o < c2; ++o) {
            double acc = 0.0;
            for (i64 u = 0; u < p; ++u) acc += double(gy[u * c2 + o]);
            gb[o] += S(acc);
        }
    }
}

// Selective scan over SL independent slots:
//   h_i = A_i ⊙ h_{i-1} + B_i x_i,   y_i = C_i · h_i + D x_i
// x (L,C,SL), A (L,C,N,SL), B and Cc (L,N,SL), D (C) or (C,SL), y like x.
// hbuf, when given, stores every hidden state (L,C,N,SL) for the backward
// pass. Threads own channel chunks and walk the time axis together, so each
// step reads its (chunk, N, SL) block contiguously; the per-element operation
// order matches the naive reference exactly.
template <typename S>
void sscan(const S* x, const S* A, const S* B, const S* Cc, const S* D, bool d_per_slot, i64 L,
           i64 C, i64 N, i64 SL, S* y, S* hbuf) {
#pragma omp parallel
    {
        i64 nchunks = 1, chunk = 0;
#ifdef _OPENMP
        nchunks = omp_get_num_threads();
        chunk = omp_get_thread_num();
#endif
        const i64 per = (C + nchunks - 1) / nchunks;
        const i64 c0 = std::min(C, chunk * per);
        const i64 c1 = std::min(C, c0 + per);
        if (c0 < c1) {
            std::vector<S> h(static_cast<size_t>((c1 - c0) * N * SL), S(0));
            std::vector<S> acc(static_cast<size_t>(SL));
            for (i64 l = 0; l < L; ++l) {
                const S* b = B + (l * N) * SL;
                const S* cc = Cc + (l * N) * SL;
                for (i64 c = c0; c < c1; ++c) {
                    const S* xv = x + (l * C + c) * SL;
                    const S* a = A + ((l * C + c) * N) * SL;
                    S* hc = h.data() + (c - c0) * N * SL;
                    std::fill(acc.begin(), acc.end(), S(0));
                    for (i64 n = 0; n < N; ++n) {
                        for (i64 sl = 0; sl < SL; ++sl) {
                            const S hn = a[n * SL + sl] * hc[n * SL + sl] + b[n * SL + sl] * xv[sl];
                            hc[n * SL + sl] = hn;
                            acc[size_t(sl)] += cc[n * SL + sl] * hn;
                        }
                    }
                    S* yp = y + (l * C + c) * SL;
                    for (i64 sl = 0; sl < SL; ++sl)
                        yp[sl] = acc[size_t(sl)] + (d_per_slot ? D[c * SL + sl] : D[c]) * xv[sl];
                    if (hbuf) {
                        S* hp = hbuf + ((l * C + c) * N) * SL;
                        std::copy(hc, hc + N * SL, hp);
                    }
                }
            }
        }
    }
}

// Reverse-time adjoint of sscan. gD is always accumulated per (c, slot) into
// gD_slots (C,SL); the caller folds slots together when D is shared.
template <typename S>
void sscan_bwd(const S* x, const S* A, const S* B, const S* Cc, const S* D, bool d_per_slot,
               const S* hbuf, const S* gy, i64 L, i64 C, i64 N, i64 SL, S* gx, S* gA, S* gB, S* gC,
               S* gD_slots) {
#pragma omp parallel for schedule(static)
    for (i64 sl = 0; sl < SL; ++sl) {
        std::vector<S> gh(static_cast<size_t>(N));
        for (i64 c = 0; c < C; ++c) {
            std::fill(gh.begin(), gh.end(), S(0));
            const S dval = d_per_slot ? D[c * SL + sl] : D[c];
            double gd_acc = 0.0;
            for (i64 l = L - 1; l >= 0; --l) {
                const S xv = x[(l * C + c) * SL + sl];
                const S gyv = gy[(l * C + c) * SL + sl];
                const S* a = A + ((l * C + c) * N) * SL + sl;
                const S* b = B + (l * N) * SL + sl;
                const S* cc = Cc + (l * N) * SL + sl;
                const S* h = hbuf + ((l * C + c) * N) * SL + sl;
                const S* hprev = (l > 0) ? hbuf + (((l - 1) * C + c) * N) * SL + sl : nullptr;
                gd_acc += double(gyv) * double(xv);
                S gx_acc = gyv * dval;
                for (i64 n = 0; n < N; ++n) {
                    // h_l^n feeds y_l (via C) and h_{l+1}^n (via A_{l+1});
                    // gh currently holds the latter contribution.
                    const S ghn = gh[size_t(n)] + gyv * cc[n * SL];
                    gC[(l * N + n) * SL + sl] += gyv * h[n * SL];
                    gA[((l * C + c) * N + n) * SL + sl] += ghn * (hprev ? hprev[n * SL] : S(0));
                    gB[(l * N + n) * SL + sl] += ghn * xv;
                    gx_acc += ghn * b[n * SL];
                    gh[size_t(n)] = ghn * a[n * SL];
                }
                gx[(l * C + c) * SL + sl] += gx_acc;
            }
            gD_slots[c * SL + sl] += S(gd_acc);
        }
    }
}

}  // namespace eqscan::kern

namespace eqscan::ref {

using i64 = int64_t;

// Serial references. Same contracts as kern::, written as plain loops.

template <typename S>
void conv2d(const S* in, i64 h, i64 w, i64 ci, const S* ker, i64 k, i64 co, i64 stride, i64 pad,
            S* out, i64 ho, i64 wo, i64 out_cstride = 1) {
    for (i64 oi = 0; oi < ho; ++oi)
        for (i64 oj = 0; oj < wo; ++oj)
            for (i64 c = 0; c < co; ++c) {
                double acc = 0.0;
                for (i64 a = 0; a < k; ++a)
                    for (i64 b = 0; b < k; ++b) {
                        const i64 p = oi * stride + a - pad;
                        const i64 q = oj * stride + b - pad;
                        if (p < 0 || p >= h || q < 0 || q >= w) continue;
                        for (i64 e = 0; e < ci; ++e)
                            acc += double(in[(p * w + q) * ci + e]) * double(ker[((a * k + b) * ci + e) * co + c]);
                    }
                out[((oi * wo + oj) * co + c) * out_cstride] = S(acc);
            }
}

template <typename S>
void eq_linear(const S* x, i64 p, i64 c1, const S* wgt, i64 tw, i64 c2, const S* bias, S* y) {
    for (i64 u = 0; u < p; ++u)
        for (i64 o = 0; o < c2; ++o)
            for (i64 t = 0; t < 4; ++t) {
                double acc = bias ? double(bias[o]) : 0.0;
                for (i64 e = 0; e < c1; ++e) {
                    if (tw == 4) {
                        for (i64 g = 0; g < 4; ++g)
                            acc += double(x[(u * c1 + e) * 4 + g]) * double(wgt[(e * 4 + ((g - t) & 3)) * c2 + o]);
                    } else {
                        acc += double(x[(u * c1 + e) * 4 + t]) * double(wgt[e * c2 + o]);
                    }
                }
                y[(u * c2 + o) * 4 + t] = S(acc);
            }
}

template <typename S>
void dense(const S* x, i64 p, i64 c1, const S* wgt, i64 c2, const S* bias, S* y) {
    for (i64 u = 0; u < p; ++u)
        for (i64 o = 0; o < c2; ++o) {
            double acc = bias ? double(bias[o]) : 0.0;
            for (i64 e = 0; e < c1; ++e) acc += double(x[u * c1 + e]) * double(wgt[e * c2 + o]);
            y[u * c2 + o] = S(acc);
        }
}

// The naive per-step loop of the recurrence, the oracle any fused or
// parallel scan implementation must match.
template <typename S>
void sscan_naive(const S* x, const S* A, const S* B, const S* Cc, const S* D, bool d_per_slot,
                 i64 L, i64 C, i64 N, i64 SL, S* y) {
    std::vector<S> h(size_t(C * N * SL), S(0));
    for (i64 l = 0; l < L; ++l)
        for (i64 c = 0; c < C; ++c)
            for (i64 sl = 0; sl < SL; ++sl) {
                const S xv = x[(l * C + c) * SL + sl];
                S acc = S(0);
                for (i64 n = 0; n < N; ++n) {
                    S& hn = h[size_t((c * N + n) * SL + sl)];
                    hn = A[((l * C + c) * N + n) * SL + sl] * hn + B[(l * N + n) * SL + sl] * xv;
                    acc += Cc[(l * N + n) * SL + sl] * hn;
                }
                y[(l * C + c) * SL + sl] = acc + (d_per_slot ? D[c * SL + sl] : D[c]) * xv;
            }
}

}  // namespace eqscan::ref
