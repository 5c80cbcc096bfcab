#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "eqscan/common.hpp"

namespace eqscan {

// Dense row-major tensor, last axis fastest. Group feature maps use the
// fixed axis order (H, W, C, T) with T = 4 the rotation-group axis.
template <typename S>
struct Ten {
    std::vector<int64_t> dims;
    std::vector<S> data;

    Ten() = default;

    explicit Ten(std::vector<int64_t> d, S fill = S(0)) : dims(std::move(d)) {
        check_dims(dims);
        data.assign(static_cast<size_t>(count(dims)), fill);
    }

    Ten(std::vector<int64_t> d, std::vector<S> values) : dims(std::move(d)), data(std::move(values)) {
        check_dims(dims);
        if (count(dims) != static_cast<int64_t>(data.size()))
            throw ShapeError("tensor data size does not match dims product");
    }

    static int64_t count(const std::vector<int64_t>& d) {
        int64_t n = 1;
        for (int64_t x : d) n *= x;
        return n;
    }

    static void check_dims(const std::vector<int64_t>& d) {
        if (d.empty()) throw ShapeError("tensor needs at least one axis");
        for (int64_t x : d)
            if (x < 1) throw ShapeError("axis length must be >= 1");
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int rank() const { return static_cast<int>(dims.size()); }
    int64_t dim(int i) const { return dims[static_cast<size_t>(i)]; }

    template <typename... I>
    S& operator()(I... idx) {
        return data[static_cast<size_t>(offset(idx...))];
    }
    template <typename... I>
    const S& operator()(I... idx) const {
        return data[static_cast<size_t>(offset(idx...))];
    }

    template <typename... I>
    int64_t offset(I... idx) const {
        const int64_t ix[] = {static_cast<int64_t>(idx)...};
        const size_t n = sizeof...(idx);
        int64_t off = 0;
        for (size_t i = 0; i < n; ++i) off = off * dims[i] + ix[i];
        return off;
    }

    bool same_shape(const Ten& o) const { return dims == o.dims; }

    template <typename T2>
    Ten<T2> cast() const {
        Ten<T2> out;
        out.dims = dims;
        out.data.resize(data.size());
        for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<T2>(data[i]);
        return out;
    }
};

inline std::string dims_str(const std::vector<int64_t>& d) {
    std::string s = "(";
    for (size_t i = 0; i < d.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(d[i]);
    }
    return s + ")";
}

namespace detail {
// One 90° CCW rotation of axes (0, 1); trailing axes ride along as blocks.
template <typename S>
Ten<S> rotate_ccw_once(const Ten<S>& x) {
    const int64_t h = x.dim(0), w = x.dim(1);
    int64_t block = 1;
    for (int i = 2; i < x.rank(); ++i) block *= x.dim(i);
    std::vector<int64_t> od = x.dims;
    od[0] = w;
    od[1] = h;
    Ten<S> out(od);
    // out(i, j) = in(j, w-1-i)
    for (int64_t i = 0; i < w; ++i) {
        for (int64_t j = 0; j < h; ++j) {
            const S* src = x.data.data() + (j * w + (w - 1 - i)) * block;
            S* dst = out.data.data() + (i * h + j) * block;
            std::copy(src, src + block, dst);
        }
    }
    return out;
}
}  // namespace detail

// π^R: t successive 90° counterclockwise rotations of the (H, W) axes.
template <typename S>
Ten<S> rotate_spatial(const Ten<S>& x, int t) {
    if (x.rank() < 2) throw ShapeError("rotate_spatial needs rank >= 2, got " + dims_str(x.dims));
    if (t < 0 || t > 3) throw ValueError("group index must be in {0,1,2,3}");
    Ten<S> out = x;
    for (int k = 0; k < t; ++k) out = detail::rotate_ccw_once(out);
    return out;
}

// π^S: cyclic shift along the group axis (last axis, length 4):
// out[..., g] = in[..., (g - t) mod 4].
template <typename S>
Ten<S> cycle_group(const Ten<S>& x, int t) {
    if (x.dims.back() != 4)
        throw ShapeError("cycle_group expects a trailing group axis of length 4, got " + dims_str(x.dims));
    if (t < 0 || t > 3) throw ValueError("group index must be in {0,1,2,3}");
    Ten<S> out(x.dims);
    const int64_t blocks = x.numel() / 4;
    for (int64_t b = 0; b < blocks; ++b) {
        const S* src = x.data.data() + b * 4;
        S* dst = out.data.data() + b * 4;
        for (int g = 0; g < 4; ++g) dst[g] = src[(g - t + 4) & 3];
    }
    return out;
}

// π^RS: joint spatial rotation + group cyclic shift (Fig. 3 style operator).
template <typename S>
Ten<S> rotate_and_cycle(const Ten<S>& x, int t) {
    return cycle_group(rotate_spatial(x, t), t);
}

// --- file format ------------------------------------------------------------
// magic "EQT1" | dtype u8 (0=f32,1=f64,2=i64) | ndim u8 | dims u32 LE | payload LE

struct TensorFile {
    Dtype dtype;
    std::vector<int64_t> dims;
    std::vector<unsigned char> payload;  // raw little-endian row-major
};

TensorFile read_tensor_file(const std::string& path);
void write_tensor_file(const std::string& path, const TensorFile& tf);

template <typename S>
Ten<S> read_tensor(const std::string& path) {
    TensorFile tf = read_tensor_file(path);
    if (tf.dtype != dtype_of<S>())
        throw FormatError(path + ": dtype is " + dtype_name(tf.dtype) + ", requested " +
                          dtype_name(dtype_of<S>()));
    Ten<S> out(tf.dims);
    std::copy(tf.payload.begin(), tf.payload.end(), reinterpret_cast<unsigned char*>(out.data.data()));
    return out;
}

template <typename S>
void write_tensor(const std::string& path, const Ten<S>& t) {
    TensorFile tf;
    tf.dtype = dtype_of<S>();
    tf.dims = t.dims;
    const auto* raw = reinterpret_cast<const unsigned char*>(t.data.data());
    tf.payload.assign(raw, raw + t.data.size() * sizeof(S));
    write_tensor_file(path, tf);
}

template <typename S>
Ten<S> random_uniform(Rng& rng, std::vector<int64_t> dims, double lo = -1.0, double hi = 1.0) {
    Ten<S> out(std::move(dims));
    for (auto& v : out.data) v = static_cast<S>(rng.uniform(lo, hi));
    return out;
}

}  // namespace eqscan
