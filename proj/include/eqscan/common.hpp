#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace eqscan {

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DomainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ValueError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Dtype : uint8_t { f32 = 0, f64 = 1, i64 = 2 };

inline const char* dtype_name(Dtype d) {
    switch (d) {
        case Dtype::f32: return "f32";
        case Dtype::f64: return "f64";
        case Dtype::i64: return "i64";
    }
    return "?";
}

inline Dtype dtype_from_name(const std::string& s) {
    if (s == "f32") return Dtype::f32;
    if (s == "f64") return Dtype::f64;
    if (s == "i64") return Dtype::i64;
    throw ValueError("unknown dtype name: " + s);
}

inline size_t dtype_size(Dtype d) {
    return d == Dtype::f32 ? 4 : 8;
}

template <typename S>
constexpr Dtype dtype_of();
template <>
constexpr Dtype dtype_of<float>() {
    return Dtype::f32;
}
template <>
constexpr Dtype dtype_of<double>() {
    return Dtype::f64;
}
template <>
constexpr Dtype dtype_of<int64_t>() {
    return Dtype::i64;
}

// Deterministic generator. std::distributions are implementation-defined, so
// draws are built from raw mt19937_64 bits to keep results stable across
// standard libraries.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t bits() { return gen_(); }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [lo, hi]
    int64_t integer(int64_t lo, int64_t hi) {
        const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        return lo + static_cast<int64_t>(gen_() % span);
    }

    Rng fork() { return Rng(gen_()); }

private:
    std::mt19937_64 gen_;
};

}  // namespace eqscan
