#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "eqscan/ssm.hpp"

using namespace eqscan;

namespace {

template <typename S>
double max_abs_diff(const Ten<S>& a, const Ten<S>& b) {
    REQUIRE(a.dims == b.dims);
    double m = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i)
        m = std::max(m, std::abs(double(a.data[i]) - double(b.data[i])));
    return m;
}

// Random weights with fresh values per call.
GroupMambaWeights<double> random_weights(Rng& rng, int64_t c, int64_t n, SsmMode mode) {
    const int64_t tw = mode == SsmMode::group ? 4 : 1;
    GroupMambaWeights<double> w;
    w.w_delta = make_eq_linear_weights(random_uniform<double>(rng, {c, tw, c}),
                                       random_uniform<double>(rng, {c}));
    w.w_B = make_eq_linear_weights(random_uniform<double>(rng, {c, tw, n}), random_uniform<double>(rng, {n}));
    w.w_C = make_eq_linear_weights(random_uniform<double>(rng, {c, tw, n}), random_uniform<double>(rng, {n}));
    w.a_log = random_uniform<double>(rng, {c, n}, -1.0, 1.0);
    w.D = random_uniform<double>(rng, {c});
    return w;
}

GroupMambaWeights<double> zero_weights(int64_t c, int64_t n) {
    GroupMambaWeights<double> w;
    w.w_delta = make_eq_linear_weights(Ten<double>({c, 4, c}), Ten<double>({c}));
    w.w_B = make_eq_linear_weights(Ten<double>({c, 4, n}), Ten<double>({n}));
    w.w_C = make_eq_linear_weights(Ten<double>({c, 4, n}), Ten<double>({n}));
    w.a_log = Ten<double>({c, n});
    w.D = Ten<double>({c});
    return w;
}

}  // namespace

TEST_CASE("selective_scan two-step hand recurrence") {
    Ten<double> x({2, 1}, {1, 1});
    Ten<double> A({2, 1, 1}, {0.5, 0.5});
    Ten<double> B({2, 1}, {1, 1});
    Ten<double> C({2, 1}, {1, 1});
    Ten<double> D({1}, {0});
    Ten<double> y = selective_scan(x, A, B, C, D);
    CHECK(y(0, 0) == doctest::Approx(1.0));
    CHECK(y(1, 0) == doctest::Approx(1.5));
}

TEST_CASE("selective_scan skip path adds D times the input") {
    Ten<double> x({2, 1}, {1, 2});
    Ten<double> A({2, 1, 1}, {0.5, 0.5});
    Ten<double> B({2, 1}, {1, 1});
    Ten<double> C({2, 1}, {1, 1});
    Ten<double> D({1}, {2});
    Ten<double> y = selective_scan(x, A, B, C, D);
    // h = [1, 2.5]; y = [1 + 2, 2.5 + 4]
    CHECK(y(0, 0) == doctest::Approx(3.0));
    CHECK(y(1, 0) == doctest::Approx(6.5));
}

TEST_CASE("selective_scan matches the naive per-step loop oracle") {
    Rng rng(50);
    const int64_t l = 16, c = 3, n = 4;
    auto x = random_uniform<double>(rng, {l, c});
    auto A = random_uniform<double>(rng, {l, c, n}, 0.05, 1.0);
    auto B = random_uniform<double>(rng, {l, n});
    auto C = random_uniform<double>(rng, {l, n});
    auto D = random_uniform<double>(rng, {c});
    Ten<double> y = selective_scan(x, A, B, C, D);
    Ten<double> expect({l, c});
    ref::sscan_naive(x.data.data(), A.data.data(), B.data.data(), C.data.data(), D.data.data(),
                     false, l, c, n, 1, expect.data.data());
    CHECK(max_abs_diff(y, expect) < 1e-14);
}

TEST_CASE("selective_scan rejects transition entries outside (0,1] and NaN input") {
    Ten<double> x({2, 1}, {1, 1});
    Ten<double> B({2, 1}, {1, 1});
    Ten<double> C({2, 1}, {1, 1});
    Ten<double> D({1}, {0});
    Ten<double> bad_hi({2, 1, 1}, {0.5, 1.5});
    CHECK_THROWS_AS(selective_scan(x, bad_hi, B, C, D), DomainError);
    Ten<double> bad_zero({2, 1, 1}, {0.0, 0.5});
    CHECK_THROWS_AS(selective_scan(x, bad_zero, B, C, D), DomainError);
    Ten<double> ok({2, 1, 1}, {1.0, 0.5});
    CHECK_NOTHROW(selective_scan(x, ok, B, C, D));
    Ten<double> xn({2, 1}, {1, std::nan("")});
    CHECK_THROWS_AS(selective_scan(xn, ok, B, C, D), DomainError);
}

TEST_CASE("y_i depends only on inputs up to i (causality, bit exact)") {
    Rng rng(51);
    const int64_t l = 12, c = 2, n = 3;
    auto x = random_uniform<double>(rng, {l, c});
    auto A = random_uniform<double>(rng, {l, c, n}, 0.1, 1.0);
    auto B = random_uniform<double>(rng, {l, n});
    auto C = random_uniform<double>(rng, {l, n});
    auto D = random_uniform<double>(rng, {c});
    Ten<double> y = selective_scan(x, A, B, C, D);
    const int64_t j = 7;
    auto x2 = x;
    x2(j, 0) += 10.0;
    x2(j, 1) -= 3.0;
    Ten<double> y2 = selective_scan(x2, A, B, C, D);
    for (int64_t i = 0; i < j; ++i)
        for (int64_t e = 0; e < c; ++e) CHECK(y2(i, e) == y(i, e));
    CHECK(y2(j, 0) != y(j, 0));
}

TEST_CASE("selective_scan is linear in x with parameters held fixed") {
    Rng rng(52);
    const int64_t l = 10, c = 2, n = 3;
    auto A = random_uniform<double>(rng, {l, c, n}, 0.1, 1.0);
    auto B = random_uniform<double>(rng, {l, n});
    auto C = random_uniform<double>(rng, {l, n});
    auto D = random_uniform<double>(rng, {c});
    auto x1 = random_uniform<double>(rng, {l, c});
    auto x2 = random_uniform<double>(rng, {l, c});
    const double alpha = 0.7, beta = -1.3;
    Ten<double> mix({l, c});
    for (int64_t i = 0; i < l * c; ++i)
        mix.data[size_t(i)] = alpha * x1.data[size_t(i)] + beta * x2.data[size_t(i)];
    Ten<double> lhs = selective_scan(mix, A, B, C, D);
    Ten<double> y1 = selective_scan(x1, A, B, C, D);
    Ten<double> y2 = selective_scan(x2, A, B, C, D);
    for (int64_t i = 0; i < l * c; ++i)
        CHECK(std::abs(lhs.data[size_t(i)] - (alpha * y1.data[size_t(i)] + beta * y2.data[size_t(i)])) < 1e-12);
}

TEST_CASE("generate_params with zero maps and a_log=0 gives A = 1/2 everywhere") {
    auto w = zero_weights(2, 3);
    Rng rng(53);
    auto x = random_uniform<double>(rng, {3, 3, 2, 4});
    SsmParams<double> p = generate_params(x, w);
    // Δ = softplus(0) = ln 2, so A = exp(-ln 2) = 1/2
    for (double v : p.A_seq.data) CHECK(v == doctest::Approx(0.5).epsilon(1e-14));
    for (double v : p.delta.data) CHECK(v == doctest::Approx(std::log(2.0)).epsilon(1e-14));
}

TEST_CASE("generate_params bias feeds through to a constant B sequence") {
    auto w = zero_weights(2, 3);
    w.w_B.b = Ten<double>({3}, {0.25, -0.5, 1.0});
    Ten<double> x({2, 2, 2, 4});
    SsmParams<double> p = generate_params(x, w);
    for (int64_t i = 0; i < p.B_seq.dim(0); ++i)
        for (int64_t t = 0; t < 4; ++t) {
            CHECK(p.B_seq(i, int64_t(0), t) == 0.25);
            CHECK(p.B_seq(i, int64_t(1), t) == -0.5);
            CHECK(p.B_seq(i, int64_t(2), t) == 1.0);
        }
}

TEST_CASE("generated parameters transform by the slot shift under the joint transform") {
    Rng rng(54);
    auto w = random_weights(rng, 3, 2, SsmMode::group);
    auto x = random_uniform<double>(rng, {4, 4, 3, 4});
    SsmParams<double> p = generate_params(x, w);
    for (int t = 1; t < 4; ++t) {
        SsmParams<double> q = generate_params(rotate_and_cycle(x, t), w);
        CHECK(max_abs_diff(q.B_seq, cycle_group(p.B_seq, t)) < 1e-12);
        CHECK(max_abs_diff(q.C_seq, cycle_group(p.C_seq, t)) < 1e-12);
        CHECK(max_abs_diff(q.delta, cycle_group(p.delta, t)) < 1e-12);
        CHECK(max_abs_diff(q.A_seq, cycle_group(p.A_seq, t)) < 1e-12);
    }
}

TEST_CASE("group_mamba with zero maps and D=1 is the identity") {
    auto w = zero_weights(2, 3);
    for (auto& v : w.D.data) v = 1.0;
    Rng rng(55);
    auto x = random_uniform<double>(rng, {3, 3, 2, 4});
    Ten<double> y = group_mamba(x, w);
    CHECK(y.data == x.data);
}

TEST_CASE("group_mamba geometric decay on a delta input") {
    // Force A = 1/2 (zero Δ map), B = C = 1 via biases, D = 0, N = 1.
    auto w = zero_weights(1, 1);
    w.w_B.b.data[0] = 1.0;
    w.w_C.b.data[0] = 1.0;
    Ten<double> x({2, 2, 1, 4});
    x(0, 0, 0, 0) = 1.0;  // slot-0 component [[1,0],[0,0]]
    Ten<double> y = group_mamba(x, w);
    CHECK(y(0, 0, 0, 0) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(y(0, 1, 0, 0) == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(y(1, 0, 0, 0) == doctest::Approx(0.25).epsilon(1e-14));
    CHECK(y(1, 1, 0, 0) == doctest::Approx(0.125).epsilon(1e-14));
}

TEST_CASE("group_mamba equivariance over 50 random draws, both modes") {
    Rng rng(56);
    for (SsmMode mode : {SsmMode::group, SsmMode::independent}) {
        for (int rep = 0; rep < 25; ++rep) {
            auto w = random_weights(rng, 3, 2, mode);
            auto x = random_uniform<double>(rng, {4, 4, 3, 4});
            Ten<double> y = group_mamba(x, w);
            for (int t = 1; t < 4; ++t) {
                Ten<double> lhs = group_mamba(rotate_and_cycle(x, t), w);
                CHECK(max_abs_diff(lhs, rotate_and_cycle(y, t)) < 1e-12);
            }
        }
    }
}

TEST_CASE("group_mamba equivariance holds on non-square maps") {
    Rng rng(57);
    auto w = random_weights(rng, 2, 2, SsmMode::group);
    auto x = random_uniform<double>(rng, {3, 5, 2, 4});
    Ten<double> y = group_mamba(x, w);
    for (int t = 1; t < 4; ++t)
        CHECK(max_abs_diff(group_mamba(rotate_and_cycle(x, t), w), rotate_and_cycle(y, t)) < 1e-12);
}

TEST_CASE("materialized transition entries stay in (0,1] for wild inputs") {
    Rng rng(58);
    auto w = random_weights(rng, 2, 2, SsmMode::group);
    auto x = random_uniform<double>(rng, {4, 4, 2, 4}, -50.0, 50.0);
    SsmParams<double> p = generate_params(x, w);
    for (double v : p.A_seq.data) {
        CHECK(v > 0.0);
        CHECK(v <= 1.0);
    }
    for (double v : p.delta.data) CHECK(v > 0.0);
}

TEST_CASE("scalar D mode broadcasts one coefficient across channels") {
    Rng rng(49);
    const int64_t l = 8, c = 3, n = 2;
    auto x = random_uniform<double>(rng, {l, c});
    auto A = random_uniform<double>(rng, {l, c, n}, 0.1, 1.0);
    auto B = random_uniform<double>(rng, {l, n});
    auto C = random_uniform<double>(rng, {l, n});
    Ten<double> d_scalar({1}, {0.75});
    Ten<double> d_full({c}, {0.75, 0.75, 0.75});
    CHECK(selective_scan(x, A, B, C, d_scalar).data == selective_scan(x, A, B, C, d_full).data);
}

TEST_CASE("independent mode caries no slot-coupled weights") {
    Rng rng(59);
    auto wg = random_weights(rng, 3, 2, SsmMode::group);
    auto wi = random_weights(rng, 3, 2, SsmMode::independent);
    CHECK(wg.mode() == SsmMode::group);
    CHECK(wi.mode() == SsmMode::independent);
    const int64_t group_count = wg.w_delta.W.numel() + wg.w_B.W.numel() + wg.w_C.W.numel();
    const int64_t indep_count = wi.w_delta.W.numel() + wi.w_B.W.numel() + wi.w_C.W.numel();
    CHECK(group_count == 4 * indep_count);
}
