#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>

#include "eqscan/scan.hpp"

using namespace eqscan;

namespace {

Ten<int64_t> random_int_map(Rng& rng, std::vector<int64_t> dims) {
    Ten<int64_t> x(std::move(dims));
    for (auto& v : x.data) v = rng.integer(-1000, 1000);
    return x;
}

// Component t of a (H, W, C, 4) map as a flat (H, W, C) tensor.
template <typename S>
Ten<S> component(const Ten<S>& x, int t) {
    Ten<S> out({x.dim(0), x.dim(1), x.dim(2)});
    for (int64_t i = 0; i < out.numel(); ++i) out.data[size_t(i)] = x.data[size_t(i * 4 + t)];
    return out;
}

}  // namespace

TEST_CASE("scan paths are bijections and path t is path 0 rotated by G_t") {
    const ScanPlan& plan = scan_plan(3, 5);
    for (int t = 0; t < 4; ++t) {
        std::vector<int64_t> seen(15, 0);
        for (int64_t v : plan.fwd[size_t(t)]) seen[size_t(v)]++;
        CHECK(std::all_of(seen.begin(), seen.end(), [](int64_t c) { return c == 1; }));
    }
    // Path t is the row-major base path rotated forward by G_t. The base path
    // lives on the grid whose rotation by G_t is (h, w), so for odd t it
    // starts on the transposed dims.
    const int64_t h = 3, w = 5;
    for (int t = 1; t < 4; ++t) {
        int64_t hh = (t % 2) ? w : h, ww = (t % 2) ? h : w;
        for (int64_t s = 0; s < h * w; ++s) {
            int64_t i = s / ww, j = s % ww;
            int64_t ch = hh, cw = ww;
            for (int k = 0; k < t; ++k) {
                const int64_t ni = cw - 1 - j, nj = i;  // CCW point map
                i = ni;
                j = nj;
                std::swap(ch, cw);
            }
            CHECK(plan.fwd[size_t(t)][size_t(s)] == i * w + j);
        }
    }
}

TEST_CASE("slot 0 sequence is the row-major flatten") {
    Ten<double> x({2, 2, 1, 4});
    // component 0 = [[1,2],[3,4]]
    x(0, 0, 0, 0) = 1;
    x(0, 1, 0, 0) = 2;
    x(1, 0, 0, 0) = 3;
    x(1, 1, 0, 0) = 4;
    auto seq = eq_cross_scan(x);
    CHECK(seq.tensor(0, 0, 0) == 1);
    CHECK(seq.tensor(1, 0, 0) == 2);
    CHECK(seq.tensor(2, 0, 0) == 3);
    CHECK(seq.tensor(3, 0, 0) == 4);
}

TEST_CASE("slot 1 reads its component through the G_1-rotated path") {
    Ten<double> x({2, 2, 1, 4});
    // component 1 = [[5,6],[7,8]]
    x(0, 0, 0, 1) = 5;
    x(0, 1, 0, 1) = 6;
    x(1, 0, 0, 1) = 7;
    x(1, 1, 0, 1) = 8;
    auto seq = eq_cross_scan(x);
    // Path 1 visits the grid in the order a clockwise-read of the component
    // produces, so the sequence is the flatten of the CW-rotated component.
    CHECK(seq.tensor(0, 0, 1) == 7);
    CHECK(seq.tensor(1, 0, 1) == 5);
    CHECK(seq.tensor(2, 0, 1) == 8);
    CHECK(seq.tensor(3, 0, 1) == 6);

    auto merged = eq_cross_merge(seq);
    CHECK(merged.data == x.data);
}

TEST_CASE("merge inverts scan bit exactly") {
    Rng rng(11);
    for (auto dims : {std::vector<int64_t>{5, 5, 3, 4}, {2, 7, 1, 4}, {4, 4, 2, 4}}) {
        Ten<int64_t> x = random_int_map(rng, dims);
        auto seq = eq_cross_scan(x);
        CHECK(eq_cross_merge(seq).data == x.data);
    }
}

TEST_CASE("scan and merge preserve the value multiset") {
    Rng rng(12);
    Ten<int64_t> x = random_int_map(rng, {5, 3, 2, 4});
    auto seq = eq_cross_scan(x);
    Ten<int64_t> sorted_in = x, sorted_out = seq.tensor;
    std::sort(sorted_in.data.begin(), sorted_in.data.end());
    std::sort(sorted_out.data.begin(), sorted_out.data.end());
    CHECK(sorted_in.data == sorted_out.data);
}

TEST_CASE("Theorem 1: scan of the jointly transformed map equals the shifted scan") {
    Rng rng(13);
    for (int rep = 0; rep < 100; ++rep) {
        Ten<int64_t> x = random_int_map(rng, {5, 5, 3, 4});
        auto scanned = eq_cross_scan(x);
        for (int t = 0; t < 4; ++t) {
            auto lhs = eq_cross_scan(rotate_and_cycle(x, t));
            Ten<int64_t> rhs = cycle_group(scanned.tensor, t);
            CHECK(lhs.tensor.data == rhs.data);
        }
    }
}

TEST_CASE("Theorem 1: merge of the shifted sequence equals the jointly transformed merge") {
    Rng rng(14);
    for (int rep = 0; rep < 100; ++rep) {
        Ten<int64_t> raw = random_int_map(rng, {20, 2, 4});
        ScanSequence<int64_t> seq{raw, 4, 5};
        Ten<int64_t> merged = eq_cross_merge(seq);
        for (int t = 0; t < 4; ++t) {
            // A shifted sequence stack reconstructs the jointly transformed
            // map, whose spatial dims are transposed for odd t.
            ScanSequence<int64_t> shifted{cycle_group(raw, t), (t % 2) ? 5 : 4, (t % 2) ? 4 : 5};
            Ten<int64_t> lhs = eq_cross_merge(shifted);
            Ten<int64_t> rhs = rotate_and_cycle(merged, t);
            CHECK(lhs.dims == rhs.dims);
            CHECK(lhs.data == rhs.data);
        }
    }
}

TEST_CASE("scan works with extra middle axes (parameter flattening path)") {
    Rng rng(15);
    Ten<int64_t> x = random_int_map(rng, {3, 4, 2, 5, 4});
    auto seq = eq_cross_scan(x);
    CHECK(seq.tensor.dims == std::vector<int64_t>{12, 2, 5, 4});
    CHECK(eq_cross_merge(seq).data == x.data);
    for (int t = 0; t < 4; ++t) {
        auto lhs = eq_cross_scan(rotate_and_cycle(x, t));
        CHECK(lhs.tensor.data == cycle_group(seq.tensor, t).data);
    }
}

TEST_CASE("baseline cross-scan produces the four VMamba directions") {
    Ten<double> x({2, 2, 1}, {1, 2, 3, 4});
    auto seq = cross_scan_baseline(x);
    CHECK(seq.tensor.dims == std::vector<int64_t>{4, 1, 4});
    // direction 0: row-major
    CHECK(seq.tensor(0, 0, 0) == 1);
    CHECK(seq.tensor(1, 0, 0) == 2);
    CHECK(seq.tensor(2, 0, 0) == 3);
    CHECK(seq.tensor(3, 0, 0) == 4);
    // direction 2: reversal of direction 0
    CHECK(seq.tensor(0, 0, 2) == 4);
    CHECK(seq.tensor(1, 0, 2) == 3);
    CHECK(seq.tensor(2, 0, 2) == 2);
    CHECK(seq.tensor(3, 0, 2) == 1);
    // direction 1: column-major
    CHECK(seq.tensor(0, 0, 1) == 1);
    CHECK(seq.tensor(1, 0, 1) == 3);
    CHECK(seq.tensor(2, 0, 1) == 2);
    CHECK(seq.tensor(3, 0, 1) == 4);
}

TEST_CASE("baseline merge sums the four unscanned directions") {
    Rng rng(16);
    Ten<double> x = random_uniform<double>(rng, {3, 4, 2});
    auto seq = cross_scan_baseline(x);
    Ten<double> back = cross_merge_baseline(seq);
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(back.data[size_t(i)] == doctest::Approx(4.0 * x.data[size_t(i)]));
}

TEST_CASE("baseline cross-scan is not equivariant (negative control)") {
    Rng rng(17);
    int mismatches = 0;
    Ten<int64_t> x = random_int_map(rng, {5, 5, 2});
    // Build a group-structured stack by replicating the plain map so the
    // Theorem-1 style comparison is well posed, then check the baseline paths.
    for (int t = 1; t < 4; ++t) {
        Ten<int64_t> rot = rotate_spatial(x, t);
        auto lhs = cross_scan_baseline(rot);
        auto rhs = cross_scan_baseline(x);
        // Consistency would require direction d of the rotated map to equal
        // some fixed permutation of direction (d - t) mod 4; row-major vs the
        // actual path ordering breaks this for generic inputs.
        Ten<int64_t> shifted = cycle_group(rhs.tensor, t);
        if (lhs.tensor.data != shifted.data) ++mismatches;
    }
    CHECK(mismatches > 0);
}
