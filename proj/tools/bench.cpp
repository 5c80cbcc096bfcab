// Benchmark comparing the OpenMP kernels against the serial references on a
// few representative sizes, with a max-abs-diff column as a consistency check.

#include <chrono>
#include <cmath>
#include <cstdio>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "eqscan/harness.hpp"
#include "eqscan/kernels.hpp"

using namespace eqscan;

namespace {

template <class F>
double time_ms(F&& fn, int reps) {
    fn();  // warm up
    const auto t0 = std::chrono::steady_clock::now();
    for (int r = 0; r < reps; ++r) fn();
    const auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0;
    for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

void row(const char* name, double serial_ms, double parallel_ms, double diff) {
    std::printf("%-28s %10.3f %12.3f %9.2fx %10.1e\n", name, serial_ms, parallel_ms,
                serial_ms / parallel_ms, diff);
}

}  // namespace

int main() {
    apply_thread_env();
#ifdef _OPENMP
    std::printf("OpenMP threads: %d\n", omp_get_max_threads());
#else
    std::printf("OpenMP not enabled; both columns run the same serial code\n");
#endif
    std::printf("%-28s %10s %12s %9s %10s\n", "kernel", "serial ms", "parallel ms", "speedup",
                "max diff");

    Rng rng(1);
    {
        const int64_t h = 64, w = 64, ci = 16, co = 32, k = 3;
        auto in = random_uniform<double>(rng, {h, w, ci});
        auto ker = random_uniform<double>(rng, {k, k, ci, co});
        Ten<double> out_p({h, w, co}), out_s({h, w, co});
        const auto run_p = [&] {
            kern::conv2d(in.data.data(), h, w, ci, ker.data.data(), k, co, 1, 1, out_p.data.data(), h, w);
        };
        const auto run_s = [&] {
            ref::conv2d(in.data.data(), h, w, ci, ker.data.data(), k, co, 1, 1, out_s.data.data(), h, w);
        };
        row("conv2d 64x64x16->32 k3", time_ms(run_s, 5), time_ms(run_p, 5),
            max_abs_diff(out_p.data, out_s.data));
    }
    {
        const int64_t p = 4096, c1 = 32, c2 = 32;
        auto x = random_uniform<double>(rng, {p, c1, 4});
        auto wgt = random_uniform<double>(rng, {c1, 4, c2});
        auto b = random_uniform<double>(rng, {c2});
        Ten<double> y_p({p, c2, 4}), y_s({p, c2, 4});
        const auto run_p = [&] {
            kern::eq_linear(x.data.data(), p, c1, wgt.data.data(), 4, c2, b.data.data(), y_p.data.data());
        };
        const auto run_s = [&] {
            ref::eq_linear(x.data.data(), p, c1, wgt.data.data(), 4, c2, b.data.data(), y_s.data.data());
        };
        row("eq_linear 4096x(32,4)->32", time_ms(run_s, 5), time_ms(run_p, 5),
            max_abs_diff(y_p.data, y_s.data));
    }
    {
        const int64_t p = 4096, c1 = 128, c2 = 128;
        auto x = random_uniform<double>(rng, {p, c1});
        auto wgt = random_uniform<double>(rng, {c1, c2});
        auto b = random_uniform<double>(rng, {c2});
        Ten<double> y_p({p, c2}), y_s({p, c2});
        const auto run_p = [&] {
            kern::dense(x.data.data(), p, c1, wgt.data.data(), c2, b.data.data(), y_p.data.data());
        };
        const auto run_s = [&] {
            ref::dense(x.data.data(), p, c1, wgt.data.data(), c2, b.data.data(), y_s.data.data());
        };
        row("dense 4096x128->128", time_ms(run_s, 5), time_ms(run_p, 5), max_abs_diff(y_p.data, y_s.data));
    }
    {
        const int64_t l = 1024, c = 64, n = 16, sl = 4;
        auto x = random_uniform<double>(rng, {l, c, sl});
        auto a = random_uniform<double>(rng, {l, c, n, sl}, 0.2, 0.99);
        auto b = random_uniform<double>(rng, {l, n, sl});
        auto cc = random_uniform<double>(rng, {l, n, sl});
        auto d = random_uniform<double>(rng, {c});
        Ten<double> y_p({l, c, sl}), y_s({l, c, sl});
        const auto run_p = [&] {
            kern::sscan(x.data.data(), a.data.data(), b.data.data(), cc.data.data(), d.data.data(),
                        false, l, c, n, sl, y_p.data.data(), static_cast<double*>(nullptr));
        };
        const auto run_s = [&] {
            ref::sscan_naive(x.data.data(), a.data.data(), b.data.data(), cc.data.data(), d.data.data(),
                             false, l, c, n, sl, y_s.data.data());
        };
        row("selective scan L=1024 c64", time_ms(run_s, 5), time_ms(run_p, 5),
            max_abs_diff(y_p.data, y_s.data));
    }
    {
        // whole-model forward, parallel across the verify batch
        auto m = build_model<double>(micro_spec(true), 0);
        ToyDataset ds = synth_shapes(3, 16, 4);
        const auto run = [&] { equivariance_report(m, ds, ReportLevel::feature); };
        const double ms = time_ms(run, 1);
        std::printf("%-28s %10s %12.3f\n", "verify 16 samples (e2e)", "-", ms);
    }
    return 0;
}
