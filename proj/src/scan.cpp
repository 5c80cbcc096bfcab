#include "eqscan/scan.hpp"

#include <map>
#include <memory>
#include <mutex>

namespace eqscan {

namespace {

ScanPlan build_plan(int64_t h, int64_t w) {
    ScanPlan plan;
    plan.h = h;
    plan.w = w;
    const int64_t l = h * w;

    // Rotating an index map by G_t^{-1} gives, at row-major position s, the
    // source position path t visits at step s.
    Ten<int64_t> idx({h, w});
    for (int64_t i = 0; i < l; ++i) idx.data[size_t(i)] = i;
    for (int t = 0; t < 4; ++t) {
        Ten<int64_t> r = rotate_spatial(idx, (4 - t) & 3);
        plan.fwd[size_t(t)] = r.data;
        plan.inv[size_t(t)].assign(size_t(l), 0);
        for (int64_t s = 0; s < l; ++s) plan.inv[size_t(t)][size_t(plan.fwd[size_t(t)][size_t(s)])] = s;
    }

    // Baseline directions: row-major, column-major, and their reverses.
    auto& row = plan.base_fwd[0];
    auto& col = plan.base_fwd[1];
    auto& rrow = plan.base_fwd[2];
    auto& rcol = plan.base_fwd[3];
    row.resize(size_t(l));
    col.resize(size_t(l));
    for (int64_t s = 0; s < l; ++s) row[size_t(s)] = s;
    int64_t s = 0;
    for (int64_t j = 0; j < w; ++j)
        for (int64_t i = 0; i < h; ++i) col[size_t(s++)] = i * w + j;
    rrow.assign(row.rbegin(), row.rend());
    rcol.assign(col.rbegin(), col.rend());
    for (int d = 0; d < 4; ++d) {
        plan.base_inv[size_t(d)].assign(size_t(l), 0);
        for (int64_t q = 0; q < l; ++q) plan.base_inv[size_t(d)][size_t(plan.base_fwd[size_t(d)][size_t(q)])] = q;
    }
    return plan;
}

}  // namespace

const ScanPlan& scan_plan(int64_t h, int64_t w) {
    static std::mutex mu;
    static std::map<std::pair<int64_t, int64_t>, std::unique_ptr<ScanPlan>> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto& slot = cache[{h, w}];
    if (!slot) slot = std::make_unique<ScanPlan>(build_plan(h, w));
    return *slot;
}

}  // namespace eqscan
