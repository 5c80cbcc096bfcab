#include "eqscan/group.hpp"

#include <cmath>

namespace eqscan {

RotationGroup build_group(int order) {
    if (order != 4)
        throw ValueError("unsupported rotation group order " + std::to_string(order) +
                         "; this artifact fixes T=4");
    RotationGroup g;
    g.order = order;
    for (int t = 0; t < order; ++t) {
        const double ang = 2.0 * M_PI * double(t) / double(order);
        // Quarter turns only, so snap the entries to exact integers.
        const double c = std::round(std::cos(ang));
        const double s = std::round(std::sin(ang));
        g.matrices[size_t(t)] = {c, s, -s, c};
    }
    return g;
}

}  // namespace eqscan
