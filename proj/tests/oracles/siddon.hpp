// Test-only exact ray/voxel intersection (Siddon). Independent of the
// Joseph interpolation used by the projector under test.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

#include "cbct/geometry.hpp"

namespace oracle {

struct Hit {
    std::size_t voxel;
    double length; // mm
};

/// Exact intersection lengths of the segment from -> to with every voxel.
inline std::vector<Hit> siddon(const cbct::VoxelGrid& g, const std::array<double, 3>& from,
                               const std::array<double, 3>& to)
{
    const std::array<std::size_t, 3> n = g.dims();
    std::array<double, 3> lo{}, d{};
    for (int a = 0; a < 3; ++a) {
        lo[a] = g.origin[a] - 0.5 * g.voxel_size * static_cast<double>(n[a]);
        d[a] = to[a] - from[a];
    }
    const double len = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);

    // Collect every parametric crossing of a voxel boundary plane, plus the ends.
    std::vector<double> ts{0.0, 1.0};
    for (int a = 0; a < 3; ++a) {
        if (d[a] == 0.0)
            continue;
        for (std::size_t k = 0; k <= n[a]; ++k) {
            const double t = (lo[a] + g.voxel_size * static_cast<double>(k) - from[a]) / d[a];
            if (t > 0.0 && t < 1.0)
                ts.push_back(t);
        }
    }
    std::sort(ts.begin(), ts.end());

    std::vector<Hit> hits;
    for (std::size_t s = 0; s + 1 < ts.size(); ++s) {
        const double t0 = ts[s], t1 = ts[s + 1];
        if (t1 - t0 <= 1e-15)
            continue;
        const double tm = 0.5 * (t0 + t1);
        std::array<long, 3> idx{};
        bool inside = true;
        for (int a = 0; a < 3; ++a) {
            const double x = from[a] + tm * d[a];
            idx[a] = static_cast<long>(std::floor((x - lo[a]) / g.voxel_size));
            inside = inside && idx[a] >= 0 && idx[a] < static_cast<long>(n[a]);
        }
        if (!inside)
            continue;
        const std::size_t v = g.index(static_cast<std::size_t>(idx[0]), static_cast<std::size_t>(idx[1]),
                                      static_cast<std::size_t>(idx[2]));
        if (!hits.empty() && hits.back().voxel == v)
            hits.back().length += (t1 - t0) * len;
        else
            hits.push_back({v, (t1 - t0) * len});
    }
    return hits;
}

inline double total_length(const std::vector<Hit>& hits)
{
    double s = 0.0;
    for (const Hit& h : hits)
        s += h.length;
    return s;
}

} // namespace oracle
