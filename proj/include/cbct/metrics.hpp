// Copyright 2026 The cbct-recon Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "cbct/error.hpp"
#include "cbct/volume.hpp"

namespace cbct {

/// Voxel mask aligned with a grid; non-zero entries are evaluated.
/// An empty span means "all voxels".
using MaskView = std::span<const std::uint8_t>;

namespace detail {

inline void check_same_grid(const Volume& a, const Volume& b, const char* who)
{
    require(a.grid().dims() == b.grid().dims(), std::string(who) + ": volumes are on different grids");
}

inline void check_mask(MaskView mask, const Volume& v, const char* who)
{
    require(mask.empty() || mask.size() == v.size(), std::string(who) + ": mask size does not match volume");
}

inline bool in_mask(MaskView mask, std::size_t n) noexcept { return mask.empty() || mask[n] != 0; }

} // namespace detail

/// ||test - ref||_2 / ||ref||_2 over the masked voxels.
inline double nrmse(const Volume& test, const Volume& ref, MaskView mask = {})
{
    detail::check_same_grid(test, ref, "nrmse");
    detail::check_mask(mask, ref, "nrmse");
    double err = 0.0;
    double nrm = 0.0;
    for (std::size_t n = 0; n < ref.size(); ++n) {
        if (!detail::in_mask(mask, n))
            continue;
        const double d = static_cast<double>(test[n]) - static_cast<double>(ref[n]);
        err += d * d;
        nrm += static_cast<double>(ref[n]) * static_cast<double>(ref[n]);
    }
    if (nrm == 0.0)
        throw NumericError("nrmse: reference is identically zero on the evaluated region");
    return std::sqrt(err / nrm);
}

/// 10 log10(peak^2 / MSE) with peak = max(ref) - min(ref) over the mask.
/// Returns +infinity when the MSE is zero.
inline double psnr(const Volume& test, const Volume& ref, MaskView mask = {})
{
    detail::check_same_grid(test, ref, "psnr");
    detail::check_mask(mask, ref, "psnr");
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    double se = 0.0;
    std::size_t count = 0;
    for (std::size_t n = 0; n < ref.size(); ++n) {
        if (!detail::in_mask(mask, n))
            continue;
        const double r = ref[n];
        lo = std::min(lo, r);
        hi = std::max(hi, r);
        const double d = static_cast<double>(test[n]) - r;
        se += d * d;
        ++count;
    }
    detail::require(count > 0, "psnr: empty evaluation region");
    const double mse = se / static_cast<double>(count);
    if (mse == 0.0)
        return std::numeric_limits<double>::infinity();
    const double peak = hi - lo;
    return 10.0 * std::log10(peak * peak / mse);
}

enum class SsimMode { Volumetric, AxialSlices };

struct SsimOptions {
    SsimMode mode = SsimMode::Volumetric;
    double sigma = 1.5;
    std::size_t radius = 5; // window edge 2 * radius + 1
    double k1 = 0.01;
    double k2 = 0.03;
};

/// Normalised 1D Gaussian taps over [-radius, radius].
inline std::vector<double> gaussian_taps(double sigma, std::size_t radius)
{
    std::vector<double> w(2 * radius + 1);
    double s = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double x = static_cast<double>(i) - static_cast<double>(radius);
        w[i] = std::exp(-0.5 * x * x / (sigma * sigma));
        s += w[i];
    }
    for (double& v : w)
        v /= s;
    return w;
}

namespace detail {

// 'valid' correlation of a dense (nx, ny, nz) x-fastest block along one axis.
inline std::vector<double> filter_axis(const std::vector<double>& in, std::array<std::size_t, 3>& dims, int axis,
                                       const std::vector<double>& taps)
{
    const std::size_t w = taps.size();
    std::array<std::size_t, 3> od = dims;
    od[axis] = dims[axis] - w + 1;
    std::vector<double> out(od[0] * od[1] * od[2], 0.0);
    const std::array<std::size_t, 3> istride{1, dims[0], dims[0] * dims[1]};
    const long nz = static_cast<long>(od[2]);
#pragma omp parallel for schedule(static)
    for (long kl = 0; kl < nz; ++kl) {
        const auto k = static_cast<std::size_t>(kl);
        for (std::size_t j = 0; j < od[1]; ++j)
            for (std::size_t i = 0; i < od[0]; ++i) {
                const std::size_t base = i * istride[0] + j * istride[1] + k * istride[2];
                double s = 0.0;
                for (std::size_t t = 0; t < w; ++t)
                    s += taps[t] * in[base + t * istride[axis]];
                out[(k * od[1] + j) * od[0] + i] = s;
            }
    }
    dims = od;
    return out;
}

inline double ssim_block(const std::vector<double>& x, const std::vector<double>& y, std::array<std::size_t, 3> dims,
                         const std::vector<double>& taps, int n_axes, double c1, double c2)
{
    std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
    for (std::size_t n = 0; n < x.size(); ++n) {
        xx[n] = x[n] * x[n];
        yy[n] = y[n] * y[n];
        xy[n] = x[n] * y[n];
    }
    std::array<std::vector<double>, 5> stats{x, y, xx, yy, xy};
    std::array<std::size_t, 3> od{};
    for (auto& s : stats) {
        std::array<std::size_t, 3> d = dims;
        for (int a = 0; a < n_axes; ++a)
            s = filter_axis(s, d, a, taps);
        od = d;
    }
    double acc = 0.0;
    const std::size_t n_win = od[0] * od[1] * od[2];
    for (std::size_t n = 0; n < n_win; ++n) {
        const double mx = stats[0][n], my = stats[1][n];
        const double vx = stats[2][n] - mx * mx;
        const double vy = stats[3][n] - my * my;
        const double cxy = stats[4][n] - mx * my;
        acc += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
    return acc;
}

} // namespace detail

/// Mean local SSIM with a Gaussian window (sigma 1.5, 11 samples per axis),
/// evaluated at every window position that fits inside the grid.
/// C1 = (k1 L)^2, C2 = (k2 L)^2 with L = max(ref) - min(ref).
inline double ssim(const Volume& test, const Volume& ref, const SsimOptions& opts = {})
{
    detail::check_same_grid(test, ref, "ssim");
    const VoxelGrid& g = ref.grid();
    const std::size_t win = 2 * opts.radius + 1;
    detail::require(g.nx >= win && g.ny >= win, "ssim: grid is smaller than the window");
    if (opts.mode == SsimMode::Volumetric)
        detail::require(g.nz >= win, "ssim: grid is smaller than the window");

    const auto [mn, mx] = std::minmax_element(ref.data().begin(), ref.data().end());
    const double range = static_cast<double>(*mx) - static_cast<double>(*mn);
    if (range == 0.0)
        throw NumericError("ssim: reference has zero dynamic range");
    const double c1 = (opts.k1 * range) * (opts.k1 * range);
    const double c2 = (opts.k2 * range) * (opts.k2 * range);
    const std::vector<double> taps = gaussian_taps(opts.sigma, opts.radius);

    if (opts.mode == SsimMode::Volumetric) {
        std::vector<double> x(test.data().begin(), test.data().end());
        std::vector<double> y(ref.data().begin(), ref.data().end());
        const double sum = detail::ssim_block(x, y, g.dims(), taps, 3, c1, c2);
        const double n_win = static_cast<double>((g.nx - win + 1) * (g.ny - win + 1) * (g.nz - win + 1));
        return sum / n_win;
    }

    const std::size_t per_slice = g.nx * g.ny;
    double sum = 0.0;
    for (std::size_t k = 0; k < g.nz; ++k) {
        std::vector<double> x(test.data().begin() + static_cast<long>(k * per_slice),
                              test.data().begin() + static_cast<long>((k + 1) * per_slice));
        std::vector<double> y(ref.data().begin() + static_cast<long>(k * per_slice),
                              ref.data().begin() + static_cast<long>((k + 1) * per_slice));
        sum += detail::ssim_block(x, y, {g.nx, g.ny, 1}, taps, 2, c1, c2);
    }
    const double n_win = static_cast<double>((g.nx - win + 1) * (g.ny - win + 1) * g.nz);
    return sum / n_win;
}

struct MetricsReport {
    double nrmse = 0.0;
    double psnr = 0.0;
    double ssim = 0.0;
    std::string region = "all";
};

inline MetricsReport evaluate(const Volume& test, const Volume& ref, MaskView mask = {},
                              const SsimOptions& ssim_opts = {}, std::string region = "all")
{
    MetricsReport r;
    r.nrmse = nrmse(test, ref, mask);
    r.psnr = psnr(test, ref, mask);
    r.ssim = ssim(test, ref, ssim_opts);
    r.region = mask.empty() ? "all" : std::move(region);
    return r;
}

} // namespace cbct
