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

#include <omp.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

#include "cbct/error.hpp"
#include "cbct/geometry.hpp"
#include "cbct/volume.hpp"

namespace cbct {

namespace detail {

/// Source position and detector frame of one view, in world coordinates (mm).
struct ViewFrame {
    std::array<double, 3> source;
    std::array<double, 3> det_center;
    std::array<double, 3> e_u;
    std::array<double, 3> e_v;
};

inline ViewFrame view_frame(const ConeBeamGeometry& g, double angle) noexcept
{
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    const double sid = g.source_to_isocenter;
    const double sdd = g.source_to_detector;
    ViewFrame f;
    f.source = {sid * c, sid * s, 0.0};
    f.det_center = {(sid - sdd) * c, (sid - sdd) * s, 0.0};
    f.e_u = {s, -c, 0.0};
    f.e_v = {0.0, 0.0, 1.0};
    return f;
}

inline std::array<double, 3> pixel_position(const ConeBeamGeometry& g, const ViewFrame& f, std::size_t row,
                                            std::size_t col) noexcept
{
    const double u = g.u_of_col(static_cast<double>(col));
    const double v = g.v_of_row(static_cast<double>(row));
    return {f.det_center[0] + u * f.e_u[0] + v * f.e_v[0], f.det_center[1] + u * f.e_u[1] + v * f.e_v[1],
            f.det_center[2] + u * f.e_u[2] + v * f.e_v[2]};
}

/// World point -> continuous voxel index coordinates (voxel centres at integers).
inline std::array<double, 3> to_index(const VoxelGrid& grid, const std::array<double, 3>& p) noexcept
{
    const std::array<std::size_t, 3> n = grid.dims();
    std::array<double, 3> r{};
    for (int a = 0; a < 3; ++a)
        r[a] = (p[a] - grid.origin[a]) / grid.voxel_size + 0.5 * static_cast<double>(n[a] - 1);
    return r;
}

/// Joseph ray marching. Steps through every voxel-centre plane orthogonal to
/// the dominant direction of the ray, bilinearly interpolating in that plane.
/// visit(linear_voxel_index, weight_mm) is called once per non-zero
/// coefficient of the system-matrix row; the same sequence serves both the
/// forward gather and the adjoint scatter.
template <class Visit>
void joseph_trace(const VoxelGrid& grid, const std::array<double, 3>& from, const std::array<double, 3>& to,
                  Visit&& visit)
{
    const std::array<double, 3> s = to_index(grid, from);
    const std::array<double, 3> e = to_index(grid, to);
    const std::array<double, 3> d{e[0] - s[0], e[1] - s[1], e[2] - s[2]};
    const std::array<std::size_t, 3> n = grid.dims();

    int m = 0;
    if (std::abs(d[1]) > std::abs(d[m]))
        m = 1;
    if (std::abs(d[2]) > std::abs(d[m]))
        m = 2;
    if (d[m] == 0.0)
        return;
    const int a = (m + 1) % 3;
    const int b = (m + 2) % 3;

    const double len = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
    const double step = grid.voxel_size * len / std::abs(d[m]);

    // c_a(i) = ca0 + i * ka along the dominant index i.
    const double ka = d[a] / d[m];
    const double kb = d[b] / d[m];
    const double ca0 = s[a] - s[m] * ka;
    const double cb0 = s[b] - s[m] * kb;

    // Restrict to planes whose interpolation footprint can touch the grid.
    double lo = 0.0;
    double hi = static_cast<double>(n[m] - 1);
    auto clip = [&](double c0, double k, double nmax) {
        if (k == 0.0) {
            if (c0 <= -1.0 || c0 >= nmax)
                hi = -1.0;
            return;
        }
        double t0 = (-1.0 - c0) / k;
        double t1 = (nmax - c0) / k;
        if (t0 > t1)
            std::swap(t0, t1);
        lo = std::max(lo, t0);
        hi = std::min(hi, t1);
    };
    clip(ca0, ka, static_cast<double>(n[a]));
    clip(cb0, kb, static_cast<double>(n[b]));
    if (hi < lo)
        return;

    const long i_lo = std::max(0L, static_cast<long>(std::floor(lo)));
    const long i_hi = std::min(static_cast<long>(n[m]) - 1, static_cast<long>(std::ceil(hi)));

    std::array<std::size_t, 3> stride{1, grid.nx, grid.nx * grid.ny};
    const long na = static_cast<long>(n[a]);
    const long nb = static_cast<long>(n[b]);

    for (long i = i_lo; i <= i_hi; ++i) {
        const double ca = ca0 + static_cast<double>(i) * ka;
        const double cb = cb0 + static_cast<double>(i) * kb;
        const double fa_floor = std::floor(ca);
        const double fb_floor = std::floor(cb);
        const long ia = static_cast<long>(fa_floor);
        const long ib = static_cast<long>(fb_floor);
        const double fa = ca - fa_floor;
        const double fb = cb - fb_floor;
        const std::size_t base = static_cast<std::size_t>(i) * stride[m];

        const double wa[2] = {1.0 - fa, fa};
        const double wb[2] = {1.0 - fb, fb};
        for (int p = 0; p < 2; ++p) {
            const long ja = ia + p;
            if (ja < 0 || ja >= na || wa[p] == 0.0)
                continue;
            for (int q = 0; q < 2; ++q) {
                const long jb = ib + q;
                if (jb < 0 || jb >= nb || wb[q] == 0.0)
                    continue;
                visit(base + static_cast<std::size_t>(ja) * stride[a] + static_cast<std::size_t>(jb) * stride[b],
                      step * wa[p] * wb[q]);
            }
        }
    }
}

/// Row (view, row, col) of the system matrix.
template <class Visit>
void trace_pixel(const ConeBeamGeometry& geom, const VoxelGrid& grid, std::size_t view, std::size_t row,
                 std::size_t col, Visit&& visit)
{
    const ViewFrame f = view_frame(geom, geom.angles[view]);
    joseph_trace(grid, f.source, pixel_position(geom, f, row, col), visit);
}

inline void check_pair(const ConeBeamGeometry& geom, const VoxelGrid& grid)
{
    geom.validate();
    grid.validate();
    const double hx = 0.5 * grid.voxel_size * static_cast<double>(grid.nx);
    const double hy = 0.5 * grid.voxel_size * static_cast<double>(grid.ny);
    const double reach = std::hypot(std::abs(grid.origin[0]) + hx, std::abs(grid.origin[1]) + hy);
    require(reach < geom.source_to_isocenter, "projector: voxel grid must not reach the source trajectory");
}

} // namespace detail

/// Forward projection A f: line integral of attenuation from the source to
/// every detector pixel centre. Result is dimensionless (mm^-1 * mm).
inline ProjectionSet forward_project(const Volume& vol, const ConeBeamGeometry& geom)
{
    const VoxelGrid& grid = vol.grid();
    detail::check_pair(geom, grid);
    ProjectionSet out(geom, DomainTag::LineIntegral);
    const std::span<const float> f = vol.data();
    std::span<float> p = out.data();
    const std::size_t n_rows = geom.n_rows;
    const std::size_t n_cols = geom.n_cols;
    const long n_views = static_cast<long>(geom.n_views());

#pragma omp parallel for schedule(static)
    for (long v = 0; v < n_views; ++v) {
        const detail::ViewFrame frame = detail::view_frame(geom, geom.angles[static_cast<std::size_t>(v)]);
        for (std::size_t r = 0; r < n_rows; ++r) {
            for (std::size_t c = 0; c < n_cols; ++c) {
                double acc = 0.0;
                detail::joseph_trace(grid, frame.source, detail::pixel_position(geom, frame, r, c),
                                     [&](std::size_t idx, double w) { acc += w * static_cast<double>(f[idx]); });
                p[(static_cast<std::size_t>(v) * n_rows + r) * n_cols + c] = static_cast<float>(acc);
            }
        }
    }
    return out;
}

/// Adjoint A^T y of forward_project: scatters every projection value along
/// its ray with the forward interpolation weights. Threads accumulate into
/// private double-precision volumes that are summed in thread order.
inline Volume back_project(const ProjectionSet& proj, const ConeBeamGeometry& geom, const VoxelGrid& grid)
{
    detail::check_pair(geom, grid);
    detail::require(detail::same_shape(geom, proj.geometry()) && proj.size() == geom.n_pixels(),
                    "back_project: projection shape does not match geometry");

    const std::size_t n_vox = grid.size();
    const std::size_t n_rows = geom.n_rows;
    const std::size_t n_cols = geom.n_cols;
    const long n_views = static_cast<long>(geom.n_views());
    const std::span<const float> p = proj.data();

    const int n_threads = std::max(1, omp_get_max_threads());
    std::vector<std::vector<double>> partial(static_cast<std::size_t>(n_threads));

#pragma omp parallel num_threads(n_threads)
    {
        std::vector<double>& acc = partial[static_cast<std::size_t>(omp_get_thread_num())];
        acc.assign(n_vox, 0.0);
#pragma omp for schedule(static)
        for (long v = 0; v < n_views; ++v) {
            const detail::ViewFrame frame = detail::view_frame(geom, geom.angles[static_cast<std::size_t>(v)]);
            for (std::size_t r = 0; r < n_rows; ++r) {
                for (std::size_t c = 0; c < n_cols; ++c) {
                    const double val = p[(static_cast<std::size_t>(v) * n_rows + r) * n_cols + c];
                    if (val == 0.0)
                        continue;
                    detail::joseph_trace(grid, frame.source, detail::pixel_position(geom, frame, r, c),
                                         [&](std::size_t idx, double w) { acc[idx] += w * val; });
                }
            }
        }
    }

    Volume out(grid);
    std::span<float> f = out.data();
    const long n = static_cast<long>(n_vox);
#pragma omp parallel for schedule(static)
    for (long i = 0; i < n; ++i) {
        double s = 0.0;
        for (const auto& acc : partial)
            if (!acc.empty())
                s += acc[static_cast<std::size_t>(i)];
        f[static_cast<std::size_t>(i)] = static_cast<float>(s);
    }
    return out;
}

inline Volume back_project(const ProjectionSet& proj, const VoxelGrid& grid)
{
    return back_project(proj, proj.geometry(), grid);
}

struct OperatorSums {
    ProjectionSet row_sums; // A 1
    Volume col_sums;        // A^T 1
};

/// Row and column sums of the (non-negative) system matrix.
inline OperatorSums operator_row_col_sums(const ConeBeamGeometry& geom, const VoxelGrid& grid)
{
    detail::check_pair(geom, grid);
    Volume ones(grid, 1.0f);
    ProjectionSet rows = forward_project(ones, geom);
    ProjectionSet ones_p(geom, DomainTag::LineIntegral, 1.0f);
    Volume cols = back_project(ones_p, geom, grid);
    return {std::move(rows), std::move(cols)};
}

} // namespace cbct
