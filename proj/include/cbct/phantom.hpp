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
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "cbct/error.hpp"
#include "cbct/geometry.hpp"
#include "cbct/projector.hpp"
#include "cbct/volume.hpp"

namespace cbct {

enum class TissueLabel { SoftTissue, Bone, Tooth, Metal };

inline std::string to_string(TissueLabel l)
{
    switch (l) {
    case TissueLabel::SoftTissue: return "soft_tissue";
    case TissueLabel::Bone: return "bone";
    case TissueLabel::Tooth: return "tooth";
    case TissueLabel::Metal: return "metal";
    }
    return "unknown";
}

/// Solid ellipsoid adding delta_mu (mm^-1) wherever it covers a point.
/// rotation holds Euler angles (rz, ry, rx) applied as Rz * Ry * Rx.
struct Ellipsoid {
    std::array<double, 3> center{};
    std::array<double, 3> semi_axes{1.0, 1.0, 1.0};
    std::array<double, 3> rotation{};
    double delta_mu = 0.0;
    TissueLabel label = TissueLabel::SoftTissue;

    [[nodiscard]] std::array<std::array<double, 3>, 3> rotation_matrix() const noexcept
    {
        const double ca = std::cos(rotation[0]), sa = std::sin(rotation[0]);
        const double cb = std::cos(rotation[1]), sb = std::sin(rotation[1]);
        const double cc = std::cos(rotation[2]), sc = std::sin(rotation[2]);
        return {{{ca * cb, ca * sb * sc - sa * cc, ca * sb * cc + sa * sc},
                 {sa * cb, sa * sb * sc + ca * cc, sa * sb * cc - ca * sc},
                 {-sb, cb * sc, cb * cc}}};
    }

    /// World vector -> unit-sphere frame (R^T v / semi_axes).
    [[nodiscard]] std::array<double, 3> to_local(const std::array<double, 3>& v) const noexcept
    {
        const auto r = rotation_matrix();
        std::array<double, 3> out{};
        for (int a = 0; a < 3; ++a)
            out[a] = (r[0][a] * v[0] + r[1][a] * v[1] + r[2][a] * v[2]) / semi_axes[a];
        return out;
    }

    [[nodiscard]] bool contains(const std::array<double, 3>& p) const noexcept
    {
        const auto l = to_local({p[0] - center[0], p[1] - center[1], p[2] - center[2]});
        return l[0] * l[0] + l[1] * l[1] + l[2] * l[2] <= 1.0;
    }

    /// Length (mm) of the segment from -> to inside the ellipsoid.
    [[nodiscard]] double chord(const std::array<double, 3>& from, const std::array<double, 3>& to) const noexcept
    {
        const auto s = to_local({from[0] - center[0], from[1] - center[1], from[2] - center[2]});
        const auto d = to_local({to[0] - from[0], to[1] - from[1], to[2] - from[2]});
        const double a = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
        const double b = s[0] * d[0] + s[1] * d[1] + s[2] * d[2];
        const double c = s[0] * s[0] + s[1] * s[1] + s[2] * s[2] - 1.0;
        const double disc = b * b - a * c;
        if (a == 0.0 || disc <= 0.0)
            return 0.0;
        const double root = std::sqrt(disc);
        const double t0 = std::max(0.0, (-b - root) / a);
        const double t1 = std::min(1.0, (-b + root) / a);
        if (t1 <= t0)
            return 0.0;
        const double len = std::sqrt((to[0] - from[0]) * (to[0] - from[0]) + (to[1] - from[1]) * (to[1] - from[1]) +
                                     (to[2] - from[2]) * (to[2] - from[2]));
        return (t1 - t0) * len;
    }
};

struct PhantomDesc {
    std::vector<Ellipsoid> ellipsoids;
    VoxelGrid grid;
    std::uint64_t seed = 0;
};

/// Point evaluation of the ellipsoid sum at every voxel centre.
inline Volume rasterize(const PhantomDesc& desc)
{
    detail::require(!desc.ellipsoids.empty(), "rasterize: phantom has no ellipsoids");
    const VoxelGrid& grid = desc.grid;
    Volume vol(grid);
    std::span<float> f = vol.data();
    const long nz = static_cast<long>(grid.nz);
#pragma omp parallel for schedule(static)
    for (long k = 0; k < nz; ++k)
        for (std::size_t j = 0; j < grid.ny; ++j)
            for (std::size_t i = 0; i < grid.nx; ++i) {
                const auto x = grid.center_of(i, j, static_cast<std::size_t>(k));
                double v = 0.0;
                for (const Ellipsoid& e : desc.ellipsoids)
                    if (e.contains(x))
                        v += e.delta_mu;
                f[grid.index(i, j, static_cast<std::size_t>(k))] = static_cast<float>(v);
            }
    return vol;
}

/// Exact line integrals of the continuous ellipsoid phantom (no voxelization).
inline ProjectionSet analytic_project(const PhantomDesc& desc, const ConeBeamGeometry& geom)
{
    geom.validate();
    ProjectionSet out(geom, DomainTag::LineIntegral);
    std::span<float> p = out.data();
    const long n_views = static_cast<long>(geom.n_views());
#pragma omp parallel for schedule(static)
    for (long v = 0; v < n_views; ++v) {
        const detail::ViewFrame frame = detail::view_frame(geom, geom.angles[static_cast<std::size_t>(v)]);
        for (std::size_t r = 0; r < geom.n_rows; ++r)
            for (std::size_t c = 0; c < geom.n_cols; ++c) {
                const auto px = detail::pixel_position(geom, frame, r, c);
                double acc = 0.0;
                for (const Ellipsoid& e : desc.ellipsoids)
                    acc += e.delta_mu * e.chord(frame.source, px);
                p[out.index(static_cast<std::size_t>(v), r, c)] = static_cast<float>(acc);
            }
    }
    return out;
}

/// Centred uniform ball of attenuation mu.
inline std::pair<PhantomDesc, Volume> uniform_ball(const VoxelGrid& grid, double radius, double mu)
{
    grid.validate();
    detail::require(radius > 0.0, "uniform_ball: radius must be > 0");
    PhantomDesc desc;
    desc.grid = grid;
    Ellipsoid e;
    e.center = grid.origin;
    e.semi_axes = {radius, radius, radius};
    e.delta_mu = mu;
    desc.ellipsoids.push_back(e);
    Volume vol = rasterize(desc);
    return {std::move(desc), std::move(vol)};
}

namespace phantom_mu {
inline constexpr double kSoftTissue = 0.02;
inline constexpr double kBone = 0.05;
inline constexpr double kTooth = 0.08;
inline constexpr double kMetal = 1.0;
} // namespace phantom_mu

/// Seeded dental-like phantom scaled to the grid: soft-tissue head, a
/// horseshoe jaw of bone ellipsoids, 8-16 teeth above the jaw along the same
/// arc and optionally 1-2 metal inserts inside teeth. Values are totals
/// (soft tissue 0.02, bone 0.05, tooth 0.08, metal ~1.06 mm^-1).
inline std::pair<PhantomDesc, Volume> dental_phantom(const VoxelGrid& grid, std::uint64_t variant_seed,
                                                     bool with_metal)
{
    grid.validate();
    std::mt19937_64 rng(variant_seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);

    const double rx = 0.5 * grid.voxel_size * static_cast<double>(grid.nx);
    const double ry = 0.5 * grid.voxel_size * static_cast<double>(grid.ny);
    const double rz = 0.5 * grid.voxel_size * static_cast<double>(grid.nz);
    const auto& o = grid.origin;

    PhantomDesc desc;
    desc.grid = grid;
    desc.seed = variant_seed;

    Ellipsoid head;
    head.center = o;
    head.semi_axes = {0.88 * rx, 0.80 * ry, 0.80 * rz};
    head.rotation = {0.05 * unit(rng), 0.0, 0.0};
    head.delta_mu = phantom_mu::kSoftTissue;
    head.label = TissueLabel::SoftTissue;
    desc.ellipsoids.push_back(head);

    // Horseshoe arc in the axial plane, open towards -y.
    const double arc_a = 0.52 * rx * (1.0 + 0.04 * unit(rng));
    const double arc_b = 0.55 * ry * (1.0 + 0.04 * unit(rng));
    const double arc_y0 = -0.10 * ry;
    const double theta_max = 95.0 * kPi / 180.0;
    auto arc_point = [&](double t) {
        return std::array<double, 2>{arc_a * std::sin(t), arc_y0 + arc_b * std::cos(t)};
    };
    auto arc_heading = [&](double t) { return std::atan2(-arc_b * std::sin(t), arc_a * std::cos(t)); };

    constexpr int kBoneSegments = 7;
    for (int s = 0; s < kBoneSegments; ++s) {
        const double t = -theta_max + 2.0 * theta_max * (static_cast<double>(s) + 0.5) / kBoneSegments;
        const auto pt = arc_point(t);
        Ellipsoid bone;
        bone.center = {o[0] + pt[0], o[1] + pt[1], o[2] - 0.18 * rz};
        bone.semi_axes = {0.16 * rx, 0.08 * ry, 0.12 * rz};
        bone.rotation = {arc_heading(t), 0.0, 0.0};
        bone.delta_mu = phantom_mu::kBone - phantom_mu::kSoftTissue;
        bone.label = TissueLabel::Bone;
        desc.ellipsoids.push_back(bone);
    }

    const int n_teeth = 8 + static_cast<int>(rng() % 9);
    const double spacing = 2.0 * theta_max / n_teeth;
    const double arc_len = 0.5 * (arc_a + arc_b) * spacing;
    std::vector<std::size_t> tooth_ids;
    for (int n = 0; n < n_teeth; ++n) {
        const double t = -theta_max + spacing * (static_cast<double>(n) + 0.5 + 0.15 * unit(rng));
        const auto pt = arc_point(t);
        Ellipsoid tooth;
        tooth.center = {o[0] + pt[0], o[1] + pt[1], o[2] + rz * (0.10 + 0.03 * unit(rng))};
        tooth.semi_axes = {0.30 * arc_len, 0.06 * std::min(rx, ry), 0.12 * rz};
        tooth.rotation = {arc_heading(t), 0.0, 0.0};
        tooth.delta_mu = phantom_mu::kTooth - phantom_mu::kSoftTissue;
        tooth.label = TissueLabel::Tooth;
        tooth_ids.push_back(desc.ellipsoids.size());
        desc.ellipsoids.push_back(tooth);
    }

    if (with_metal) {
        const int n_metal = 1 + static_cast<int>(rng() % 2);
        std::vector<std::size_t> pool = tooth_ids;
        for (int m = 0; m < n_metal; ++m) {
            const std::size_t pick = static_cast<std::size_t>(rng() % pool.size());
            const Ellipsoid& host = desc.ellipsoids[pool[pick]];
            pool.erase(pool.begin() + static_cast<long>(pick));
            Ellipsoid metal = host;
            metal.semi_axes = {0.5 * host.semi_axes[0], 0.5 * host.semi_axes[1], 0.5 * host.semi_axes[2]};
            metal.delta_mu = phantom_mu::kMetal - 0.02 + 0.04 * unit(rng);
            metal.label = TissueLabel::Metal;
            desc.ellipsoids.push_back(metal);
        }
    }

    Volume vol = rasterize(desc);
    return {std::move(desc), std::move(vol)};
}

/// Poisson photon counts with mean I0 * exp(-line_integral). Sequential
/// draws from one seeded engine, so results do not depend on threading.
inline ProjectionSet simulate_counts(const ProjectionSet& proj, double i0, std::uint64_t seed)
{
    detail::require(i0 > 0.0, "simulate_counts: I0 must be > 0");
    detail::require(proj.domain() == DomainTag::LineIntegral, "simulate_counts: expects line integrals");
    std::mt19937_64 rng(seed);
    std::vector<float> counts(proj.size());
    const std::span<const float> p = proj.data();
    for (std::size_t n = 0; n < counts.size(); ++n) {
        detail::require(p[n] >= 0.0f, "simulate_counts: line integrals must be >= 0");
        std::poisson_distribution<std::int64_t> draw(i0 * std::exp(-static_cast<double>(p[n])));
        counts[n] = static_cast<float>(draw(rng));
    }
    return ProjectionSet(proj.geometry(), DomainTag::Counts, std::move(counts));
}

/// p = -ln(max(counts, 1) / I0), clamped below at 0.
inline ProjectionSet counts_to_line_integrals(const ProjectionSet& counts, double i0)
{
    detail::require(i0 > 0.0, "counts_to_line_integrals: I0 must be > 0");
    std::vector<float> p(counts.size());
    const std::span<const float> c = counts.data();
    for (std::size_t n = 0; n < p.size(); ++n) {
        detail::require(c[n] >= 0.0f, "counts_to_line_integrals: counts must be >= 0");
        const double li = -std::log(std::max(static_cast<double>(c[n]), 1.0) / i0);
        p[n] = static_cast<float>(std::max(li, 0.0));
    }
    return ProjectionSet(counts.geometry(), DomainTag::LineIntegral, std::move(p));
}

} // namespace cbct
