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

#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include "cbct/error.hpp"

namespace cbct {

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

enum class ArcKind { FullScan, ShortScan };

struct DetectorSpec {
    std::size_t rows = 1;
    std::size_t cols = 1;
    double pitch_u = 1.0; // mm
    double pitch_v = 1.0; // mm
    double offset_u = 0.0;
    double offset_v = 0.0;
};

/// Circular cone-beam trajectory with a flat-panel detector.
///
/// The source rotates in the z = 0 plane about the z axis. For a view angle
/// b the source sits at sid * (cos b, sin b, 0); the detector plane is
/// perpendicular to the central ray at distance sdd from the source. The
/// detector u axis is (sin b, -cos b, 0) and the v axis is +z, so the fan
/// angle of column u is atan(u / sdd) and the ray (b, g) coincides with the
/// conjugate ray (b + pi + 2g, -g).
///
/// arc_span records the angular range the views sample (each view covers
/// arc_span / n_views for evenly spaced acquisitions); it survives view
/// subsampling unchanged.
struct ConeBeamGeometry {
    double source_to_isocenter = 0.0; // mm
    double source_to_detector = 0.0;  // mm
    std::size_t n_rows = 0;
    std::size_t n_cols = 0;
    double pixel_pitch_u = 0.0;
    double pixel_pitch_v = 0.0;
    std::vector<double> angles; // radians, strictly increasing
    ArcKind arc_kind = ArcKind::FullScan;
    double arc_span = kTwoPi;
    double detector_offset_u = 0.0;
    double detector_offset_v = 0.0;

    [[nodiscard]] std::size_t n_views() const noexcept { return angles.size(); }
    [[nodiscard]] std::size_t pixels_per_view() const noexcept { return n_rows * n_cols; }
    [[nodiscard]] std::size_t n_pixels() const noexcept { return n_views() * pixels_per_view(); }

    [[nodiscard]] double magnification() const noexcept
    {
        return source_to_detector / source_to_isocenter;
    }

    [[nodiscard]] double fan_half_angle() const noexcept
    {
        return std::atan(0.5 * static_cast<double>(n_cols) * pixel_pitch_u / source_to_detector);
    }

    /// Physical detector coordinate of a column / row centre (mm).
    [[nodiscard]] double u_of_col(double col) const noexcept
    {
        return (col - 0.5 * static_cast<double>(n_cols - 1)) * pixel_pitch_u + detector_offset_u;
    }
    [[nodiscard]] double v_of_row(double row) const noexcept
    {
        return (row - 0.5 * static_cast<double>(n_rows - 1)) * pixel_pitch_v + detector_offset_v;
    }
    /// Inverse of u_of_col / v_of_row: fractional pixel index for a coordinate.
    [[nodiscard]] double col_of_u(double u) const noexcept
    {
        return (u - detector_offset_u) / pixel_pitch_u + 0.5 * static_cast<double>(n_cols - 1);
    }
    [[nodiscard]] double row_of_v(double v) const noexcept
    {
        return (v - detector_offset_v) / pixel_pitch_v + 0.5 * static_cast<double>(n_rows - 1);
    }

    /// Throws InvalidArgument if any geometry invariant is violated.
    void validate() const
    {
        detail::require(source_to_isocenter > 0.0, "geometry: source_to_isocenter must be > 0");
        detail::require(source_to_detector > source_to_isocenter,
                        "geometry: source_to_detector must exceed source_to_isocenter");
        detail::require(n_rows >= 1 && n_cols >= 1, "geometry: detector must have at least one pixel");
        detail::require(pixel_pitch_u > 0.0 && pixel_pitch_v > 0.0, "geometry: pixel pitches must be > 0");
        detail::require(!angles.empty(), "geometry: at least one view angle is required");
        detail::require(arc_span > 0.0 && arc_span <= kTwoPi + 1e-9, "geometry: arc_span must lie in (0, 2pi]");
        for (std::size_t i = 0; i < angles.size(); ++i) {
            detail::require(std::isfinite(angles[i]), "geometry: non-finite view angle");
            if (i > 0)
                detail::require(angles[i] > angles[i - 1], "geometry: view angles must be strictly increasing");
            detail::require(angles[i] - angles[0] <= kTwoPi + 1e-9,
                            "geometry: view angles must lie within one revolution of the first");
        }
        if (arc_kind == ArcKind::ShortScan) {
            detail::require(arc_span + 1e-9 >= kPi + 2.0 * fan_half_angle(),
                            "geometry: short-scan arc must cover pi + 2 * fan half angle");
        }
    }
};

/// Isotropic voxel grid. Voxel (i, j, k) has its centre at
/// origin + voxel_size * (i - (nx-1)/2, j - (ny-1)/2, k - (nz-1)/2).
struct VoxelGrid {
    std::size_t nx = 1;
    std::size_t ny = 1;
    std::size_t nz = 1;
    double voxel_size = 0.3; // mm
    std::array<double, 3> origin{0.0, 0.0, 0.0};

    [[nodiscard]] std::size_t size() const noexcept { return nx * ny * nz; }

    [[nodiscard]] std::size_t index(std::size_t i, std::size_t j, std::size_t k) const noexcept
    {
        return (k * ny + j) * nx + i;
    }

    [[nodiscard]] std::array<double, 3> center_of(std::size_t i, std::size_t j, std::size_t k) const noexcept
    {
        return {origin[0] + voxel_size * (static_cast<double>(i) - 0.5 * static_cast<double>(nx - 1)),
                origin[1] + voxel_size * (static_cast<double>(j) - 0.5 * static_cast<double>(ny - 1)),
                origin[2] + voxel_size * (static_cast<double>(k) - 0.5 * static_cast<double>(nz - 1))};
    }

    [[nodiscard]] std::array<std::size_t, 3> dims() const noexcept { return {nx, ny, nz}; }

    void validate() const
    {
        detail::require(nx >= 1 && ny >= 1 && nz >= 1, "grid: voxel counts must be >= 1");
        detail::require(voxel_size > 0.0 && std::isfinite(voxel_size), "grid: voxel_size must be > 0");
    }

    friend bool operator==(const VoxelGrid&, const VoxelGrid&) = default;
};

inline VoxelGrid cubic_grid(std::size_t n, double voxel_size = 0.3)
{
    VoxelGrid g{n, n, n, voxel_size, {0.0, 0.0, 0.0}};
    g.validate();
    return g;
}

/// Evenly spaced circular acquisition: angles[i] = i * arc_span / n_views.
/// The arc kind is ShortScan iff arc_span < 2 pi.
inline ConeBeamGeometry make_circular_geometry(std::size_t n_views, double arc_span, double sid, double sdd,
                                               const DetectorSpec& det)
{
    detail::require(n_views >= 2, "make_circular_geometry: n_views must be >= 2");
    detail::require(arc_span > 0.0 && arc_span <= kTwoPi + 1e-12, "make_circular_geometry: arc_span must lie in (0, 2pi]");
    detail::require(sid > 0.0 && sdd > sid, "make_circular_geometry: require sdd > sid > 0");

    ConeBeamGeometry g;
    g.source_to_isocenter = sid;
    g.source_to_detector = sdd;
    g.n_rows = det.rows;
    g.n_cols = det.cols;
    g.pixel_pitch_u = det.pitch_u;
    g.pixel_pitch_v = det.pitch_v;
    g.detector_offset_u = det.offset_u;
    g.detector_offset_v = det.offset_v;
    g.arc_kind = arc_span < kTwoPi - 1e-12 ? ArcKind::ShortScan : ArcKind::FullScan;
    g.arc_span = g.arc_kind == ArcKind::FullScan ? kTwoPi : arc_span;
    g.angles.resize(n_views);
    for (std::size_t i = 0; i < n_views; ++i)
        g.angles[i] = static_cast<double>(i) * g.arc_span / static_cast<double>(n_views);
    g.validate();
    return g;
}

/// Smallest arc that satisfies the short-scan condition for a detector.
inline double minimal_short_scan_arc(double sdd, const DetectorSpec& det)
{
    return kPi + 2.0 * std::atan(0.5 * static_cast<double>(det.cols) * det.pitch_u / sdd);
}

inline std::string to_string(ArcKind k)
{
    return k == ArcKind::FullScan ? "full_scan" : "short_scan";
}

} // namespace cbct
