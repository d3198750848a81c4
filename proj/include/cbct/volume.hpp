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
#include <cmath>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "cbct/error.hpp"
#include "cbct/geometry.hpp"

namespace cbct {

/// Attenuation map (mm^-1) on a voxel grid, x-fastest.
class Volume {
public:
    Volume() = default;

    explicit Volume(const VoxelGrid& grid, float fill = 0.0f) : grid_(grid), data_(grid.size(), fill)
    {
        grid_.validate();
    }

    Volume(const VoxelGrid& grid, std::vector<float> data) : grid_(grid), data_(std::move(data))
    {
        grid_.validate();
        detail::require(data_.size() == grid_.size(), "Volume: data length does not match grid");
    }

    [[nodiscard]] const VoxelGrid& grid() const noexcept { return grid_; }
    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }

    [[nodiscard]] std::span<float> data() noexcept { return data_; }
    [[nodiscard]] std::span<const float> data() const noexcept { return data_; }
    [[nodiscard]] std::vector<float>& storage() noexcept { return data_; }
    [[nodiscard]] const std::vector<float>& storage() const noexcept { return data_; }

    float& operator[](std::size_t n) noexcept { return data_[n]; }
    float operator[](std::size_t n) const noexcept { return data_[n]; }

    float& at(std::size_t i, std::size_t j, std::size_t k) noexcept { return data_[grid_.index(i, j, k)]; }
    [[nodiscard]] float at(std::size_t i, std::size_t j, std::size_t k) const noexcept
    {
        return data_[grid_.index(i, j, k)];
    }

    [[nodiscard]] bool all_finite() const noexcept
    {
        return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
    }

private:
    VoxelGrid grid_{};
    std::vector<float> data_;
};

enum class DomainTag { LineIntegral, Counts };

/// Stack of detector images bound to a geometry. Layout is
/// column-fastest, then row, then view.
class ProjectionSet {
public:
    ProjectionSet() = default;

    ProjectionSet(ConeBeamGeometry geom, DomainTag domain, float fill = 0.0f)
        : geom_(std::move(geom)), domain_(domain), data_(geom_.n_pixels(), fill)
    {
    }

    ProjectionSet(ConeBeamGeometry geom, DomainTag domain, std::vector<float> data)
        : geom_(std::move(geom)), domain_(domain), data_(std::move(data))
    {
        detail::require(data_.size() == geom_.n_pixels(), "ProjectionSet: data length does not match geometry");
        if (domain_ == DomainTag::Counts) {
            detail::require(std::all_of(data_.begin(), data_.end(), [](float v) { return v >= 0.0f; }),
                            "ProjectionSet: counts must be non-negative");
        }
    }

    [[nodiscard]] const ConeBeamGeometry& geometry() const noexcept { return geom_; }
    [[nodiscard]] DomainTag domain() const noexcept { return domain_; }
    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }

    [[nodiscard]] std::span<float> data() noexcept { return data_; }
    [[nodiscard]] std::span<const float> data() const noexcept { return data_; }
    [[nodiscard]] std::vector<float>& storage() noexcept { return data_; }
    [[nodiscard]] const std::vector<float>& storage() const noexcept { return data_; }

    float& operator[](std::size_t n) noexcept { return data_[n]; }
    float operator[](std::size_t n) const noexcept { return data_[n]; }

    [[nodiscard]] std::size_t index(std::size_t view, std::size_t row, std::size_t col) const noexcept
    {
        return (view * geom_.n_rows + row) * geom_.n_cols + col;
    }
    float& at(std::size_t view, std::size_t row, std::size_t col) noexcept { return data_[index(view, row, col)]; }
    [[nodiscard]] float at(std::size_t view, std::size_t row, std::size_t col) const noexcept
    {
        return data_[index(view, row, col)];
    }

    /// Detector image of one view.
    [[nodiscard]] std::span<float> view(std::size_t v) noexcept
    {
        return std::span<float>(data_).subspan(v * geom_.pixels_per_view(), geom_.pixels_per_view());
    }
    [[nodiscard]] std::span<const float> view(std::size_t v) const noexcept
    {
        return std::span<const float>(data_).subspan(v * geom_.pixels_per_view(), geom_.pixels_per_view());
    }

    [[nodiscard]] bool all_finite() const noexcept
    {
        return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
    }

private:
    ConeBeamGeometry geom_{};
    DomainTag domain_ = DomainTag::LineIntegral;
    std::vector<float> data_;
};

namespace detail {

inline bool same_shape(const ConeBeamGeometry& a, const ConeBeamGeometry& b) noexcept
{
    return a.n_rows == b.n_rows && a.n_cols == b.n_cols && a.angles.size() == b.angles.size();
}

} // namespace detail
} // namespace cbct
