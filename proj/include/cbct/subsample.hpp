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
#include <cstddef>
#include <utility>
#include <vector>

#include "cbct/error.hpp"
#include "cbct/geometry.hpp"
#include "cbct/volume.hpp"

namespace cbct {

/// Keeps views 0, keep_every, 2*keep_every, ... of a geometry.
inline ConeBeamGeometry subsample_geometry(const ConeBeamGeometry& geom, std::size_t keep_every)
{
    detail::require(keep_every >= 1, "subsample_views: keep_every must be >= 1");
    ConeBeamGeometry out = geom;
    out.angles.clear();
    for (std::size_t i = 0; i < geom.angles.size(); i += keep_every)
        out.angles.push_back(geom.angles[i]);
    return out;
}

/// Sparse-view acquisition: retains every keep_every-th view of both the
/// angle list and the projection stack. ceil(n / keep_every) views remain.
inline std::pair<ConeBeamGeometry, ProjectionSet> subsample_views(const ConeBeamGeometry& geom,
                                                                  const ProjectionSet& proj, std::size_t keep_every)
{
    detail::require(keep_every >= 1, "subsample_views: keep_every must be >= 1");
    detail::require(detail::same_shape(geom, proj.geometry()) && geom.angles == proj.geometry().angles,
                    "subsample_views: projections are not bound to this geometry");

    ConeBeamGeometry out_geom = subsample_geometry(geom, keep_every);
    const std::size_t per_view = geom.pixels_per_view();
    std::vector<float> data;
    data.reserve(out_geom.n_views() * per_view);
    for (std::size_t i = 0; i < geom.n_views(); i += keep_every) {
        auto v = proj.view(i);
        data.insert(data.end(), v.begin(), v.end());
    }
    ProjectionSet out_proj(out_geom, proj.domain(), std::move(data));
    return {std::move(out_geom), std::move(out_proj)};
}

inline ProjectionSet subsample_views(const ProjectionSet& proj, std::size_t keep_every)
{
    return subsample_views(proj.geometry(), proj, keep_every).second;
}

} // namespace cbct
