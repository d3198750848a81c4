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
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "cbct/error.hpp"
#include "cbct/fdk.hpp"
#include "cbct/geometry.hpp"
#include "cbct/phantom.hpp"
#include "cbct/subsample.hpp"
#include "cbct/volio.hpp"

namespace cbct {

struct DatasetConfig {
    std::size_t n_volumes = 8;
    VoxelGrid grid = cubic_grid(64);
    ConeBeamGeometry geometry;
    double i0 = 1e5;
    bool noise = false;
    std::size_t keep_every = 5;
    std::uint64_t seed = 0;
    bool with_metal = false;
    FdkOptions fdk{};
};

struct SplitCounts {
    std::size_t train = 0;
    std::size_t val = 0;
    std::size_t test = 0;
};

/// Train/validation/test sizes in 25:6:1 proportions (floored), each split
/// holding at least one volume once n >= 3. Smaller datasets fill train
/// first, then validation.
inline SplitCounts split_counts(std::size_t n)
{
    detail::require(n >= 1, "split_counts: need at least one volume");
    if (n < 3)
        return {1, n - 1, 0};
    SplitCounts s;
    s.test = std::max<std::size_t>(1, n / 32);
    s.val = std::max<std::size_t>(1, (6 * n) / 32);
    s.train = n - s.val - s.test;
    return s;
}

namespace detail {

// splitmix64 finaliser; spreads consecutive seeds over the full state space.
inline std::uint64_t mix_seed(std::uint64_t x) noexcept
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::string volume_id(std::size_t i)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "vol%03zu", i);
    return buf;
}

} // namespace detail

inline std::uint64_t phantom_seed_for(std::uint64_t base, std::size_t index)
{
    return detail::mix_seed(base * 0x100000001b3ULL + index);
}

/// Builds a paired normal-dose / low-dose dataset in out_dir and writes
/// out_dir/manifest.json. Each volume: seeded dental phantom -> exact
/// full-view projections -> optional Poisson noise -> FDK (normal dose);
/// the same projections with every keep_every-th view -> FDK (low dose).
/// Normalization bounds are the global min/max over the training split.
inline nlohmann::json make_dataset(const DatasetConfig& cfg, const std::filesystem::path& out_dir)
{
    detail::require(cfg.n_volumes >= 1, "make_dataset: n_volumes must be >= 1");
    detail::require(cfg.keep_every >= 1, "make_dataset: keep_every must be >= 1");
    detail::require(cfg.i0 > 0.0, "make_dataset: I0 must be > 0");
    cfg.geometry.validate();
    cfg.grid.validate();

    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec)
        throw FormatError(FormatError::Kind::Io, "cannot create '" + out_dir.string() + "': " + ec.message());

    const SplitCounts split = split_counts(cfg.n_volumes);
    const ConeBeamGeometry low_geom = subsample_geometry(cfg.geometry, cfg.keep_every);
    const std::size_t n = cfg.n_volumes;

    std::vector<double> lo(n, std::numeric_limits<double>::infinity());
    std::vector<double> hi(n, -std::numeric_limits<double>::infinity());
    std::vector<std::exception_ptr> errors(n);

    const int saved_nested = omp_get_max_active_levels();
    omp_set_max_active_levels(1);
#pragma omp parallel for schedule(dynamic, 1)
    for (long il = 0; il < static_cast<long>(n); ++il) {
        const auto i = static_cast<std::size_t>(il);
        try {
            const std::uint64_t pseed = phantom_seed_for(cfg.seed, i);
            const auto [desc, truth] = dental_phantom(cfg.grid, pseed, cfg.with_metal);
            ProjectionSet full = analytic_project(desc, cfg.geometry);
            if (cfg.noise)
                full = counts_to_line_integrals(simulate_counts(full, cfg.i0, detail::mix_seed(pseed ^ 0x5eedULL)),
                                                cfg.i0);
            const Volume normal = fdk_reconstruct(full, cfg.grid, cfg.fdk);
            const Volume low = fdk_reconstruct(subsample_views(cfg.geometry, full, cfg.keep_every).second, cfg.grid,
                                               cfg.fdk);

            const std::string id = detail::volume_id(i);
            write_volume(normal, out_dir / (id + "_normal.cbv"), {},
                         {{"role", "normal_dose"}, {"n_views", cfg.geometry.n_views()}, {"phantom_seed", pseed},
                          {"geometry", to_json(cfg.geometry)}});
            write_volume(low, out_dir / (id + "_low.cbv"), {},
                         {{"role", "low_dose"}, {"n_views", low_geom.n_views()}, {"keep_every", cfg.keep_every},
                          {"phantom_seed", pseed}, {"geometry", to_json(low_geom)}});

            for (const Volume* v : {&normal, &low}) {
                const auto [mn, mx] = std::minmax_element(v->data().begin(), v->data().end());
                lo[i] = std::min(lo[i], static_cast<double>(*mn));
                hi[i] = std::max(hi[i], static_cast<double>(*mx));
            }
        } catch (...) {
            errors[i] = std::current_exception();
        }
    }
    omp_set_max_active_levels(saved_nested);
    for (const auto& e : errors)
        if (e)
            std::rethrow_exception(e);

    double g_lo = std::numeric_limits<double>::infinity();
    double g_hi = -g_lo;
    for (std::size_t i = 0; i < split.train; ++i) {
        g_lo = std::min(g_lo, lo[i]);
        g_hi = std::max(g_hi, hi[i]);
    }

    nlohmann::json pairs = nlohmann::json::array();
    for (std::size_t i = 0; i < n; ++i) {
        const std::string id = detail::volume_id(i);
        const char* role = i < split.train ? "train" : (i < split.train + split.val ? "val" : "test");
        pairs.push_back({{"id", id},
                         {"phantom_seed", phantom_seed_for(cfg.seed, i)},
                         {"split", role},
                         {"normal_dose", id + "_normal.cbv"},
                         {"low_dose", id + "_low.cbv"},
                         {"normal_dose_views", cfg.geometry.n_views()},
                         {"low_dose_views", low_geom.n_views()}});
    }

    nlohmann::json manifest = {
        {"format", "cbct-dataset"},
        {"version", 1},
        {"seed", cfg.seed},
        {"n_volumes", n},
        {"i0", cfg.i0},
        {"noise", cfg.noise},
        {"with_metal", cfg.with_metal},
        {"keep_every", cfg.keep_every},
        {"grid", to_json(cfg.grid)},
        {"geometry", to_json(cfg.geometry)},
        {"fdk_filter", cfg.fdk.filter_kind == FilterKind::RamLak ? "ramlak" : "hann"},
        {"split_counts", {{"train", split.train}, {"val", split.val}, {"test", split.test}}},
        {"normalization",
         {{"kind", "global_minmax"}, {"global_min", g_lo}, {"global_max", g_hi}, {"computed_on", "train"}}},
        {"pairs", pairs}};

    const std::filesystem::path mpath = out_dir / "manifest.json";
    std::ofstream os(mpath, std::ios::trunc);
    if (!os)
        throw FormatError(FormatError::Kind::Io, "cannot open '" + mpath.string() + "' for writing");
    os << manifest.dump(2) << '\n';
    if (!os)
        throw FormatError(FormatError::Kind::Io, "write failed for '" + mpath.string() + "'");
    return manifest;
}

/// Normalization bounds stored in a manifest.
inline NormalizationRecord manifest_normalization(const nlohmann::json& manifest)
{
    return normalization_from_json(manifest.at("normalization"));
}

} // namespace cbct
