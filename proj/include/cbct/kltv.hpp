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
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cbct/error.hpp"
#include "cbct/geometry.hpp"
#include "cbct/projector.hpp"
#include "cbct/volume.hpp"

namespace cbct {

/// Three Volume-shaped components (d/dx, d/dy, d/dz), per voxel step.
struct GradientField {
    std::array<Volume, 3> comp;

    GradientField() = default;
    explicit GradientField(const VoxelGrid& grid) : comp{Volume(grid), Volume(grid), Volume(grid)} {}

    [[nodiscard]] const VoxelGrid& grid() const noexcept { return comp[0].grid(); }
};

/// Forward differences with a zero (Neumann) last slab along each axis.
inline GradientField gradient_op(const Volume& f)
{
    const VoxelGrid& g = f.grid();
    GradientField out(g);
    const long nz = static_cast<long>(g.nz);
#pragma omp parallel for schedule(static)
    for (long kl = 0; kl < nz; ++kl) {
        const auto k = static_cast<std::size_t>(kl);
        for (std::size_t j = 0; j < g.ny; ++j)
            for (std::size_t i = 0; i < g.nx; ++i) {
                const float c = f.at(i, j, k);
                const std::size_t n = g.index(i, j, k);
                out.comp[0][n] = i + 1 < g.nx ? f.at(i + 1, j, k) - c : 0.0f;
                out.comp[1][n] = j + 1 < g.ny ? f.at(i, j + 1, k) - c : 0.0f;
                out.comp[2][n] = k + 1 < g.nz ? f.at(i, j, k + 1) - c : 0.0f;
            }
    }
    return out;
}

namespace detail {

// Backward difference matching the forward difference above; n is the axis length.
inline float backward_diff(float cur, float prev, std::size_t idx, std::size_t n) noexcept
{
    if (n == 1)
        return 0.0f;
    if (idx == 0)
        return cur;
    if (idx == n - 1)
        return -prev;
    return cur - prev;
}

} // namespace detail

/// Negative adjoint of gradient_op: <grad f, q> = -<f, div q>.
inline Volume divergence_op(const GradientField& q)
{
    const VoxelGrid& g = q.grid();
    Volume out(g);
    const long nz = static_cast<long>(g.nz);
#pragma omp parallel for schedule(static)
    for (long kl = 0; kl < nz; ++kl) {
        const auto k = static_cast<std::size_t>(kl);
        for (std::size_t j = 0; j < g.ny; ++j)
            for (std::size_t i = 0; i < g.nx; ++i) {
                const std::size_t n = g.index(i, j, k);
                const float dx = detail::backward_diff(q.comp[0][n], i > 0 ? q.comp[0].at(i - 1, j, k) : 0.0f, i, g.nx);
                const float dy = detail::backward_diff(q.comp[1][n], j > 0 ? q.comp[1].at(i, j - 1, k) : 0.0f, j, g.ny);
                const float dz = detail::backward_diff(q.comp[2][n], k > 0 ? q.comp[2].at(i, j, k - 1) : 0.0f, k, g.nz);
                out[n] = dx + dy + dz;
            }
    }
    return out;
}

/// Isotropic total variation: sum over voxels of |grad f|_2, differences in double.
inline double tv_seminorm(const Volume& f)
{
    const VoxelGrid& g = f.grid();
    double s = 0.0;
    for (std::size_t k = 0; k < g.nz; ++k)
        for (std::size_t j = 0; j < g.ny; ++j)
            for (std::size_t i = 0; i < g.nx; ++i) {
                const double c = f.at(i, j, k);
                const double gx = i + 1 < g.nx ? f.at(i + 1, j, k) - c : 0.0;
                const double gy = j + 1 < g.ny ? f.at(i, j + 1, k) - c : 0.0;
                const double gz = k + 1 < g.nz ? f.at(i, j, k + 1) - c : 0.0;
                s += std::sqrt(gx * gx + gy * gy + gz * gz);
            }
    return s;
}

/// KL data term sum_i [(Af)_i - p_i log max((Af)_i, eps)].
inline double kl_data_term(std::span<const float> af, std::span<const float> p, double epsilon_log = 1e-8)
{
    detail::require(af.size() == p.size(), "kl_data_term: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double a = af[i];
        const double pi = p[i];
        detail::require(pi >= 0.0, "kl_objective: projections must be non-negative");
        s += a;
        if (pi > 0.0)
            s -= pi * std::log(std::max(a, epsilon_log));
    }
    return s;
}

/// Full KL-TV objective of a candidate volume against projections p.
inline double kl_objective(const Volume& f, const ProjectionSet& p, double alpha, double epsilon_log = 1e-8)
{
    detail::require(alpha >= 0.0, "kl_objective: alpha must be >= 0");
    for (float v : p.data())
        detail::require(v >= 0.0f, "kl_objective: projections must be non-negative");
    const ProjectionSet af = forward_project(f, p.geometry());
    const double data = kl_data_term(af.data(), p.data(), epsilon_log);
    return alpha == 0.0 ? data : data + alpha * tv_seminorm(f);
}

/// Resolvent of the conjugate KL term:
/// y = (1 + yt - sqrt((yt - 1)^2 + 4 sigma p)) / 2, always < 1 when p > 0.
inline double prox_kl_dual(double y_tilde, double p, double sigma) noexcept
{
    const double d = y_tilde - 1.0;
    return 0.5 * (1.0 + y_tilde - std::sqrt(d * d + 4.0 * sigma * p));
}

inline std::vector<float> prox_kl_dual(std::span<const float> y_tilde, std::span<const float> p,
                                       std::span<const float> sigma)
{
    detail::require(y_tilde.size() == p.size() && p.size() == sigma.size(), "prox_kl_dual: size mismatch");
    std::vector<float> out(y_tilde.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = static_cast<float>(prox_kl_dual(y_tilde[i], p[i], sigma[i]));
    return out;
}

/// Per-voxel projection onto the l2 ball of radius alpha.
inline GradientField prox_tv_dual(const GradientField& q_tilde, double alpha)
{
    detail::require(alpha >= 0.0, "prox_tv_dual: alpha must be >= 0");
    GradientField q = q_tilde;
    const long n = static_cast<long>(q.comp[0].size());
#pragma omp parallel for schedule(static)
    for (long il = 0; il < n; ++il) {
        const auto i = static_cast<std::size_t>(il);
        if (alpha == 0.0) {
            q.comp[0][i] = q.comp[1][i] = q.comp[2][i] = 0.0f;
            continue;
        }
        const double gx = q.comp[0][i], gy = q.comp[1][i], gz = q.comp[2][i];
        const double scale = std::max(1.0, std::sqrt(gx * gx + gy * gy + gz * gz) / alpha);
        q.comp[0][i] = static_cast<float>(gx / scale);
        q.comp[1][i] = static_cast<float>(gy / scale);
        q.comp[2][i] = static_cast<float>(gz / scale);
    }
    return q;
}

struct Preconditioners {
    std::vector<float> sigma_data; // per ray
    float sigma_grad = 0.5f;       // per gradient component
    Volume tau;                    // per voxel
};

/// Diagonal steps from absolute row/column sums of the stacked operator [A; grad].
inline Preconditioners compute_preconditioners(const ConeBeamGeometry& geom, const VoxelGrid& grid)
{
    constexpr double kEps = 1e-12;
    const OperatorSums sums = operator_row_col_sums(geom, grid);
    Preconditioners pc;
    pc.sigma_data.resize(sums.row_sums.size());
    for (std::size_t i = 0; i < pc.sigma_data.size(); ++i)
        pc.sigma_data[i] = static_cast<float>(1.0 / std::max(static_cast<double>(sums.row_sums[i]), kEps));
    pc.sigma_grad = 0.5f;
    pc.tau = Volume(grid);
    for (std::size_t n = 0; n < grid.size(); ++n)
        pc.tau[n] = static_cast<float>(1.0 / std::max(static_cast<double>(sums.col_sums[n]) + 6.0, kEps));
    return pc;
}

struct KltvParams {
    double alpha = 0.05;
    std::size_t n_iter = 500;
    double epsilon_log = 1e-8;
    double theta = 1.0;

    void validate() const
    {
        detail::require(alpha >= 0.0, "KltvParams: alpha must be >= 0");
        detail::require(n_iter >= 1, "KltvParams: n_iter must be >= 1");
        detail::require(epsilon_log > 0.0, "KltvParams: epsilon_log must be > 0");
        detail::require(theta >= 0.0 && theta <= 1.0, "KltvParams: theta must lie in [0, 1]");
    }
};

/// Primal/dual iterates of the preconditioned solver.
struct KltvState {
    Volume f;
    Volume f_bar;
    std::vector<float> y;
    GradientField q;
    Preconditioners steps;
};

struct ObjectiveSample {
    std::size_t iteration = 0;
    double objective = 0.0;
};

struct KltvResult {
    Volume f;
    std::vector<ObjectiveSample> history;
};

/// Called after every iteration with the 1-based iteration count.
using KltvObserver = std::function<void(std::size_t, const KltvState&)>;

/// Preconditioned primal-dual minimisation of
///   sum_i [(Af)_i - p_i log (Af)_i] + alpha * || |grad f| ||_1,  f >= 0.
/// The objective is sampled every 10 iterations (and at the last one).
inline KltvResult kltv_reconstruct(const ProjectionSet& p, const VoxelGrid& grid, const KltvParams& params = {},
                                   const std::optional<Volume>& init = std::nullopt,
                                   const KltvObserver& on_iter = {})
{
    params.validate();
    detail::require(p.domain() == DomainTag::LineIntegral, "kltv_reconstruct: expects line integrals");
    for (float v : p.data())
        detail::require(v >= 0.0f && std::isfinite(v), "kltv_reconstruct: projections must be finite and >= 0");
    const ConeBeamGeometry& geom = p.geometry();

    KltvState st;
    if (init) {
        detail::require(init->grid() == grid, "kltv_reconstruct: initial volume is on a different grid");
        st.f = *init;
        for (float& v : st.f.data())
            v = std::max(v, 0.0f);
    } else {
        st.f = Volume(grid);
    }
    st.f_bar = st.f;
    st.y.assign(geom.n_pixels(), 0.0f);
    st.q = GradientField(grid);
    st.steps = compute_preconditioners(geom, grid);

    const std::span<const float> pd = p.data();
    const std::size_t n_rays = st.y.size();
    const std::size_t n_vox = grid.size();
    const float theta = static_cast<float>(params.theta);

    KltvResult result;
    for (std::size_t it = 1; it <= params.n_iter; ++it) {
        // Data dual.
        const ProjectionSet af_bar = forward_project(st.f_bar, geom);
        {
            const long n = static_cast<long>(n_rays);
#pragma omp parallel for schedule(static)
            for (long il = 0; il < n; ++il) {
                const auto i = static_cast<std::size_t>(il);
                const double s = st.steps.sigma_data[i];
                st.y[i] = static_cast<float>(prox_kl_dual(st.y[i] + s * af_bar[i], pd[i], s));
            }
        }
        // Gradient dual.
        {
            const GradientField gf = gradient_op(st.f_bar);
            for (int c = 0; c < 3; ++c)
                for (std::size_t n = 0; n < n_vox; ++n)
                    st.q.comp[c][n] += st.steps.sigma_grad * gf.comp[c][n];
            st.q = prox_tv_dual(st.q, params.alpha);
        }
        // Primal.
        const Volume aty = back_project(ProjectionSet(geom, DomainTag::LineIntegral, st.y), geom, grid);
        const Volume divq = divergence_op(st.q);
        long bad = 0;
        {
            const long n = static_cast<long>(n_vox);
#pragma omp parallel for schedule(static) reduction(+ : bad)
            for (long il = 0; il < n; ++il) {
                const auto i = static_cast<std::size_t>(il);
                const float old = st.f[i];
                const float raw = old - st.steps.tau[i] * (aty[i] - divq[i]);
                if (!std::isfinite(raw))
                    ++bad;
                const float upd = std::max(0.0f, raw);
                st.f[i] = upd;
                st.f_bar[i] = upd + theta * (upd - old);
            }
        }
        if (bad != 0)
            throw NumericError("kltv_reconstruct: non-finite primal iterate at iteration " + std::to_string(it) +
                               " (" + std::to_string(bad) + " voxels)");

        if (it % 10 == 0 || it == params.n_iter)
            result.history.push_back({it, kl_objective(st.f, p, params.alpha, params.epsilon_log)});
        if (on_iter)
            on_iter(it, st);
    }
    result.f = std::move(st.f);
    return result;
}

} // namespace cbct
