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

#include <fftw3.h>
#include <omp.h>

#include <cmath>
#include <complex>
#include <cstddef>
#include <memory>
#include <mutex>
#include <vector>

#include "cbct/error.hpp"
#include "cbct/geometry.hpp"
#include "cbct/volume.hpp"

namespace cbct {

enum class FilterKind { RamLak, Hann };
enum class ShortScanWeighting { Auto, Off };

struct FdkOptions {
    FilterKind filter_kind = FilterKind::RamLak;
    /// FFT length; 0 selects the smallest power of two >= 2 * n_cols.
    std::size_t pad_to = 0;
    ShortScanWeighting short_scan_weighting = ShortScanWeighting::Auto;
};

namespace detail {

inline bool is_power_of_two(std::size_t n) noexcept { return n != 0 && (n & (n - 1)) == 0; }

inline std::size_t resolve_pad(std::size_t pad_to, std::size_t n_cols)
{
    if (pad_to == 0) {
        std::size_t p = 1;
        while (p < 2 * n_cols)
            p <<= 1;
        return p;
    }
    require(is_power_of_two(pad_to), "FdkOptions: pad_to must be a power of two");
    require(pad_to >= 2 * n_cols, "FdkOptions: pad_to must be >= 2 * n_cols");
    return pad_to;
}

// The FFTW planner is not re-entrant; execution on distinct buffers is.
inline std::mutex& fftw_planner_mutex()
{
    static std::mutex m;
    return m;
}

struct FftwFree {
    void operator()(void* p) const noexcept { fftw_free(p); }
};
using RealBuffer = std::unique_ptr<double[], FftwFree>;
using ComplexBuffer = std::unique_ptr<fftw_complex[], FftwFree>;

inline RealBuffer alloc_real(std::size_t n) { return RealBuffer(fftw_alloc_real(n)); }
inline ComplexBuffer alloc_complex(std::size_t n) { return ComplexBuffer(fftw_alloc_complex(n)); }

/// Forward/inverse real FFT pair of a fixed length.
class RealFftPair {
public:
    explicit RealFftPair(std::size_t n) : n_(n)
    {
        RealBuffer r = alloc_real(n);
        ComplexBuffer c = alloc_complex(n / 2 + 1);
        std::lock_guard lock(fftw_planner_mutex());
        fwd_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), r.get(), c.get(), FFTW_ESTIMATE);
        inv_ = fftw_plan_dft_c2r_1d(static_cast<int>(n), c.get(), r.get(), FFTW_ESTIMATE);
        if (fwd_ == nullptr || inv_ == nullptr)
            throw NumericError("FFTW planning failed");
    }
    RealFftPair(const RealFftPair&) = delete;
    RealFftPair& operator=(const RealFftPair&) = delete;
    ~RealFftPair()
    {
        std::lock_guard lock(fftw_planner_mutex());
        fftw_destroy_plan(fwd_);
        fftw_destroy_plan(inv_);
    }

    [[nodiscard]] std::size_t size() const noexcept { return n_; }
    void forward(double* in, fftw_complex* out) const noexcept { fftw_execute_dft_r2c(fwd_, in, out); }
    // c2r destroys its input.
    void inverse(fftw_complex* in, double* out) const noexcept { fftw_execute_dft_c2r(inv_, in, out); }

private:
    std::size_t n_;
    fftw_plan fwd_ = nullptr;
    fftw_plan inv_ = nullptr;
};

} // namespace detail

/// Analytic discrete Ram-Lak taps: h[0] = 1/(4 tau^2), h[even] = 0,
/// h[odd] = -1/(pi^2 n^2 tau^2).
inline double ramlak_tap(long n, double tau) noexcept
{
    if (n == 0)
        return 1.0 / (4.0 * tau * tau);
    if (n % 2 == 0)
        return 0.0;
    const double dn = static_cast<double>(n);
    return -1.0 / (kPi * kPi * dn * dn * tau * tau);
}

/// Frequency response on the rfft bins 0..pad/2: the band-limited ramp
/// |k| / (pad * tau^2), optionally Hann-apodized. This is the DFT of the
/// Ram-Lak taps periodized over the padded length, so its DC bin is zero.
inline std::vector<double> ramp_response(std::size_t pad, double tau, FilterKind kind)
{
    std::vector<double> h(pad / 2 + 1);
    const double p = static_cast<double>(pad);
    for (std::size_t k = 0; k < h.size(); ++k) {
        double r = static_cast<double>(k) / (p * tau * tau);
        if (kind == FilterKind::Hann)
            r *= 0.5 * (1.0 + std::cos(kTwoPi * static_cast<double>(k) / p));
        h[k] = r;
    }
    return h;
}

/// FDK pre-weight D / sqrt(D^2 + u^2 + v^2), D = source_to_detector.
inline ProjectionSet cosine_weight(const ProjectionSet& proj)
{
    detail::require(proj.domain() == DomainTag::LineIntegral, "cosine_weight: expects line integrals");
    const ConeBeamGeometry& g = proj.geometry();
    const double d = g.source_to_detector;
    std::vector<double> w(g.pixels_per_view());
    for (std::size_t r = 0; r < g.n_rows; ++r) {
        const double v = g.v_of_row(static_cast<double>(r));
        for (std::size_t c = 0; c < g.n_cols; ++c) {
            const double u = g.u_of_col(static_cast<double>(c));
            w[r * g.n_cols + c] = d / std::sqrt(d * d + u * u + v * v);
        }
    }
    ProjectionSet out = proj;
    std::span<float> data = out.data();
    const std::size_t per_view = g.pixels_per_view();
    const long n_views = static_cast<long>(g.n_views());
#pragma omp parallel for schedule(static)
    for (long vi = 0; vi < n_views; ++vi) {
        float* img = data.data() + static_cast<std::size_t>(vi) * per_view;
        for (std::size_t n = 0; n < per_view; ++n)
            img[n] = static_cast<float>(static_cast<double>(img[n]) * w[n]);
    }
    return out;
}

/// Parker weight of the ray at arc position beta (from the arc start) and
/// fan angle gamma, for an arc of pi + 2 delta.
inline double parker_weight(double beta, double gamma, double delta) noexcept
{
    if (beta < 0.0 || beta > kPi + 2.0 * delta)
        return 0.0;
    if (beta < 2.0 * (delta - gamma)) {
        const double s = std::sin(0.25 * kPi * beta / (delta - gamma));
        return s * s;
    }
    if (beta <= kPi - 2.0 * gamma)
        return 1.0;
    const double s = std::sin(0.25 * kPi * (kPi + 2.0 * delta - beta) / (delta + gamma));
    return s * s;
}

/// Per-(view, column) short-scan redundancy weights, view-major.
struct ParkerWeights {
    std::size_t n_views = 0;
    std::size_t n_cols = 0;
    std::vector<double> w;

    [[nodiscard]] double at(std::size_t view, std::size_t col) const noexcept { return w[view * n_cols + col]; }
};

/// Parker weights for a short-scan geometry. The overlap half-width is
/// (arc_span - pi) / 2, which equals the fan half angle for a minimal arc.
inline ParkerWeights parker_weights(const ConeBeamGeometry& geom)
{
    detail::require(geom.arc_kind == ArcKind::ShortScan, "parker_weights: geometry is not a short scan");
    geom.validate();
    const double delta = 0.5 * (geom.arc_span - kPi);
    ParkerWeights pw{geom.n_views(), geom.n_cols, std::vector<double>(geom.n_views() * geom.n_cols)};
    for (std::size_t v = 0; v < geom.n_views(); ++v) {
        const double beta = geom.angles[v] - geom.angles[0];
        for (std::size_t c = 0; c < geom.n_cols; ++c) {
            const double gamma = std::atan(geom.u_of_col(static_cast<double>(c)) / geom.source_to_detector);
            pw.w[v * geom.n_cols + c] = parker_weight(beta, gamma, delta);
        }
    }
    return pw;
}

/// Row-wise convolution with the Ram-Lak kernel (pixel pitch tau = pitch_u),
/// computed by FFT over pad_to samples. Rows are extended by their edge
/// values into the padding, so a constant row is a constant period and maps
/// to zero; for projections that fall to zero at the detector edge this is
/// identical to zero padding. The output is sum_k h[n - k] p[k] (no tau
/// quadrature factor).
inline ProjectionSet ramp_filter(const ProjectionSet& proj, const FdkOptions& opts = {})
{
    detail::require(proj.domain() == DomainTag::LineIntegral, "ramp_filter: expects line integrals");
    const ConeBeamGeometry& g = proj.geometry();
    const std::size_t n_cols = g.n_cols;
    const std::size_t pad = detail::resolve_pad(opts.pad_to, n_cols);
    const std::vector<double> resp = ramp_response(pad, g.pixel_pitch_u, opts.filter_kind);
    const detail::RealFftPair fft(pad);

    ProjectionSet out = proj;
    std::span<float> data = out.data();
    const long n_lines = static_cast<long>(g.n_views() * g.n_rows);
    const std::size_t n_bins = pad / 2 + 1;
    const std::size_t tail = (pad - n_cols) / 2;
    const double inv_pad = 1.0 / static_cast<double>(pad);

#pragma omp parallel
    {
        detail::RealBuffer buf = detail::alloc_real(pad);
        detail::ComplexBuffer freq = detail::alloc_complex(n_bins);
#pragma omp for schedule(static)
        for (long line = 0; line < n_lines; ++line) {
            float* row = data.data() + static_cast<std::size_t>(line) * n_cols;
            for (std::size_t c = 0; c < n_cols; ++c)
                buf[c] = row[c];
            for (std::size_t c = n_cols; c < n_cols + tail; ++c)
                buf[c] = row[n_cols - 1];
            for (std::size_t c = n_cols + tail; c < pad; ++c)
                buf[c] = row[0];
            fft.forward(buf.get(), freq.get());
            for (std::size_t k = 0; k < n_bins; ++k) {
                freq[k][0] *= resp[k];
                freq[k][1] *= resp[k];
            }
            fft.inverse(freq.get(), buf.get());
            for (std::size_t c = 0; c < n_cols; ++c)
                row[c] = static_cast<float>(buf[c] * inv_pad);
        }
    }
    return out;
}

namespace detail {

inline double bilinear(std::span<const float> img, std::size_t n_rows, std::size_t n_cols, double row,
                       double col) noexcept
{
    const double r0f = std::floor(row);
    const double c0f = std::floor(col);
    const long r0 = static_cast<long>(r0f);
    const long c0 = static_cast<long>(c0f);
    const double fr = row - r0f;
    const double fc = col - c0f;
    const long nr = static_cast<long>(n_rows);
    const long nc = static_cast<long>(n_cols);
    if (r0 < -1 || r0 >= nr || c0 < -1 || c0 >= nc)
        return 0.0;
    auto px = [&](long r, long c) -> double {
        if (r < 0 || r >= nr || c < 0 || c >= nc)
            return 0.0;
        return img[static_cast<std::size_t>(r * nc + c)];
    };
    return (1.0 - fr) * ((1.0 - fc) * px(r0, c0) + fc * px(r0, c0 + 1)) +
           fr * ((1.0 - fc) * px(r0 + 1, c0) + fc * px(r0 + 1, c0 + 1));
}

} // namespace detail

/// FDK reconstruction of a circular cone-beam scan (flat detector).
///
/// Pipeline: Parker weights (short scans, unless disabled), cosine weight,
/// ramp filter along detector rows, then voxel-driven back-projection with
/// the distance weight sid^2 / U^2, U = sid - x . s_hat. Filtering happens at
/// the detector pitch, so the result carries the magnification factor
/// sdd / sid that maps it back to the isocentre. Output in mm^-1.
inline Volume fdk_reconstruct(const ProjectionSet& proj, const VoxelGrid& grid, const FdkOptions& opts = {})
{
    detail::require(proj.domain() == DomainTag::LineIntegral, "fdk_reconstruct: expects line integrals");
    const ConeBeamGeometry& g = proj.geometry();
    g.validate();
    grid.validate();

    ProjectionSet weighted = proj;
    const bool parker = g.arc_kind == ArcKind::ShortScan && opts.short_scan_weighting == ShortScanWeighting::Auto;
    if (parker) {
        const ParkerWeights pw = parker_weights(g);
        for (std::size_t v = 0; v < g.n_views(); ++v)
            for (std::size_t r = 0; r < g.n_rows; ++r)
                for (std::size_t c = 0; c < g.n_cols; ++c)
                    weighted.at(v, r, c) = static_cast<float>(weighted.at(v, r, c) * pw.at(v, c));
    }
    const ProjectionSet filtered = ramp_filter(cosine_weight(weighted), opts);

    const double sid = g.source_to_isocenter;
    const double sdd = g.source_to_detector;
    const double d_beta = g.arc_span / static_cast<double>(g.n_views());
    const double scan_factor = parker ? 1.0 : 0.5;
    // tau from the discrete convolution, magnification from filtering at the detector.
    const double scale = scan_factor * d_beta * g.pixel_pitch_u * g.magnification() * sid * sid;

    std::vector<double> cos_b(g.n_views());
    std::vector<double> sin_b(g.n_views());
    for (std::size_t v = 0; v < g.n_views(); ++v) {
        cos_b[v] = std::cos(g.angles[v]);
        sin_b[v] = std::sin(g.angles[v]);
    }

    Volume out(grid);
    std::span<float> f = out.data();
    const long nz = static_cast<long>(grid.nz);
    const std::size_t per_view = g.pixels_per_view();

#pragma omp parallel for schedule(static)
    for (long k = 0; k < nz; ++k) {
        for (std::size_t j = 0; j < grid.ny; ++j) {
            for (std::size_t i = 0; i < grid.nx; ++i) {
                const auto x = grid.center_of(i, j, static_cast<std::size_t>(k));
                double acc = 0.0;
                for (std::size_t v = 0; v < g.n_views(); ++v) {
                    const double along = x[0] * cos_b[v] + x[1] * sin_b[v];
                    const double across = x[0] * sin_b[v] - x[1] * cos_b[v];
                    const double u_dist = sid - along;
                    const double mag = sdd / u_dist;
                    const double col = g.col_of_u(across * mag);
                    const double row = g.row_of_v(x[2] * mag);
                    const double q = detail::bilinear(filtered.data().subspan(v * per_view, per_view), g.n_rows,
                                                      g.n_cols, row, col);
                    acc += q / (u_dist * u_dist);
                }
                f[grid.index(i, j, static_cast<std::size_t>(k))] = static_cast<float>(acc * scale);
            }
        }
    }
    return out;
}

} // namespace cbct
