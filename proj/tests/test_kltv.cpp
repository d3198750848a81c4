#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "cbct/fdk.hpp"
#include "cbct/kltv.hpp"
#include "cbct/metrics.hpp"
#include "cbct/phantom.hpp"
#include "cbct/subsample.hpp"
#include "oracles/kl_prox.hpp"
#include "oracles/siddon.hpp"
#include "test_util.hpp"

using namespace cbct;

namespace {

double field_dot(const GradientField& a, const GradientField& b)
{
    double s = 0.0;
    for (int c = 0; c < 3; ++c)
        s += testutil::dot(a.comp[c].data(), b.comp[c].data());
    return s;
}

GradientField random_field(const VoxelGrid& g, std::uint64_t seed, float lo = -1.0f, float hi = 1.0f)
{
    GradientField q;
    for (int c = 0; c < 3; ++c)
        q.comp[c] = testutil::random_volume(g, seed + c, lo, hi);
    return q;
}

// Brute-force objective: explicit loops over rays and voxels.
double objective_oracle(const Volume& f, const ProjectionSet& p, double alpha, double eps)
{
    const ProjectionSet af = forward_project(f, p.geometry());
    long double data = 0.0L;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const long double a = af[i];
        data += a;
        if (p[i] > 0.0f)
            data -= static_cast<long double>(p[i]) * std::log(std::max(a, static_cast<long double>(eps)));
    }
    const VoxelGrid& g = f.grid();
    long double tv = 0.0L;
    for (std::size_t k = 0; k < g.nz; ++k)
        for (std::size_t j = 0; j < g.ny; ++j)
            for (std::size_t i = 0; i < g.nx; ++i) {
                const long double c = f.at(i, j, k);
                const long double dx = i + 1 < g.nx ? f.at(i + 1, j, k) - c : 0.0L;
                const long double dy = j + 1 < g.ny ? f.at(i, j + 1, k) - c : 0.0L;
                const long double dz = k + 1 < g.nz ? f.at(i, j, k + 1) - c : 0.0L;
                tv += std::sqrt(dx * dx + dy * dy + dz * dz);
            }
    return static_cast<double>(data + alpha * tv);
}

} // namespace

TEST(Gradient, ConstantVolumeHasZeroGradient)
{
    const GradientField g = gradient_op(Volume(cubic_grid(5), 2.5f));
    for (int c = 0; c < 3; ++c)
        for (float v : g.comp[c].data())
            ASSERT_EQ(v, 0.0f);
}

TEST(Gradient, LinearRampInX)
{
    const VoxelGrid grid{6, 4, 3, 0.3, {}};
    Volume f(grid);
    for (std::size_t k = 0; k < 3; ++k)
        for (std::size_t j = 0; j < 4; ++j)
            for (std::size_t i = 0; i < 6; ++i)
                f.at(i, j, k) = static_cast<float>(i);
    const GradientField g = gradient_op(f);
    for (std::size_t k = 0; k < 3; ++k)
        for (std::size_t j = 0; j < 4; ++j)
            for (std::size_t i = 0; i < 6; ++i) {
                EXPECT_EQ(g.comp[0].at(i, j, k), i + 1 < 6 ? 1.0f : 0.0f);
                EXPECT_EQ(g.comp[1].at(i, j, k), 0.0f);
                EXPECT_EQ(g.comp[2].at(i, j, k), 0.0f);
            }
}

TEST(Divergence, TransposedExamples)
{
    const VoxelGrid grid{5, 1, 1, 0.3, {}};
    GradientField q(grid);
    for (std::size_t i = 0; i < 5; ++i)
        q.comp[0][i] = 1.0f;
    const Volume d = divergence_op(q);
    // -grad^T of the constant field 1 (last slab ignored by the gradient).
    EXPECT_EQ(d[0], 1.0f);
    EXPECT_EQ(d[1], 0.0f);
    EXPECT_EQ(d[3], 0.0f);
    EXPECT_EQ(d[4], -1.0f);
    EXPECT_EQ(divergence_op(GradientField(cubic_grid(4)))[7], 0.0f);
}

TEST(Divergence, NegativeAdjointOfGradient)
{
    for (const VoxelGrid& g : {cubic_grid(9), VoxelGrid{7, 1, 5, 0.3, {}}, VoxelGrid{1, 1, 1, 0.3, {}}}) {
        const Volume f = testutil::random_volume(g, 17);
        const GradientField q = random_field(g, 23);
        const GradientField gf = gradient_op(f);
        const Volume dq = divergence_op(q);
        const double a = field_dot(gf, q);
        const double b = testutil::dot(f.data(), dq.data());
        const double scale = std::sqrt(field_dot(gf, gf) * field_dot(q, q)) + 1e-30;
        EXPECT_LT(std::abs(a + b) / scale, 1e-5);
    }
}

TEST(KlObjective, OnesGiveRayCount)
{
    const std::vector<float> ones(37, 1.0f);
    EXPECT_DOUBLE_EQ(kl_data_term(ones, ones), 37.0);
    EXPECT_EQ(tv_seminorm(Volume(cubic_grid(4), 0.7f)), 0.0);
}

TEST(KlObjective, MatchesBruteForce)
{
    const VoxelGrid grid = cubic_grid(8);
    const ConeBeamGeometry g = testutil::covering_geometry(5, 8);
    const Volume f = testutil::random_volume(grid, 3, 0.0f, 0.1f);
    ProjectionSet p = testutil::random_projections(g, 4, 0.0f, 2.0f);
    p[0] = 0.0f;
    for (double alpha : {0.0, 0.05, 1.3}) {
        const double expected = objective_oracle(f, p, alpha, 1e-8);
        EXPECT_NEAR(kl_objective(f, p, alpha), expected, 1e-10 * std::abs(expected));
    }
    const ProjectionSet af = forward_project(f, g);
    EXPECT_EQ(kl_objective(f, p, 0.0), kl_data_term(af.data(), p.data()));
    p[3] = -0.5f;
    EXPECT_THROW(kl_objective(f, p, 0.05), InvalidArgument);
}

TEST(KlProx, ReferenceCases)
{
    EXPECT_DOUBLE_EQ(prox_kl_dual(0.3, 0.0, 2.0), 0.3);
    EXPECT_DOUBLE_EQ(prox_kl_dual(4.0, 0.0, 2.0), 1.0);
    EXPECT_DOUBLE_EQ(prox_kl_dual(1.0, 1.0, 1.0), 0.0);
    EXPECT_DOUBLE_EQ(prox_kl_dual(1.0, 0.5, 2.0), 0.0);
}

TEST(KlProx, MatchesGridSearch)
{
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> yt(-3.0, 3.0), sig(0.01, 5.0), pp(0.0, 4.0);
    for (int t = 0; t < 200; ++t) {
        const double y = yt(rng), s = sig(rng), p = pp(rng);
        const double closed = prox_kl_dual(y, p, s);
        EXPECT_LT(closed, 1.0);
        EXPECT_NEAR(closed, oracle::kl_prox_grid_search(y, p, s), 1e-4) << y << " " << p << " " << s;
    }
}

TEST(KlProx, VectorFormMatchesScalar)
{
    const std::vector<float> y{0.5f, 2.0f, -1.0f}, p{1.0f, 0.0f, 3.0f}, s{0.5f, 1.0f, 2.0f};
    const std::vector<float> out = prox_kl_dual(y, p, s);
    for (std::size_t i = 0; i < 3; ++i)
        EXPECT_FLOAT_EQ(out[i], static_cast<float>(prox_kl_dual(y[i], p[i], s[i])));
}

TEST(TvProx, ProjectsOntoBall)
{
    const VoxelGrid grid = cubic_grid(6);
    const double alpha = 0.3;
    GradientField inside = random_field(grid, 5, -0.1f, 0.1f);
    const GradientField same = prox_tv_dual(inside, alpha);
    for (int c = 0; c < 3; ++c)
        EXPECT_EQ(same.comp[c].storage(), inside.comp[c].storage());

    GradientField one(cubic_grid(1));
    one.comp[0][0] = static_cast<float>(2 * alpha);
    const GradientField r = prox_tv_dual(one, alpha);
    EXPECT_FLOAT_EQ(r.comp[0][0], static_cast<float>(alpha));
    EXPECT_EQ(r.comp[1][0], 0.0f);

    const GradientField big = prox_tv_dual(random_field(grid, 8, -5.0f, 5.0f), alpha);
    for (std::size_t n = 0; n < grid.size(); ++n) {
        const double m = std::hypot(big.comp[0][n], big.comp[1][n], big.comp[2][n]);
        ASSERT_LE(m, alpha * (1.0 + 1e-6));
    }
    const GradientField zero = prox_tv_dual(random_field(grid, 8), 0.0);
    for (int c = 0; c < 3; ++c)
        for (float v : zero.comp[c].data())
            ASSERT_EQ(v, 0.0f);
}

TEST(Preconditioners, OneVoxelOneRay)
{
    const VoxelGrid grid = cubic_grid(1, 2.0);
    ConeBeamGeometry g = make_circular_geometry(2, kTwoPi, 60.0, 120.0, DetectorSpec{1, 1, 1.0, 1.0});
    g.angles = {0.4};
    const Preconditioners pc = compute_preconditioners(g, grid);
    const detail::ViewFrame f = detail::view_frame(g, 0.4);
    const double len = oracle::total_length(oracle::siddon(grid, f.source, detail::pixel_position(g, f, 0, 0)));
    ASSERT_EQ(pc.sigma_data.size(), 1u);
    EXPECT_NEAR(pc.sigma_data[0], 1.0 / len, 1e-3 / len);
    EXPECT_NEAR(pc.tau[0], 1.0 / (len + 6.0), 1e-3 / (len + 6.0));
    EXPECT_EQ(pc.sigma_grad, 0.5f);
}

TEST(Preconditioners, MissingRayIsGuardedAndAllPositive)
{
    const VoxelGrid grid = cubic_grid(4, 0.3);
    const ConeBeamGeometry g = make_circular_geometry(3, kTwoPi, 60.0, 120.0, DetectorSpec{5, 41, 1.0, 1.0});
    const Preconditioners pc = compute_preconditioners(g, grid);
    EXPECT_FLOAT_EQ(pc.sigma_data[0], 1e12f);
    for (float s : pc.sigma_data) {
        ASSERT_GT(s, 0.0f);
        ASSERT_TRUE(std::isfinite(s));
    }
    for (float t : pc.tau.data())
        ASSERT_GT(t, 0.0f);
}

TEST(Kltv, IterateInvariantsAndObjectiveTrend)
{
    const VoxelGrid grid = cubic_grid(12);
    const ConeBeamGeometry g = testutil::covering_geometry(12, 12);
    const auto [desc, truth] = uniform_ball(grid, 1.2, 0.05);
    const ProjectionSet p = analytic_project(desc, g);
    KltvParams params;
    params.n_iter = 60;
    std::size_t calls = 0;
    const KltvResult r = kltv_reconstruct(p, grid, params, std::nullopt, [&](std::size_t it, const KltvState& st) {
        ++calls;
        EXPECT_EQ(it, calls);
        for (float v : st.f.data())
            ASSERT_GE(v, 0.0f);
        for (float y : st.y)
            ASSERT_LE(y, 1.0f);
        for (std::size_t n = 0; n < grid.size(); ++n)
            ASSERT_LE(std::hypot(st.q.comp[0][n], st.q.comp[1][n], st.q.comp[2][n]), params.alpha * (1.0 + 1e-5));
    });
    EXPECT_EQ(calls, 60u);
    ASSERT_EQ(r.history.size(), 6u);
    EXPECT_EQ(r.history.front().iteration, 10u);
    EXPECT_EQ(r.history.back().iteration, 60u);
    EXPECT_LT(r.history.back().objective, r.history.front().objective);
}

TEST(Kltv, Deterministic)
{
    const VoxelGrid grid = cubic_grid(10);
    const ConeBeamGeometry g = testutil::covering_geometry(8, 10);
    const auto [desc, truth] = uniform_ball(grid, 1.0, 0.05);
    const ProjectionSet p = analytic_project(desc, g);
    KltvParams params;
    params.n_iter = 15;
    const KltvResult a = kltv_reconstruct(p, grid, params);
    const KltvResult b = kltv_reconstruct(p, grid, params);
    EXPECT_EQ(a.f.storage(), b.f.storage());
    ASSERT_EQ(a.history.size(), b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i)
        EXPECT_EQ(a.history[i].objective, b.history[i].objective);
}

TEST(Kltv, NonFiniteIterateAborts)
{
    const VoxelGrid grid = cubic_grid(6);
    const ConeBeamGeometry g = testutil::covering_geometry(4, 6);
    const ProjectionSet p(g, DomainTag::LineIntegral, 0.5f);
    Volume init(grid, 0.01f);
    init[20] = std::numeric_limits<float>::quiet_NaN();
    KltvParams params;
    params.n_iter = 3;
    EXPECT_THROW(kltv_reconstruct(p, grid, params, init), NumericError);
}

TEST(Kltv, RejectsBadInputs)
{
    const VoxelGrid grid = cubic_grid(6);
    const ConeBeamGeometry g = testutil::covering_geometry(4, 6);
    ProjectionSet p(g, DomainTag::LineIntegral, 0.5f);
    KltvParams params;
    params.n_iter = 0;
    EXPECT_THROW(kltv_reconstruct(p, grid, params), InvalidArgument);
    params.n_iter = 2;
    params.alpha = -1.0;
    EXPECT_THROW(kltv_reconstruct(p, grid, params), InvalidArgument);
    params.alpha = 0.05;
    p[0] = -1.0f;
    EXPECT_THROW(kltv_reconstruct(p, grid, params), InvalidArgument);
    EXPECT_THROW(kltv_reconstruct(ProjectionSet(g, DomainTag::Counts, 3.0f), grid, params), InvalidArgument);
}

TEST(Kltv, UnregularisedDataTermBeatsFdk)
{
    const VoxelGrid grid = cubic_grid(12);
    const ConeBeamGeometry g = testutil::covering_geometry(16, 12);
    const auto [desc, truth] = uniform_ball(grid, 1.3, 0.05);
    const ProjectionSet p = forward_project(truth, g);
    KltvParams params;
    params.alpha = 0.0;
    params.n_iter = 150;
    const KltvResult r = kltv_reconstruct(p, grid, params);
    Volume fdk = fdk_reconstruct(p, grid);
    for (float& v : fdk.data())
        v = std::max(v, 0.0f);
    EXPECT_LE(kl_objective(r.f, p, 0.0), kl_objective(fdk, p, 0.0));
}

TEST(Kltv, BeatsFdkOnSparseConstantVolume)
{
    const VoxelGrid grid = cubic_grid(16);
    const Volume truth(grid, 0.04f);
    const ConeBeamGeometry g = testutil::covering_geometry(40, 16);
    const ProjectionSet sparse = subsample_views(forward_project(truth, g), 5);
    KltvParams params;
    params.n_iter = 100;
    const KltvResult r = kltv_reconstruct(sparse, grid, params);
    const Volume fdk = fdk_reconstruct(sparse, grid);
    EXPECT_LT(nrmse(r.f, truth), nrmse(fdk, truth));
}
