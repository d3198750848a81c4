#include <gtest/gtest.h>

#include <cmath>
#include <omp.h>

#include "cbct/projector.hpp"
#include "oracles/siddon.hpp"
#include "test_util.hpp"

using namespace cbct;

namespace {

ConeBeamGeometry single_view(double angle, std::size_t rows, std::size_t cols, double pitch)
{
    ConeBeamGeometry g = make_circular_geometry(2, kTwoPi, 60.0, 120.0, DetectorSpec{rows, cols, pitch, pitch});
    g.angles = {angle};
    g.validate();
    return g;
}

} // namespace

TEST(Projector, ZeroVolumeGivesZeroProjections)
{
    const VoxelGrid grid = cubic_grid(8);
    const ConeBeamGeometry g = testutil::covering_geometry(6, 8);
    const ProjectionSet p = forward_project(Volume(grid), g);
    for (float v : p.data())
        ASSERT_EQ(v, 0.0f);
    EXPECT_EQ(p.domain(), DomainTag::LineIntegral);
}

TEST(Projector, SingleVoxelMatchesSiddon)
{
    const VoxelGrid grid = cubic_grid(1, 2.0);
    const Volume vol(grid, 1.0f);
    for (double angle : {0.0, 0.3, 0.7853981633974483, 1.9, 4.0}) {
        const ConeBeamGeometry g = single_view(angle, 3, 3, 0.5);
        const ProjectionSet p = forward_project(vol, g);
        const detail::ViewFrame f = detail::view_frame(g, angle);
        const double expected = oracle::total_length(oracle::siddon(grid, f.source, detail::pixel_position(g, f, 1, 1)));
        ASSERT_GT(expected, 0.0);
        EXPECT_NEAR(p.at(0, 1, 1), expected, 1e-3 * expected) << "angle " << angle;
    }
}

TEST(Projector, UniformCubeAxialChord)
{
    const VoxelGrid grid = cubic_grid(64, 0.3);
    const Volume vol(grid, 1.0f);
    const ConeBeamGeometry g = single_view(0.0, 3, 3, 0.3);
    const ProjectionSet p = forward_project(vol, g);
    EXPECT_NEAR(p.at(0, 1, 1), 19.2, 19.2e-2);
}

TEST(Projector, BackProjectionOfZeroIsZero)
{
    const VoxelGrid grid = cubic_grid(8);
    const ConeBeamGeometry g = testutil::covering_geometry(6, 8);
    const Volume v = back_project(ProjectionSet(g, DomainTag::LineIntegral), g, grid);
    for (float x : v.data())
        ASSERT_EQ(x, 0.0f);
}

TEST(Projector, AdjointIdentity)
{
    const VoxelGrid grid = cubic_grid(12);
    const ConeBeamGeometry g = testutil::covering_geometry(9, 12);
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const Volume x = testutil::random_volume(grid, seed);
        const ProjectionSet y = testutil::random_projections(g, seed + 100);
        const ProjectionSet ax = forward_project(x, g);
        const Volume aty = back_project(y, g, grid);
        const double lhs = testutil::dot(ax.data(), y.data());
        const double rhs = testutil::dot(x.data(), aty.data());
        EXPECT_LT(std::abs(lhs - rhs) / (testutil::norm(ax.data()) * testutil::norm(y.data())), 1e-4);
    }
}

TEST(Projector, SinglePixelBackProjectionStaysOnRay)
{
    const VoxelGrid grid = cubic_grid(16);
    const ConeBeamGeometry g = testutil::covering_geometry(4, 16);
    ProjectionSet y(g, DomainTag::LineIntegral);
    const std::size_t view = 1, row = 5, col = 9;
    y.at(view, row, col) = 1.0f;
    const Volume v = back_project(y, g, grid);

    const detail::ViewFrame f = detail::view_frame(g, g.angles[view]);
    const auto a = f.source;
    const auto b = detail::pixel_position(g, f, row, col);
    const std::array<double, 3> d{b[0] - a[0], b[1] - a[1], b[2] - a[2]};
    const double dn = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
    std::size_t nonzero = 0;
    for (std::size_t k = 0; k < grid.nz; ++k)
        for (std::size_t j = 0; j < grid.ny; ++j)
            for (std::size_t i = 0; i < grid.nx; ++i) {
                if (v.at(i, j, k) == 0.0f)
                    continue;
                ++nonzero;
                const auto c = grid.center_of(i, j, k);
                const std::array<double, 3> w{c[0] - a[0], c[1] - a[1], c[2] - a[2]};
                const std::array<double, 3> x{w[1] * d[2] - w[2] * d[1], w[2] * d[0] - w[0] * d[2],
                                              w[0] * d[1] - w[1] * d[0]};
                const double dist = std::sqrt(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) / dn;
                EXPECT_LT(dist, std::sqrt(2.0) * grid.voxel_size);
            }
    EXPECT_GT(nonzero, 0u);
}

TEST(Projector, RowColumnSumsOneVoxel)
{
    const VoxelGrid grid = cubic_grid(1, 2.0);
    const ConeBeamGeometry g = make_circular_geometry(4, kTwoPi, 60.0, 120.0, DetectorSpec{3, 3, 1.0, 1.0});
    const OperatorSums s = operator_row_col_sums(g, grid);
    double total = 0.0;
    for (std::size_t v = 0; v < g.n_views(); ++v) {
        const detail::ViewFrame f = detail::view_frame(g, g.angles[v]);
        for (std::size_t r = 0; r < g.n_rows; ++r)
            for (std::size_t c = 0; c < g.n_cols; ++c) {
                total += s.row_sums.at(v, r, c);
                if (r == 1 && c == 1) {
                    const double len =
                        oracle::total_length(oracle::siddon(grid, f.source, detail::pixel_position(g, f, r, c)));
                    EXPECT_NEAR(s.row_sums.at(v, r, c), len, 1e-3 * len);
                }
            }
    }
    EXPECT_NEAR(s.col_sums[0], total, 1e-5 * total);
}

TEST(Projector, MissingRayHasZeroRowSum)
{
    const VoxelGrid grid = cubic_grid(4, 0.3);
    const ConeBeamGeometry g = make_circular_geometry(3, kTwoPi, 60.0, 120.0, DetectorSpec{5, 41, 1.0, 1.0});
    const OperatorSums s = operator_row_col_sums(g, grid);
    for (std::size_t v = 0; v < g.n_views(); ++v) {
        EXPECT_EQ(s.row_sums.at(v, 0, 0), 0.0f);
        EXPECT_EQ(s.row_sums.at(v, 2, 40), 0.0f);
        EXPECT_GT(s.row_sums.at(v, 2, 20), 0.0f);
    }
}

TEST(Projector, InteriorColumnSumsPositive)
{
    const VoxelGrid grid = cubic_grid(10);
    const ConeBeamGeometry g = testutil::covering_geometry(8, 10);
    const OperatorSums s = operator_row_col_sums(g, grid);
    for (std::size_t k = 1; k + 1 < grid.nz; ++k)
        for (std::size_t j = 1; j + 1 < grid.ny; ++j)
            for (std::size_t i = 1; i + 1 < grid.nx; ++i)
                ASSERT_GT(s.col_sums.at(i, j, k), 0.0f);
    for (float r : s.row_sums.data())
        ASSERT_GE(r, 0.0f);
}

TEST(Projector, Linearity)
{
    const VoxelGrid grid = cubic_grid(10);
    const ConeBeamGeometry g = testutil::covering_geometry(7, 10);
    const Volume x = testutil::random_volume(grid, 5);
    const Volume y = testutil::random_volume(grid, 6);
    Volume z(grid);
    for (std::size_t n = 0; n < z.size(); ++n)
        z[n] = 2.5f * x[n] - 0.75f * y[n];
    const ProjectionSet ax = forward_project(x, g);
    const ProjectionSet ay = forward_project(y, g);
    const ProjectionSet az = forward_project(z, g);
    double err = 0.0, ref = 0.0;
    for (std::size_t n = 0; n < az.size(); ++n) {
        const double combo = 2.5 * ax[n] - 0.75 * ay[n];
        err += (az[n] - combo) * (az[n] - combo);
        ref += combo * combo;
    }
    EXPECT_LT(std::sqrt(err / ref), 1e-6);
}

TEST(Projector, NonnegativeInNonnegativeOut)
{
    const VoxelGrid grid = cubic_grid(10);
    const ConeBeamGeometry g = testutil::covering_geometry(7, 10);
    const ProjectionSet p = forward_project(testutil::random_volume(grid, 9, 0.0f, 1.0f), g);
    for (float v : p.data())
        ASSERT_GE(v, 0.0f);
}

TEST(Projector, Deterministic)
{
    const VoxelGrid grid = cubic_grid(12);
    const ConeBeamGeometry g = testutil::covering_geometry(8, 12);
    const Volume x = testutil::random_volume(grid, 11);
    const ProjectionSet y = testutil::random_projections(g, 12);
    EXPECT_EQ(forward_project(x, g).storage(), forward_project(x, g).storage());
    EXPECT_EQ(back_project(y, g, grid).storage(), back_project(y, g, grid).storage());

    const int saved = omp_get_max_threads();
    omp_set_num_threads(1);
    const Volume b1 = back_project(y, g, grid);
    omp_set_num_threads(2);
    const Volume b2 = back_project(y, g, grid);
    omp_set_num_threads(saved);
    double err = 0.0, ref = 0.0;
    for (std::size_t n = 0; n < b1.size(); ++n) {
        err += (double(b1[n]) - b2[n]) * (double(b1[n]) - b2[n]);
        ref += double(b1[n]) * b1[n];
    }
    EXPECT_LT(std::sqrt(err / ref), 1e-6);
}

TEST(Projector, RejectsShapeMismatchAndGridAtSource)
{
    const VoxelGrid grid = cubic_grid(8);
    const ConeBeamGeometry g = testutil::covering_geometry(6, 8);
    const ConeBeamGeometry other = testutil::covering_geometry(5, 8);
    EXPECT_THROW(back_project(ProjectionSet(other, DomainTag::LineIntegral), g, grid), InvalidArgument);
    EXPECT_THROW(forward_project(Volume(cubic_grid(8, 20.0)), g), InvalidArgument);
}
