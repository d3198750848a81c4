#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "cbct_cli.hpp"
#include "test_util.hpp"

using namespace cbct;
namespace fs = std::filesystem;

namespace {

struct CliResult {
    int code;
    std::string out;
    std::string err;
};

CliResult run_cli(std::vector<std::string> args)
{
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::vector<std::string> small_geom()
{
    return {"--views", "20", "--det-rows", "13", "--det-cols", "19"};
}

std::vector<std::string> with(std::vector<std::string> a, const std::vector<std::string>& b)
{
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

std::string slurp(const fs::path& p)
{
    std::ifstream is(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

} // namespace

TEST(Cli, FullPipeline)
{
    const fs::path d = testutil::temp_dir("cli_pipeline");
    const auto s = [&](const char* f) { return (d / f).string(); };
    ASSERT_EQ(run_cli({"phantom", "--out", s("truth.cbv"), "--size", "12", "--seed", "3"}).code, 0);
    ASSERT_EQ(run_cli(with({"project", "--in", s("truth.cbv"), "--out", s("full.cbp")}, small_geom())).code, 0);
    ASSERT_EQ(run_cli({"subsample", "--in", s("full.cbp"), "--out", s("low.cbp"), "--keep-every", "5"}).code, 0);
    EXPECT_EQ(read_projections(d / "low.cbp").geometry().n_views(), 4u);
    ASSERT_EQ(run_cli({"simulate", "--in", s("full.cbp"), "--out", s("noisy.cbp"), "--i0", "1e4", "--seed", "2",
                   "--to-line-integrals"})
                  .code,
              0);
    EXPECT_EQ(read_projections(d / "noisy.cbp").domain(), DomainTag::LineIntegral);
    ASSERT_EQ(run_cli({"fdk", "--in", s("full.cbp"), "--out", s("fdk.cbv"), "--size", "12"}).code, 0);
    ASSERT_EQ(run_cli({"kltv", "--in", s("low.cbp"), "--out", s("kl.cbv"), "--size", "12", "--iters", "20",
                   "--history-csv", s("hist.csv")})
                  .code,
              0);
    const std::string csv = slurp(d / "hist.csv");
    EXPECT_EQ(csv.rfind("iteration,objective\n10,", 0), 0u) << csv;
    EXPECT_NE(csv.find("\n20,"), std::string::npos);

    const CliResult m = run_cli({"metrics", "--test", s("fdk.cbv"), "--ref", s("truth.cbv"), "--json"});
    ASSERT_EQ(m.code, 0) << m.err;
    const auto j = nlohmann::json::parse(m.out);
    EXPECT_GT(j.at("nrmse").get<double>(), 0.0);
    EXPECT_LE(j.at("ssim").get<double>(), 1.0);
    EXPECT_TRUE(j.contains("psnr"));

    const CliResult same = run_cli({"metrics", "--test", s("truth.cbv"), "--ref", s("truth.cbv"), "--json"});
    const auto js = nlohmann::json::parse(same.out);
    EXPECT_EQ(js.at("nrmse"), 0.0);
    EXPECT_EQ(js.at("psnr"), "inf");
    EXPECT_EQ(js.at("ssim"), 1.0);
}

TEST(Cli, ExitCodes)
{
    const fs::path d = testutil::temp_dir("cli_codes");
    const CliResult unknown = run_cli({"kltv", "--in", "x", "--out", "y", "--bogus"});
    EXPECT_EQ(unknown.code, 2);
    EXPECT_NE(unknown.err.find("--alpha"), std::string::npos);
    EXPECT_EQ(run_cli({}).code, 2);
    EXPECT_EQ(run_cli({"frobnicate"}).code, 2);
    EXPECT_EQ(run_cli({"fdk", "--in", (d / "missing.cbp").string(), "--out", (d / "o.cbv").string()}).code, 1);
    EXPECT_EQ(run_cli({"--help"}).code, 0);
}

TEST(Cli, ConfigFileAndOverride)
{
    const fs::path d = testutil::temp_dir("cli_config");
    {
        std::ofstream os(d / "cfg.json");
        os << R"({"phantom": {"out": ")" << (d / "a.cbv").string() << R"(", "size": 10, "kind": "ball"}})";
    }
    ASSERT_EQ(run_cli({"phantom", "--config", (d / "cfg.json").string()}).code, 0);
    EXPECT_EQ(read_volume(d / "a.cbv").volume.grid().nx, 10u);
    ASSERT_EQ(run_cli({"phantom", "--config", (d / "cfg.json").string(), "--size", "8"}).code, 0);
    EXPECT_EQ(read_volume(d / "a.cbv").volume.grid().nx, 8u);

    {
        std::ofstream os(d / "bad.json");
        os << R"({"phantom": {"out": "x.cbv", "sizes": 10}})";
    }
    EXPECT_EQ(run_cli({"phantom", "--config", (d / "bad.json").string()}).code, 2);
}

TEST(Cli, NormalizeWithManifest)
{
    const fs::path d = testutil::temp_dir("cli_norm");
    const auto s = [&](const char* f) { return (d / f).string(); };
    ASSERT_EQ(run_cli({"make-dataset", "--out-dir", s("ds"), "--n-volumes", "1", "--size", "10", "--views", "15",
                   "--det-rows", "11", "--det-cols", "17", "--seed", "4"})
                  .code,
              0);
    const std::string vol = (d / "ds" / "vol000_normal.cbv").string();
    ASSERT_EQ(run_cli({"normalize", "--in", vol, "--out", s("n.cbv"), "--manifest", (d / "ds" / "manifest.json").string()}).code, 0);
    const VolumeRecord r = read_volume(d / "n.cbv");
    EXPECT_EQ(r.normalization.kind, NormalizationKind::GlobalMinMax);
    for (float v : r.volume.data()) {
        ASSERT_GE(v, -1.0f);
        ASSERT_LE(v, 1.0f);
    }
    ASSERT_EQ(run_cli({"normalize", "--in", s("n.cbv"), "--out", s("back.cbv"), "--inverse"}).code, 0);
    const Volume orig = read_volume(vol).volume;
    const Volume back = read_volume(d / "back.cbv").volume;
    const double span = r.normalization.global_max - r.normalization.global_min;
    for (std::size_t n = 0; n < orig.size(); ++n)
        ASSERT_NEAR(back[n], orig[n], 1e-6 * span);
    EXPECT_EQ(run_cli({"normalize", "--in", vol, "--out", s("x.cbv")}).code, 2);
    EXPECT_EQ(run_cli({"normalize", "--in", vol, "--out", s("x.cbv"), "--lo", "1", "--hi", "1"}).code, 1);
}

TEST(Cli, ReproducibleFromSeed)
{
    const fs::path d = testutil::temp_dir("cli_repro");
    for (const char* name : {"a", "b"}) {
        const std::string dir = (d / name).string();
        ASSERT_EQ(run_cli({"make-dataset", "--out-dir", dir, "--n-volumes", "2", "--size", "10", "--views", "15",
                       "--det-rows", "11", "--det-cols", "17", "--seed", "9", "--noise", "--threads", "1"})
                      .code,
                  0);
    }
    for (const char* f : {"manifest.json", "vol000_normal.cbv", "vol001_low.cbv"})
        EXPECT_EQ(slurp(d / "a" / f), slurp(d / "b" / f)) << f;
}
