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

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cbct/cbct.hpp"

namespace cbct::cli {

/// Reads pipeline configs written as JSON. Top-level keys configure global
/// flags; an object under a subcommand name configures that subcommand.
/// Keys are long flag names without the leading dashes.
class JsonConfig : public CLI::Config {
public:
    std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override
    {
        nlohmann::json j = collect(app, default_also);
        return j.dump(2);
    }

    std::vector<CLI::ConfigItem> from_config(std::istream& input) const override
    {
        nlohmann::json j;
        try {
            input >> j;
        } catch (const nlohmann::json::exception& e) {
            throw CLI::ConfigError(std::string("config file is not valid JSON: ") + e.what());
        }
        if (!j.is_object())
            throw CLI::ConfigError("config file must hold a JSON object");
        std::vector<CLI::ConfigItem> parsed;
        flatten(j, {}, parsed);
        return parsed;
    }

private:
    static void flatten(const nlohmann::json& j, std::vector<std::string> parents, std::vector<CLI::ConfigItem>& out)
    {
        for (const auto& [key, value] : j.items()) {
            if (value.is_object()) {
                auto sub = parents;
                sub.push_back(key);
                flatten(value, sub, out);
                continue;
            }
            CLI::ConfigItem item;
            item.parents = parents;
            item.name = key;
            if (value.is_array()) {
                for (const auto& v : value)
                    item.inputs.push_back(scalar(v));
            } else {
                item.inputs.push_back(scalar(value));
            }
            out.push_back(std::move(item));
        }
    }

    static std::string scalar(const nlohmann::json& v)
    {
        if (v.is_string())
            return v.get<std::string>();
        if (v.is_boolean())
            return v.get<bool>() ? "true" : "false";
        return v.dump();
    }

    static nlohmann::json collect(const CLI::App* app, bool default_also)
    {
        nlohmann::json j = nlohmann::json::object();
        for (const CLI::Option* opt : app->get_options({})) {
            if (!opt->get_configurable() || opt->get_lnames().empty())
                continue;
            const std::string name = opt->get_lnames().front();
            if (opt->count() > 0) {
                const auto& res = opt->results();
                j[name] = res.size() == 1 ? nlohmann::json(res.front()) : nlohmann::json(res);
            } else if (default_also && !opt->get_default_str().empty()) {
                j[name] = opt->get_default_str();
            }
        }
        for (const CLI::App* sub : app->get_subcommands({})) {
            nlohmann::json s = collect(sub, default_also);
            if (!s.empty())
                j[sub->get_name()] = s;
        }
        return j;
    }
};

struct GridArgs {
    std::size_t size = 64;
    std::size_t nx = 0, ny = 0, nz = 0;
    double voxel_size = 0.3;

    void add(CLI::App* app)
    {
        app->add_option("--size", size, "Voxels per axis of a cubic grid")->capture_default_str();
        app->add_option("--nx", nx, "Voxels along x (overrides --size)");
        app->add_option("--ny", ny, "Voxels along y (overrides --size)");
        app->add_option("--nz", nz, "Voxels along z (overrides --size)");
        app->add_option("--voxel-size", voxel_size, "Isotropic voxel size in mm")->capture_default_str();
    }

    [[nodiscard]] VoxelGrid grid() const
    {
        VoxelGrid g{nx ? nx : size, ny ? ny : size, nz ? nz : size, voxel_size, {0.0, 0.0, 0.0}};
        g.validate();
        return g;
    }
};

struct GeometryArgs {
    std::size_t views = 360;
    double arc_deg = 360.0;
    bool short_scan = false;
    double sid = 60.0;
    double sdd = 120.0;
    std::size_t det_rows = 64;
    std::size_t det_cols = 96;
    double pitch_u = 0.6;
    double pitch_v = 0.6;
    double offset_u = 0.0;
    double offset_v = 0.0;

    void add(CLI::App* app)
    {
        app->add_option("--views", views, "Number of view angles")->capture_default_str();
        app->add_option("--arc-deg", arc_deg, "Angular span of the scan in degrees")->capture_default_str();
        app->add_flag("--short-scan", short_scan, "Use the minimal short-scan arc (180 deg + fan angle)");
        app->add_option("--sid", sid, "Source to isocenter distance (mm)")->capture_default_str();
        app->add_option("--sdd", sdd, "Source to detector distance (mm)")->capture_default_str();
        app->add_option("--det-rows", det_rows, "Detector rows")->capture_default_str();
        app->add_option("--det-cols", det_cols, "Detector columns")->capture_default_str();
        app->add_option("--pitch-u", pitch_u, "Detector column pitch (mm)")->capture_default_str();
        app->add_option("--pitch-v", pitch_v, "Detector row pitch (mm)")->capture_default_str();
        app->add_option("--offset-u", offset_u, "Detector offset along u (mm)");
        app->add_option("--offset-v", offset_v, "Detector offset along v (mm)");
    }

    [[nodiscard]] ConeBeamGeometry geometry() const
    {
        const DetectorSpec det{det_rows, det_cols, pitch_u, pitch_v, offset_u, offset_v};
        const double arc = short_scan ? minimal_short_scan_arc(sdd, det) : arc_deg * kPi / 180.0;
        return make_circular_geometry(views, arc, sid, sdd, det);
    }
};

inline FilterKind parse_filter(const std::string& s) { return s == "hann" ? FilterKind::Hann : FilterKind::RamLak; }

inline std::string format_number(double v)
{
    std::ostringstream os;
    os.precision(std::numeric_limits<double>::max_digits10);
    os << v;
    return os.str();
}

inline nlohmann::json report_to_json(const MetricsReport& r, const SsimOptions& so)
{
    nlohmann::json j;
    j["nrmse"] = r.nrmse;
    j["psnr"] = std::isinf(r.psnr) ? nlohmann::json("inf") : nlohmann::json(r.psnr);
    j["ssim"] = r.ssim;
    j["region"] = r.region;
    j["conventions"] = {{"nrmse", "l2(test - ref) / l2(ref)"},
                        {"psnr_peak", "max(ref) - min(ref)"},
                        {"ssim", so.mode == SsimMode::Volumetric ? "3d" : "2d-axial"},
                        {"ssim_window", 2 * so.radius + 1},
                        {"ssim_sigma", so.sigma},
                        {"ssim_k1", so.k1},
                        {"ssim_k2", so.k2}};
    return j;
}

/// Runs one subcommand. Exit codes: 0 success, 1 runtime error, 2 usage error.
inline int run(const std::vector<std::string>& argv_in, std::ostream& out = std::cout, std::ostream& err = std::cerr)
{
    CLI::App app{"Cone-beam CT reconstruction toolkit (FDK, KL-TV, synthetic low-dose experiments)", "cbct"};
    app.config_formatter(std::make_shared<JsonConfig>());
    app.allow_config_extras(CLI::config_extras_mode::error);
    app.set_config("--config", "", "JSON pipeline config; command-line flags override its values");
    app.require_subcommand(1);
    app.fallthrough();

    int threads = 0;
    app.add_option("--threads", threads, "Maximum worker threads (0 = runtime default)");

    // phantom
    auto* phantom = app.add_subcommand("phantom", "Generate a synthetic phantom volume");
    std::string ph_out, ph_kind = "dental";
    std::uint64_t ph_seed = 0;
    bool ph_metal = false;
    double ball_radius = 0.0, ball_mu = 0.05;
    GridArgs ph_grid;
    phantom->add_option("--out", ph_out, "Output volume file")->required();
    phantom->add_option("--kind", ph_kind, "Phantom kind")->check(CLI::IsMember({"dental", "ball"}))->capture_default_str();
    phantom->add_option("--seed", ph_seed, "Variant seed")->capture_default_str();
    phantom->add_flag("--metal", ph_metal, "Insert metal into one or two teeth");
    phantom->add_option("--ball-radius", ball_radius, "Ball radius in mm (default: 30% of the grid extent)");
    phantom->add_option("--ball-mu", ball_mu, "Ball attenuation in mm^-1")->capture_default_str();
    ph_grid.add(phantom);

    // project
    auto* project = app.add_subcommand("project", "Forward project a volume");
    std::string pr_in, pr_out;
    GeometryArgs pr_geom;
    project->add_option("--in", pr_in, "Input volume file")->required();
    project->add_option("--out", pr_out, "Output projection file")->required();
    pr_geom.add(project);

    // simulate
    auto* simulate = app.add_subcommand("simulate", "Poisson photon counts from line integrals");
    std::string si_in, si_out;
    double si_i0 = 1e5;
    std::uint64_t si_seed = 0;
    bool si_to_li = false;
    simulate->add_option("--in", si_in, "Input line-integral projections")->required();
    simulate->add_option("--out", si_out, "Output projections")->required();
    simulate->add_option("--i0", si_i0, "Unattenuated photons per ray")->capture_default_str();
    simulate->add_option("--seed", si_seed, "Noise seed")->capture_default_str();
    simulate->add_flag("--to-line-integrals", si_to_li, "Write -ln(counts / I0) instead of counts");

    // subsample
    auto* subsample = app.add_subcommand("subsample", "Keep every n-th view of a projection set");
    std::string ss_in, ss_out;
    std::size_t ss_keep = 5;
    subsample->add_option("--in", ss_in, "Input projections")->required();
    subsample->add_option("--out", ss_out, "Output projections")->required();
    subsample->add_option("--keep-every", ss_keep, "Retain views 0, n, 2n, ...")->capture_default_str();

    // fdk
    auto* fdk = app.add_subcommand("fdk", "FDK reconstruction");
    std::string fd_in, fd_out, fd_filter = "ramlak", fd_short = "auto";
    std::size_t fd_pad = 0;
    GridArgs fd_grid;
    fdk->add_option("--in", fd_in, "Input line-integral projections")->required();
    fdk->add_option("--out", fd_out, "Output volume")->required();
    fdk->add_option("--filter", fd_filter, "Ramp filter")->check(CLI::IsMember({"ramlak", "hann"}))->capture_default_str();
    fdk->add_option("--pad-to", fd_pad, "FFT length (power of two >= 2 * columns; 0 = automatic)");
    fdk->add_option("--short-scan-weighting", fd_short, "Parker weighting for short scans")
        ->check(CLI::IsMember({"auto", "off"}))
        ->capture_default_str();
    fd_grid.add(fdk);

    // kltv
    auto* kltv = app.add_subcommand("kltv", "KL-TV iterative reconstruction");
    std::string kl_in, kl_out, kl_init, kl_hist;
    KltvParams kl_params;
    GridArgs kl_grid;
    kltv->add_option("--in", kl_in, "Input line-integral projections")->required();
    kltv->add_option("--out", kl_out, "Output volume")->required();
    kltv->add_option("--alpha", kl_params.alpha, "TV weight")->capture_default_str();
    kltv->add_option("--iters", kl_params.n_iter, "Iteration count")->capture_default_str();
    kltv->add_option("--theta", kl_params.theta, "Over-relaxation in [0, 1]")->capture_default_str();
    kltv->add_option("--epsilon-log", kl_params.epsilon_log, "Positivity floor inside the log")->capture_default_str();
    kltv->add_option("--init", kl_init, "Initial volume (default: zeros)");
    kltv->add_option("--history-csv", kl_hist, "Write the objective history (every 10 iterations) as CSV");
    kl_grid.add(kltv);

    // metrics
    auto* metrics = app.add_subcommand("metrics", "NRMSE / PSNR / SSIM of a test volume against a reference");
    std::string me_test, me_ref, me_mask, me_ssim = "3d";
    bool me_json = false;
    metrics->add_option("--test", me_test, "Test volume")->required();
    metrics->add_option("--ref", me_ref, "Reference volume")->required();
    metrics->add_option("--mask", me_mask, "Volume whose non-zero voxels select the NRMSE/PSNR region");
    metrics->add_option("--ssim-mode", me_ssim, "SSIM window")->check(CLI::IsMember({"3d", "2d"}))->capture_default_str();
    metrics->add_flag("--json", me_json, "Print a JSON report");

    // make-dataset
    auto* dataset = app.add_subcommand("make-dataset", "Generate paired normal-dose / low-dose volumes");
    std::string ds_out, ds_filter = "ramlak";
    DatasetConfig ds_cfg;
    GridArgs ds_grid;
    GeometryArgs ds_geom;
    ds_geom.views = 60;
    dataset->add_option("--out-dir", ds_out, "Output directory")->required();
    dataset->add_option("--n-volumes", ds_cfg.n_volumes, "Number of phantoms")->capture_default_str();
    dataset->add_option("--seed", ds_cfg.seed, "Base seed")->capture_default_str();
    dataset->add_option("--i0", ds_cfg.i0, "Unattenuated photons per ray")->capture_default_str();
    dataset->add_flag("--noise", ds_cfg.noise, "Add Poisson noise to the projections");
    dataset->add_flag("--metal", ds_cfg.with_metal, "Insert metal into the phantoms");
    dataset->add_option("--keep-every", ds_cfg.keep_every, "Low-dose view subsampling")->capture_default_str();
    dataset->add_option("--filter", ds_filter, "FDK ramp filter")->check(CLI::IsMember({"ramlak", "hann"}))->capture_default_str();
    ds_grid.add(dataset);
    ds_geom.add(dataset);

    // normalize
    auto* normalize = app.add_subcommand("normalize", "Map a volume to [-1, 1] with dataset-global bounds");
    std::string no_in, no_out, no_manifest;
    std::optional<double> no_lo, no_hi;
    bool no_inverse = false;
    normalize->add_option("--in", no_in, "Input volume")->required();
    normalize->add_option("--out", no_out, "Output volume")->required();
    normalize->add_option("--lo", no_lo, "Lower bound (original units)");
    normalize->add_option("--hi", no_hi, "Upper bound (original units)");
    normalize->add_option("--manifest", no_manifest, "Take the bounds from a dataset manifest");
    normalize->add_flag("--inverse", no_inverse, "Undo the normalization recorded in the input header");

    std::vector<std::string> args(argv_in.rbegin(), argv_in.rend());
    try {
        app.parse(args);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp& e) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n";
        const CLI::App* sub = nullptr;
        for (const CLI::App* s : app.get_subcommands())
            sub = s;
        err << (sub != nullptr ? sub->help() : app.help());
        return 2;
    }

    if (threads > 0)
        omp_set_num_threads(threads);

    try {
        if (*phantom) {
            const VoxelGrid grid = ph_grid.grid();
            Volume vol;
            if (ph_kind == "ball") {
                const double extent = grid.voxel_size * static_cast<double>(std::min({grid.nx, grid.ny, grid.nz}));
                vol = uniform_ball(grid, ball_radius > 0.0 ? ball_radius : 0.3 * extent, ball_mu).second;
            } else {
                vol = dental_phantom(grid, ph_seed, ph_metal).second;
            }
            write_volume(vol, ph_out, {}, {{"phantom", ph_kind}, {"seed", ph_seed}, {"metal", ph_metal}});
        } else if (*project) {
            const Volume vol = read_volume(pr_in).volume;
            write_projections(forward_project(vol, pr_geom.geometry()), pr_out);
        } else if (*simulate) {
            const ProjectionSet p = read_projections(si_in);
            ProjectionSet counts = simulate_counts(p, si_i0, si_seed);
            write_projections(si_to_li ? counts_to_line_integrals(counts, si_i0) : counts, si_out);
        } else if (*subsample) {
            const ProjectionSet p = read_projections(ss_in);
            write_projections(subsample_views(p, ss_keep), ss_out);
        } else if (*fdk) {
            const ProjectionSet p = read_projections(fd_in);
            FdkOptions opts;
            opts.filter_kind = parse_filter(fd_filter);
            opts.pad_to = fd_pad;
            opts.short_scan_weighting = fd_short == "off" ? ShortScanWeighting::Off : ShortScanWeighting::Auto;
            const Volume vol = fdk_reconstruct(p, fd_grid.grid(), opts);
            write_volume(vol, fd_out, {}, {{"reconstruction", "fdk"}, {"n_views", p.geometry().n_views()}, {"filter", fd_filter}});
        } else if (*kltv) {
            const ProjectionSet p = read_projections(kl_in);
            std::optional<Volume> init;
            if (!kl_init.empty())
                init = read_volume(kl_init).volume;
            const KltvResult res = kltv_reconstruct(p, kl_grid.grid(), kl_params, init);
            write_volume(res.f, kl_out, {},
                         {{"reconstruction", "kltv"},
                          {"n_views", p.geometry().n_views()},
                          {"alpha", kl_params.alpha},
                          {"iterations", kl_params.n_iter}});
            if (!kl_hist.empty()) {
                std::ofstream os(kl_hist, std::ios::trunc);
                if (!os)
                    throw FormatError(FormatError::Kind::Io, "cannot open '" + kl_hist + "' for writing");
                os << "iteration,objective\n";
                for (const ObjectiveSample& s : res.history)
                    os << s.iteration << ',' << format_number(s.objective) << '\n';
            }
        } else if (*metrics) {
            const Volume test = read_volume(me_test).volume;
            const Volume ref = read_volume(me_ref).volume;
            std::vector<std::uint8_t> mask;
            if (!me_mask.empty()) {
                const Volume m = read_volume(me_mask).volume;
                mask.resize(m.size());
                for (std::size_t n = 0; n < m.size(); ++n)
                    mask[n] = m[n] != 0.0f ? 1 : 0;
            }
            SsimOptions so;
            so.mode = me_ssim == "2d" ? SsimMode::AxialSlices : SsimMode::Volumetric;
            const MetricsReport r = evaluate(test, ref, mask, so, me_mask.empty() ? "all" : "mask:" + me_mask);
            if (me_json) {
                out << report_to_json(r, so).dump(2) << '\n';
            } else {
                out << "NRMSE " << format_number(r.nrmse) << "\nPSNR  " << format_number(r.psnr) << " dB\nSSIM  "
                    << format_number(r.ssim) << "\n";
            }
        } else if (*dataset) {
            ds_cfg.grid = ds_grid.grid();
            ds_cfg.geometry = ds_geom.geometry();
            ds_cfg.fdk.filter_kind = parse_filter(ds_filter);
            const nlohmann::json m = make_dataset(ds_cfg, ds_out);
            out << "wrote " << m.at("pairs").size() << " pairs to " << (std::filesystem::path(ds_out) / "manifest.json").string()
                << '\n';
        } else if (*normalize) {
            const VolumeRecord rec = read_volume(no_in);
            if (no_inverse) {
                write_volume(denormalize(rec.volume, rec.normalization), no_out);
            } else {
                double lo = 0.0, hi = 0.0;
                if (!no_manifest.empty()) {
                    std::ifstream is(no_manifest);
                    if (!is)
                        throw FormatError(FormatError::Kind::Io, "cannot open '" + no_manifest + "'");
                    const NormalizationRecord nr = manifest_normalization(nlohmann::json::parse(is));
                    lo = nr.global_min;
                    hi = nr.global_max;
                } else if (no_lo && no_hi) {
                    lo = *no_lo;
                    hi = *no_hi;
                } else {
                    err << "error: normalize needs --manifest or both --lo and --hi\n\n" << normalize->help();
                    return 2;
                }
                const auto [vol, nr] = normalize_global(rec.volume, lo, hi);
                write_volume(vol, no_out, nr);
            }
        }
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

inline int run(int argc, const char* const* argv)
{
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i)
        args.emplace_back(argv[i]);
    return run(args);
}

} // namespace cbct::cli
