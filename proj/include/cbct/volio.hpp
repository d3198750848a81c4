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
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cbct/error.hpp"
#include "cbct/geometry.hpp"
#include "cbct/volume.hpp"

// On-disk layout (all integers little-endian):
//
//   offset 0   8 bytes   magic "CBCTRAW1"
//   offset 8   uint64    header length H in bytes
//   offset 16  H bytes   UTF-8 JSON header
//   offset 16+H          float32 payload, little-endian
//
// Volumes are stored x-fastest with dims [nx, ny, nz]; projection stacks
// column-fastest, then row, then view, with dims [n_views, n_rows, n_cols].
// See docs/file-format.md for the header keys.

namespace cbct {

inline constexpr std::array<char, 8> kFileMagic{'C', 'B', 'C', 'T', 'R', 'A', 'W', '1'};

enum class NormalizationKind { None, GlobalMinMax };

struct NormalizationRecord {
    NormalizationKind kind = NormalizationKind::None;
    double global_min = 0.0;
    double global_max = 0.0;

    friend bool operator==(const NormalizationRecord&, const NormalizationRecord&) = default;
};

struct VolumeRecord {
    Volume volume;
    NormalizationRecord normalization;
};

// ---------------------------------------------------------------- JSON --

inline nlohmann::json to_json(const ConeBeamGeometry& g)
{
    return {{"source_to_isocenter", g.source_to_isocenter},
            {"source_to_detector", g.source_to_detector},
            {"n_rows", g.n_rows},
            {"n_cols", g.n_cols},
            {"pixel_pitch_u", g.pixel_pitch_u},
            {"pixel_pitch_v", g.pixel_pitch_v},
            {"detector_offset_u", g.detector_offset_u},
            {"detector_offset_v", g.detector_offset_v},
            {"arc_kind", to_string(g.arc_kind)},
            {"arc_span", g.arc_span},
            {"angles", g.angles}};
}

inline ConeBeamGeometry geometry_from_json(const nlohmann::json& j)
{
    ConeBeamGeometry g;
    g.source_to_isocenter = j.at("source_to_isocenter").get<double>();
    g.source_to_detector = j.at("source_to_detector").get<double>();
    g.n_rows = j.at("n_rows").get<std::size_t>();
    g.n_cols = j.at("n_cols").get<std::size_t>();
    g.pixel_pitch_u = j.at("pixel_pitch_u").get<double>();
    g.pixel_pitch_v = j.at("pixel_pitch_v").get<double>();
    g.detector_offset_u = j.value("detector_offset_u", 0.0);
    g.detector_offset_v = j.value("detector_offset_v", 0.0);
    const std::string kind = j.at("arc_kind").get<std::string>();
    if (kind == "full_scan")
        g.arc_kind = ArcKind::FullScan;
    else if (kind == "short_scan")
        g.arc_kind = ArcKind::ShortScan;
    else
        throw InvalidArgument("geometry: unknown arc_kind '" + kind + "'");
    g.arc_span = j.at("arc_span").get<double>();
    g.angles = j.at("angles").get<std::vector<double>>();
    g.validate();
    return g;
}

inline nlohmann::json to_json(const VoxelGrid& g)
{
    return {{"dims", {g.nx, g.ny, g.nz}}, {"voxel_size", g.voxel_size}, {"origin", g.origin}};
}

inline VoxelGrid grid_from_json(const nlohmann::json& j)
{
    const auto dims = j.at("dims").get<std::vector<std::size_t>>();
    if (dims.size() != 3)
        throw InvalidArgument("grid: dims must have three entries");
    VoxelGrid g{dims[0], dims[1], dims[2], j.at("voxel_size").get<double>(),
                j.value("origin", std::array<double, 3>{0.0, 0.0, 0.0})};
    g.validate();
    return g;
}

inline nlohmann::json to_json(const NormalizationRecord& r)
{
    if (r.kind == NormalizationKind::None)
        return {{"kind", "none"}};
    return {{"kind", "global_minmax"}, {"global_min", r.global_min}, {"global_max", r.global_max}};
}

inline NormalizationRecord normalization_from_json(const nlohmann::json& j)
{
    NormalizationRecord r;
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "none")
        return r;
    if (kind != "global_minmax")
        throw InvalidArgument("normalization: unknown kind '" + kind + "'");
    r.kind = NormalizationKind::GlobalMinMax;
    r.global_min = j.at("global_min").get<double>();
    r.global_max = j.at("global_max").get<double>();
    if (!(r.global_max > r.global_min))
        throw InvalidArgument("normalization: global_max must exceed global_min");
    return r;
}

inline std::string to_string(DomainTag d) { return d == DomainTag::LineIntegral ? "line_integral" : "counts"; }

// --------------------------------------------------------------- bytes --

namespace detail {

inline void put_u64_le(std::string& out, std::uint64_t v)
{
    for (int b = 0; b < 8; ++b)
        out.push_back(static_cast<char>((v >> (8 * b)) & 0xffu));
}

inline std::uint64_t get_u64_le(const unsigned char* p) noexcept
{
    std::uint64_t v = 0;
    for (int b = 0; b < 8; ++b)
        v |= static_cast<std::uint64_t>(p[b]) << (8 * b);
    return v;
}

inline void encode_floats_le(std::span<const float> src, std::string& out)
{
    const std::size_t off = out.size();
    out.resize(off + 4 * src.size());
    if constexpr (std::endian::native == std::endian::little) {
        std::memcpy(out.data() + off, src.data(), 4 * src.size());
    } else {
        for (std::size_t i = 0; i < src.size(); ++i) {
            const auto bits = std::bit_cast<std::uint32_t>(src[i]);
            for (int b = 0; b < 4; ++b)
                out[off + 4 * i + static_cast<std::size_t>(b)] = static_cast<char>((bits >> (8 * b)) & 0xffu);
        }
    }
}

inline void decode_floats_le(const unsigned char* src, std::span<float> dst)
{
    if constexpr (std::endian::native == std::endian::little) {
        std::memcpy(dst.data(), src, 4 * dst.size());
    } else {
        for (std::size_t i = 0; i < dst.size(); ++i) {
            std::uint32_t bits = 0;
            for (int b = 0; b < 4; ++b)
                bits |= static_cast<std::uint32_t>(src[4 * i + static_cast<std::size_t>(b)]) << (8 * b);
            dst[i] = std::bit_cast<float>(bits);
        }
    }
}

inline void write_file(const std::filesystem::path& path, const nlohmann::json& header, std::span<const float> payload)
{
    const std::string text = header.dump();
    std::string bytes(kFileMagic.begin(), kFileMagic.end());
    put_u64_le(bytes, text.size());
    bytes += text;
    encode_floats_le(payload, bytes);

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os)
        throw FormatError(FormatError::Kind::Io, "cannot open '" + path.string() + "' for writing");
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os)
        throw FormatError(FormatError::Kind::Io, "write failed for '" + path.string() + "'");
}

struct RawFile {
    nlohmann::json header;
    std::vector<float> payload;
};

inline std::size_t product_of_dims(const nlohmann::json& header, const std::string& where)
{
    const nlohmann::json& dims = header.at("dims");
    if (!dims.is_array() || dims.size() != 3)
        throw FormatError(FormatError::Kind::CorruptHeader, where + ": dims must be a 3-element array");
    std::size_t n = 1;
    for (const auto& d : dims) {
        if (!d.is_number_integer() || d.get<long long>() <= 0)
            throw FormatError(FormatError::Kind::CorruptHeader, where + ": dims must be positive integers");
        n *= d.get<std::size_t>();
    }
    return n;
}

inline RawFile read_file(const std::filesystem::path& path)
{
    const std::string where = "'" + path.string() + "'";
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw FormatError(FormatError::Kind::Io, "cannot open " + where + " for reading");
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());

    if (bytes.size() < 16 || !std::equal(kFileMagic.begin(), kFileMagic.end(), bytes.begin(),
                                         [](char a, unsigned char b) { return static_cast<unsigned char>(a) == b; }))
        throw FormatError(FormatError::Kind::CorruptHeader, where + ": missing magic string");
    const std::uint64_t hlen = get_u64_le(bytes.data() + 8);
    if (hlen > bytes.size() - 16)
        throw FormatError(FormatError::Kind::CorruptHeader, where + ": header length exceeds file size");

    RawFile raw;
    try {
        raw.header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<long>(hlen));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(FormatError::Kind::CorruptHeader, where + ": header is not valid JSON (" + e.what() + ")");
    }
    if (!raw.header.is_object() || !raw.header.contains("dims") || !raw.header.contains("kind"))
        throw FormatError(FormatError::Kind::CorruptHeader, where + ": header lacks kind/dims");
    const std::string dtype = raw.header.value("dtype", std::string{});
    if (dtype != "float32")
        throw FormatError(FormatError::Kind::UnsupportedDtype, where + ": unsupported dtype '" + dtype + "'");

    const std::size_t count = product_of_dims(raw.header, where);
    const std::size_t payload_bytes = bytes.size() - 16 - hlen;
    if (payload_bytes != 4 * count)
        throw FormatError(FormatError::Kind::LengthMismatch,
                          where + ": payload has " + std::to_string(payload_bytes) + " bytes, expected " +
                              std::to_string(4 * count));
    raw.payload.resize(count);
    decode_floats_le(bytes.data() + 16 + hlen, raw.payload);
    return raw;
}

} // namespace detail

// ------------------------------------------------------------- volumes --

/// metadata, when not null, is stored verbatim under the "metadata" key
/// (acquisition details of reconstructed volumes, for instance).
inline void write_volume(const Volume& vol, const std::filesystem::path& path, const NormalizationRecord& norm = {},
                         const nlohmann::json& metadata = nullptr)
{
    const VoxelGrid& g = vol.grid();
    nlohmann::json h = {{"format", "cbct"},
                        {"version", 1},
                        {"kind", "volume"},
                        {"dtype", "float32"},
                        {"dims", {g.nx, g.ny, g.nz}},
                        {"voxel_size", g.voxel_size},
                        {"origin", g.origin},
                        {"normalization", to_json(norm)}};
    if (!metadata.is_null())
        h["metadata"] = metadata;
    detail::write_file(path, h, vol.data());
}

inline VolumeRecord read_volume(const std::filesystem::path& path)
{
    detail::RawFile raw = detail::read_file(path);
    const std::string where = "'" + path.string() + "'";
    if (raw.header.at("kind") != "volume")
        throw FormatError(FormatError::Kind::CorruptHeader, where + ": not a volume file");
    try {
        const auto dims = raw.header.at("dims").get<std::vector<std::size_t>>();
        VoxelGrid g{dims[0], dims[1], dims[2], raw.header.at("voxel_size").get<double>(),
                    raw.header.value("origin", std::array<double, 3>{0.0, 0.0, 0.0})};
        NormalizationRecord norm;
        if (raw.header.contains("normalization"))
            norm = normalization_from_json(raw.header.at("normalization"));
        return {Volume(g, std::move(raw.payload)), norm};
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(FormatError::Kind::CorruptHeader, where + ": " + e.what());
    } catch (const InvalidArgument& e) {
        throw FormatError(FormatError::Kind::CorruptHeader, where + ": " + e.what());
    }
}

inline void write_projections(const ProjectionSet& proj, const std::filesystem::path& path)
{
    const ConeBeamGeometry& g = proj.geometry();
    nlohmann::json h = {{"format", "cbct"},
                        {"version", 1},
                        {"kind", "projections"},
                        {"dtype", "float32"},
                        {"dims", {g.n_views(), g.n_rows, g.n_cols}},
                        {"domain", to_string(proj.domain())},
                        {"geometry", to_json(g)}};
    detail::write_file(path, h, proj.data());
}

inline ProjectionSet read_projections(const std::filesystem::path& path)
{
    detail::RawFile raw = detail::read_file(path);
    const std::string where = "'" + path.string() + "'";
    if (raw.header.at("kind") != "projections")
        throw FormatError(FormatError::Kind::CorruptHeader, where + ": not a projection file");
    try {
        ConeBeamGeometry g = geometry_from_json(raw.header.at("geometry"));
        const auto dims = raw.header.at("dims").get<std::vector<std::size_t>>();
        if (dims[0] != g.n_views() || dims[1] != g.n_rows || dims[2] != g.n_cols)
            throw FormatError(FormatError::Kind::CorruptHeader, where + ": dims disagree with geometry");
        const std::string domain = raw.header.at("domain").get<std::string>();
        DomainTag tag;
        if (domain == "line_integral")
            tag = DomainTag::LineIntegral;
        else if (domain == "counts")
            tag = DomainTag::Counts;
        else
            throw FormatError(FormatError::Kind::CorruptHeader, where + ": unknown domain '" + domain + "'");
        return ProjectionSet(std::move(g), tag, std::move(raw.payload));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(FormatError::Kind::CorruptHeader, where + ": " + e.what());
    } catch (const InvalidArgument& e) {
        throw FormatError(FormatError::Kind::CorruptHeader, where + ": " + e.what());
    }
}

/// Header of any cbct file, without decoding the payload semantics.
inline nlohmann::json read_header(const std::filesystem::path& path) { return detail::read_file(path).header; }

// ------------------------------------------------------- normalization --

/// Affine map of [lo, hi] onto [-1, 1] with clamping. The bounds come from
/// the dataset, not from the volume being normalized.
inline std::pair<Volume, NormalizationRecord> normalize_global(const Volume& vol, double lo, double hi)
{
    detail::require(std::isfinite(lo) && std::isfinite(hi) && hi > lo,
                    "normalize_global: degenerate bounds (need hi > lo)");
    Volume out = vol;
    const double scale = 2.0 / (hi - lo);
    for (float& v : out.data())
        v = static_cast<float>(std::clamp(scale * (static_cast<double>(v) - lo) - 1.0, -1.0, 1.0));
    return {std::move(out), NormalizationRecord{NormalizationKind::GlobalMinMax, lo, hi}};
}

/// Inverse of normalize_global (no clamping applied).
inline Volume denormalize(const Volume& vol, const NormalizationRecord& rec)
{
    if (rec.kind == NormalizationKind::None)
        return vol;
    detail::require(rec.global_max > rec.global_min, "denormalize: degenerate bounds");
    Volume out = vol;
    const double half = 0.5 * (rec.global_max - rec.global_min);
    for (float& v : out.data())
        v = static_cast<float>((static_cast<double>(v) + 1.0) * half + rec.global_min);
    return out;
}

} // namespace cbct
