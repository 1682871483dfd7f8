#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "voxtrack/common.hpp"
#include "voxtrack/sim.hpp"

namespace voxtrack {

// ---------------------------------------------------------------------------
// Episode directory format:
//   episode.json                   scene spec, rig, ground truth, flags
//   f{frame}_c{cam}_rgb.raw        W*H*3 little-endian f32, row-major
//   f{frame}_c{cam}_depth.raw      W*H   little-endian f32, row-major
// ---------------------------------------------------------------------------

namespace detail {

inline nlohmann::json vec3_to_json(const Vec3& v) { return {v.x, v.y, v.z}; }
inline Vec3 vec3_from_json(const nlohmann::json& j) { return {j.at(0), j.at(1), j.at(2)}; }

inline nlohmann::json pose_to_json(const RigidTransform& t) {
    return {{"rotation", t.rotation.m}, {"translation", vec3_to_json(t.translation)}};
}
inline RigidTransform pose_from_json(const nlohmann::json& j) {
    RigidTransform t;
    for (int i = 0; i < 9; ++i) t.rotation.m[static_cast<std::size_t>(i)] = j.at("rotation").at(i);
    t.translation = vec3_from_json(j.at("translation"));
    return t;
}

inline nlohmann::json primitive_to_json(const Primitive& p) {
    return {{"shape", p.shape == PrimitiveShape::Cuboid ? "cuboid" : "sphere"},
            {"pose", pose_to_json(p.pose)},
            {"size", vec3_to_json(p.size)},
            {"albedo", vec3_to_json(p.albedo)},
            {"texture_seed", p.texture_seed}};
}
inline Primitive primitive_from_json(const nlohmann::json& j) {
    Primitive p;
    p.shape = j.at("shape") == "cuboid" ? PrimitiveShape::Cuboid : PrimitiveShape::Sphere;
    p.pose = pose_from_json(j.at("pose"));
    p.size = vec3_from_json(j.at("size"));
    p.albedo = vec3_from_json(j.at("albedo"));
    p.texture_seed = j.at("texture_seed");
    return p;
}

}  // namespace detail

inline std::string view_file_name(int frame, int cam, const char* what) {
    return "f" + std::to_string(frame) + "_c" + std::to_string(cam) + "_" + what + ".raw";
}

inline void write_episode(const std::string& dir, const Episode& ep) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const SceneSpec& s = ep.scene;

    nlohmann::json j;
    j["format"] = "voxtrack-episode-v1";
    j["seed"] = s.seed;
    j["static"] = ep.is_static;
    j["frame_count"] = s.frame_count;
    j["camera_count"] = s.rig.empty() ? 0 : static_cast<int>(s.rig[0].size());
    j["ground_plane"] = s.ground_plane;
    j["ground_albedo"] = detail::vec3_to_json(s.ground_albedo);
    j["ground_texture_seed"] = s.ground_texture_seed;
    j["statics"] = nlohmann::json::array();
    for (const auto& p : s.statics) j["statics"].push_back(detail::primitive_to_json(p));
    j["movers"] = nlohmann::json::array();
    for (const auto& m : s.movers) {
        nlohmann::json mj;
        mj["primitive"] = detail::primitive_to_json(m.primitive);
        mj["trajectory"] = nlohmann::json::array();
        for (const auto& t : m.trajectory) mj["trajectory"].push_back(detail::pose_to_json(t));
        j["movers"].push_back(mj);
    }
    j["rig"] = nlohmann::json::array();
    for (const auto& frame : s.rig) {
        nlohmann::json fj = nlohmann::json::array();
        for (const auto& cam : frame) {
            fj.push_back({{"fx", cam.intrinsics.fx},
                          {"fy", cam.intrinsics.fy},
                          {"cx", cam.intrinsics.cx},
                          {"cy", cam.intrinsics.cy},
                          {"width", cam.intrinsics.width},
                          {"height", cam.intrinsics.height},
                          {"gain", detail::vec3_to_json(cam.gain)},
                          {"offset", detail::vec3_to_json(cam.offset)},
                          {"pose", detail::pose_to_json(cam.pose)}});
        }
        j["rig"].push_back(fj);
    }

    std::ofstream os(fs::path(dir) / "episode.json", std::ios::binary);
    if (!os) throw IoError("cannot write episode.json in " + dir);
    os << j.dump(2) << "\n";
    os.close();

    for (int f = 0; f < s.frame_count; ++f) {
        for (std::size_t c = 0; c < ep.frames[static_cast<std::size_t>(f)].size(); ++c) {
            const RenderedView& view = ep.frames[static_cast<std::size_t>(f)][c];
            {
                std::ofstream rf(fs::path(dir) / view_file_name(f, static_cast<int>(c), "rgb"),
                                 std::ios::binary);
                if (!rf) throw IoError("cannot write rgb raw in " + dir);
                write_f32_buffer(rf, view.rgb.data.data(), view.rgb.data.size());
            }
            {
                std::ofstream df(fs::path(dir) / view_file_name(f, static_cast<int>(c), "depth"),
                                 std::ios::binary);
                if (!df) throw IoError("cannot write depth raw in " + dir);
                write_f32_buffer(df, view.depth.data.data(), view.depth.data.size());
            }
        }
    }
}

inline Episode read_episode(const std::string& dir) {
    namespace fs = std::filesystem;
    const fs::path meta = fs::path(dir) / "episode.json";
    std::ifstream is(meta, std::ios::binary);
    if (!is) throw CorruptEpisode("missing " + meta.string());
    nlohmann::json j;
    Episode ep;
    try {
        is >> j;
        if (j.at("format") != "voxtrack-episode-v1") throw CorruptEpisode("unknown format in " + meta.string());
        SceneSpec& s = ep.scene;
        s.seed = j.at("seed");
        ep.is_static = j.at("static");
        s.frame_count = j.at("frame_count");
        s.ground_plane = j.at("ground_plane");
        s.ground_albedo = detail::vec3_from_json(j.at("ground_albedo"));
        s.ground_texture_seed = j.at("ground_texture_seed");
        for (const auto& pj : j.at("statics")) s.statics.push_back(detail::primitive_from_json(pj));
        for (const auto& mj : j.at("movers")) {
            Mover m;
            m.primitive = detail::primitive_from_json(mj.at("primitive"));
            for (const auto& tj : mj.at("trajectory")) m.trajectory.push_back(detail::pose_from_json(tj));
            if (static_cast<int>(m.trajectory.size()) != s.frame_count)
                throw CorruptEpisode("trajectory length mismatch in " + meta.string());
            s.movers.push_back(std::move(m));
        }
        for (const auto& fj : j.at("rig")) {
            std::vector<CameraView> frame;
            for (const auto& cj : fj) {
                CameraView cam;
                cam.intrinsics = {cj.at("fx"), cj.at("fy"), cj.at("cx"),
                                  cj.at("cy"), cj.at("width"), cj.at("height")};
                cam.gain = detail::vec3_from_json(cj.at("gain"));
                cam.offset = detail::vec3_from_json(cj.at("offset"));
                cam.pose = detail::pose_from_json(cj.at("pose"));
                frame.push_back(cam);
            }
            s.rig.push_back(std::move(frame));
        }
        if (static_cast<int>(s.rig.size()) != s.frame_count)
            throw CorruptEpisode("rig length mismatch in " + meta.string());
    } catch (const nlohmann::json::exception& e) {
        throw CorruptEpisode("bad episode.json in " + dir + ": " + e.what());
    }

    const SceneSpec& s = ep.scene;
    ep.frames.resize(static_cast<std::size_t>(s.frame_count));
    for (int f = 0; f < s.frame_count; ++f) {
        for (std::size_t c = 0; c < s.rig[static_cast<std::size_t>(f)].size(); ++c) {
            const CameraIntrinsics& k = s.rig[static_cast<std::size_t>(f)][c].intrinsics;
            RenderedView view;
            view.rgb = ImageRgb(k.width, k.height);
            view.depth = DepthMap(k.width, k.height);
            const fs::path rgb_path = fs::path(dir) / view_file_name(f, static_cast<int>(c), "rgb");
            const fs::path depth_path = fs::path(dir) / view_file_name(f, static_cast<int>(c), "depth");
            std::ifstream rf(rgb_path, std::ios::binary);
            if (!rf) throw CorruptEpisode("missing " + rgb_path.string());
            std::ifstream df(depth_path, std::ios::binary);
            if (!df) throw CorruptEpisode("missing " + depth_path.string());
            try {
                read_f32_buffer(rf, view.rgb.data.data(), view.rgb.data.size());
                read_f32_buffer(df, view.depth.data.data(), view.depth.data.size());
            } catch (const IoError&) {
                throw CorruptEpisode("truncated raw tensor for frame " + std::to_string(f) + " cam " +
                                     std::to_string(c) + " in " + dir);
            }
            ep.frames[static_cast<std::size_t>(f)].push_back(std::move(view));
        }
    }
    ep.mover_boxes.resize(static_cast<std::size_t>(s.frame_count));
    for (int f = 0; f < s.frame_count; ++f)
        for (const auto& m : s.movers)
            ep.mover_boxes[static_cast<std::size_t>(f)].push_back(mover_box(m, f));
    return ep;
}

// ---------------------------------------------------------------------------
// Dataset manifest: a list of episode directories with their static flags.
// ---------------------------------------------------------------------------

struct ManifestEntry {
    std::string path;  // relative to the manifest's directory
    bool is_static = true;
};

struct DatasetManifest {
    std::vector<ManifestEntry> episodes;
    std::uint64_t seed = 0;

    std::vector<ManifestEntry> filtered(bool want_static) const {
        std::vector<ManifestEntry> out;
        for (const auto& e : episodes)
            if (e.is_static == want_static) out.push_back(e);
        return out;
    }
};

inline void write_manifest(const std::string& dir, const DatasetManifest& m) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    nlohmann::json j;
    j["format"] = "voxtrack-dataset-v1";
    j["seed"] = m.seed;
    j["episodes"] = nlohmann::json::array();
    for (const auto& e : m.episodes) j["episodes"].push_back({{"path", e.path}, {"static", e.is_static}});
    std::ofstream os(fs::path(dir) / "manifest.json", std::ios::binary);
    if (!os) throw IoError("cannot write manifest.json in " + dir);
    os << j.dump(2) << "\n";
}

inline DatasetManifest read_manifest(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream is(fs::path(dir) / "manifest.json", std::ios::binary);
    if (!is) throw DataMissing("no manifest.json in " + dir);
    DatasetManifest m;
    try {
        nlohmann::json j;
        is >> j;
        m.seed = j.at("seed");
        for (const auto& e : j.at("episodes")) m.episodes.push_back({e.at("path"), e.at("static")});
    } catch (const nlohmann::json::exception& e) {
        throw CorruptEpisode("bad manifest.json in " + dir + ": " + e.what());
    }
    return m;
}

}  // namespace voxtrack
