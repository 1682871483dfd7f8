#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "voxtrack/common.hpp"
#include "voxtrack/geom.hpp"
#include "voxtrack/image.hpp"

namespace voxtrack {

/// Continuous coordinate in grid memory; voxel (i,j,k)'s center is (i,j,k).
struct GridCoord {
    double x = 0.0, y = 0.0, z = 0.0;
};

/// Binds a W x H x D voxel array to a metric cuboid of world space. The cube
/// is axis-aligned in the grid frame, centered at `center`, and the grid
/// frame is placed in the world by `reference_pose` (world-from-grid).
struct GridSpec {
    Vec3 center;
    Vec3 extent{1.0, 1.0, 1.0};
    int w = 1, h = 1, d = 1;
    RigidTransform reference_pose;

    Vec3 voxel_size() const { return {extent.x / w, extent.y / h, extent.z / d}; }

    bool valid() const {
        return extent.x > 0.0 && extent.y > 0.0 && extent.z > 0.0 && w >= 1 && h >= 1 && d >= 1 &&
               extent.finite() && center.finite();
    }

    bool same_geometry(const GridSpec& o, double tol = 1e-9) const {
        if (w != o.w || h != o.h || d != o.d) return false;
        if ((center - o.center).norm() > tol || (extent - o.extent).norm() > tol) return false;
        if ((reference_pose.translation - o.reference_pose.translation).norm() > tol) return false;
        for (int i = 0; i < 9; ++i)
            if (std::abs(reference_pose.rotation.m[static_cast<std::size_t>(i)] -
                         o.reference_pose.rotation.m[static_cast<std::size_t>(i)]) > tol)
                return false;
        return true;
    }
};

inline GridCoord world_to_mem(const GridSpec& spec, const Vec3& p_world) {
    Vec3 p_grid = invert(spec.reference_pose).apply(p_world) - spec.center;
    Vec3 vs = spec.voxel_size();
    return {(p_grid.x + spec.extent.x / 2.0) / vs.x - 0.5,
            (p_grid.y + spec.extent.y / 2.0) / vs.y - 0.5,
            (p_grid.z + spec.extent.z / 2.0) / vs.z - 0.5};
}

inline Vec3 mem_to_world(const GridSpec& spec, const GridCoord& c) {
    Vec3 vs = spec.voxel_size();
    Vec3 p_grid{(c.x + 0.5) * vs.x - spec.extent.x / 2.0,
                (c.y + 0.5) * vs.y - spec.extent.y / 2.0,
                (c.z + 0.5) * vs.z - spec.extent.z / 2.0};
    return spec.reference_pose.apply(p_grid + spec.center);
}

/// Dense W x H x D x C float array (channels contiguous).
struct VoxelGrid {
    GridSpec spec;
    int channels = 0;
    std::vector<float> data;

    VoxelGrid() = default;
    VoxelGrid(const GridSpec& s, int c)
        : spec(s),
          channels(c),
          data(static_cast<std::size_t>(s.w) * s.h * s.d * c, 0.0f) {}

    std::size_t voxel_count() const { return static_cast<std::size_t>(spec.w) * spec.h * spec.d; }

    std::size_t offset(int x, int y, int z) const {
        return ((static_cast<std::size_t>(x) * spec.h + y) * spec.d + z) * channels;
    }
    float at(int x, int y, int z, int c) const { return data[offset(x, y, z) + c]; }
    float& at(int x, int y, int z, int c) { return data[offset(x, y, z) + c]; }

    bool in_bounds(int x, int y, int z) const {
        return x >= 0 && x < spec.w && y >= 0 && y < spec.h && z >= 0 && z < spec.d;
    }
};

struct OccupancySummary {
    std::size_t occupied_count = 0;
    double fraction = 0.0;
};

/// Counts voxels whose occupancy channel exceeds 0.5.
inline OccupancySummary occupancy_summary(const VoxelGrid& g, int occupancy_channel = 3) {
    OccupancySummary s;
    const std::size_t n = g.voxel_count();
    for (std::size_t i = 0; i < n; ++i)
        if (g.data[i * g.channels + occupancy_channel] > 0.5f) ++s.occupied_count;
    s.fraction = n > 0 ? static_cast<double>(s.occupied_count) / static_cast<double>(n) : 0.0;
    return s;
}

/// Trilinear interpolation of the 8 surrounding voxels. `coord` must lie in
/// [0, W-1] x [0, H-1] x [0, D-1].
inline std::vector<double> trilinear_sample(const VoxelGrid& g, const GridCoord& c) {
    const double eps = 1e-9;
    if (c.x < -eps || c.x > g.spec.w - 1 + eps || c.y < -eps || c.y > g.spec.h - 1 + eps ||
        c.z < -eps || c.z > g.spec.d - 1 + eps)
        throw OutOfBounds("trilinear_sample: coordinate outside grid");

    auto split = [](double v, int n) {
        int i0 = static_cast<int>(std::floor(v));
        i0 = std::max(0, std::min(i0, n - 1));
        int i1 = std::min(i0 + 1, n - 1);
        double f = v - i0;
        f = std::max(0.0, std::min(1.0, f));
        return std::tuple<int, int, double>{i0, i1, f};
    };
    auto [x0, x1, fx] = split(c.x, g.spec.w);
    auto [y0, y1, fy] = split(c.y, g.spec.h);
    auto [z0, z1, fz] = split(c.z, g.spec.d);

    std::vector<double> out(static_cast<std::size_t>(g.channels), 0.0);
    const int corners[8][3] = {{x0, y0, z0}, {x0, y0, z1}, {x0, y1, z0}, {x0, y1, z1},
                               {x1, y0, z0}, {x1, y0, z1}, {x1, y1, z0}, {x1, y1, z1}};
    const double weights[8] = {
        (1 - fx) * (1 - fy) * (1 - fz), (1 - fx) * (1 - fy) * fz, (1 - fx) * fy * (1 - fz),
        (1 - fx) * fy * fz,             fx * (1 - fy) * (1 - fz), fx * (1 - fy) * fz,
        fx * fy * (1 - fz),             fx * fy * fz};
    for (int k = 0; k < 8; ++k) {
        if (weights[k] == 0.0) continue;
        std::size_t base = g.offset(corners[k][0], corners[k][1], corners[k][2]);
        for (int ch = 0; ch < g.channels; ++ch)
            out[static_cast<std::size_t>(ch)] += weights[k] * g.data[base + ch];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Voxelization: RGB-D frame -> 4-channel input grid (R, G, B, occupancy).
// Nearest-voxel splat; colors averaged over contributing pixels; out-of-cube
// points dropped. Unoccupied voxels stay all-zero.
// ---------------------------------------------------------------------------

inline constexpr int kOccupancyChannel = 3;

inline VoxelGrid voxelize_rgbd(const ImageRgb& image, const DepthMap& depth,
                               const CameraIntrinsics& intrinsics, const RigidTransform& cam_pose,
                               const GridSpec& spec) {
    if (image.width != depth.width || image.height != depth.height)
        throw ShapeMismatch("voxelize_rgbd: image/depth size mismatch");
    VoxelGrid grid(spec, 4);
    std::vector<double> rgb_sum(grid.voxel_count() * 3, 0.0);
    std::vector<std::uint32_t> hits(grid.voxel_count(), 0);

    const RigidTransform grid_from_world = invert(spec.reference_pose);
    const Vec3 vs = spec.voxel_size();
    for (int v = 0; v < image.height; ++v) {
        for (int u = 0; u < image.width; ++u) {
            float d = depth.at(u, v);
            if (!(d > 0.0f)) continue;
            Vec3 p_cam = unproject(intrinsics, u + 0.5, v + 0.5, d);
            Vec3 p_grid = grid_from_world.apply(cam_pose.apply(p_cam)) - spec.center;
            int ix = static_cast<int>(std::lround((p_grid.x + spec.extent.x / 2.0) / vs.x - 0.5));
            int iy = static_cast<int>(std::lround((p_grid.y + spec.extent.y / 2.0) / vs.y - 0.5));
            int iz = static_cast<int>(std::lround((p_grid.z + spec.extent.z / 2.0) / vs.z - 0.5));
            if (!grid.in_bounds(ix, iy, iz)) continue;
            std::size_t vi = grid.offset(ix, iy, iz) / 4;
            for (int c = 0; c < 3; ++c) rgb_sum[vi * 3 + c] += image.at(u, v, c);
            ++hits[vi];
        }
    }
    const std::size_t n = grid.voxel_count();
    for (std::size_t i = 0; i < n; ++i) {
        if (hits[i] == 0) continue;
        for (int c = 0; c < 3; ++c)
            grid.data[i * 4 + static_cast<std::size_t>(c)] =
                static_cast<float>(rgb_sum[i * 3 + static_cast<std::size_t>(c)] / hits[i]);
        grid.data[i * 4 + kOccupancyChannel] = 1.0f;
    }
    return grid;
}

/// Commutative multi-view fusion: voxel-wise max of occupancy, occupancy-
/// weighted mean of colors. All grids must share one spec.
inline VoxelGrid fuse_grids(std::span<const VoxelGrid> grids) {
    if (grids.empty()) throw ShapeMismatch("fuse_grids: no grids");
    for (const auto& g : grids) {
        if (g.channels != 4) throw ShapeMismatch("fuse_grids: expected 4-channel input grids");
        if (!g.spec.same_geometry(grids[0].spec)) throw SpecMismatch("fuse_grids: specs differ");
    }
    VoxelGrid out(grids[0].spec, 4);
    const std::size_t n = out.voxel_count();
    for (std::size_t i = 0; i < n; ++i) {
        double occ_sum = 0.0, occ_max = 0.0;
        double rgb[3] = {0.0, 0.0, 0.0};
        for (const auto& g : grids) {
            double occ = g.data[i * 4 + kOccupancyChannel];
            occ_max = std::max(occ_max, occ);
            occ_sum += occ;
            for (int c = 0; c < 3; ++c) rgb[c] += occ * g.data[i * 4 + static_cast<std::size_t>(c)];
        }
        if (occ_sum > 0.0)
            for (int c = 0; c < 3; ++c)
                out.data[i * 4 + static_cast<std::size_t>(c)] = static_cast<float>(rgb[c] / occ_sum);
        out.data[i * 4 + kOccupancyChannel] = static_cast<float>(occ_max);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Search regions: a fixed-extent cuboid recentered on the target each frame.
// ---------------------------------------------------------------------------

struct SearchRegionConfig {
    Vec3 extent{16.0, 2.0, 16.0};
};

inline GridSpec make_search_region(const Vec3& last_center, int w, int h, int d,
                                   const SearchRegionConfig& cfg = {}) {
    GridSpec spec;
    spec.center = last_center;
    spec.extent = cfg.extent;
    spec.w = w;
    spec.h = h;
    spec.d = d;
    spec.reference_pose = RigidTransform::identity();
    return spec;
}

/// Grid geometry used across the pipeline. The full-scene cuboid is the
/// training/visualization frame; search regions keep the fixed 16 x 2 x 16 m
/// extent at half the full-scene resolution, which preserves voxel pitch.
struct GridConfig {
    Vec3 scene_center{0.0, 2.0, 0.0};
    Vec3 scene_extent{32.0, 4.0, 32.0};
    int scene_w = 64, scene_h = 8, scene_d = 64;
    Vec3 search_extent{16.0, 2.0, 16.0};
    int search_w = 32, search_h = 4, search_d = 32;

    GridSpec scene_spec() const {
        GridSpec s;
        s.center = scene_center;
        s.extent = scene_extent;
        s.w = scene_w;
        s.h = scene_h;
        s.d = scene_d;
        return s;
    }
    GridSpec search_spec(const Vec3& center) const {
        return make_search_region(center, search_w, search_h, search_d, SearchRegionConfig{search_extent});
    }
};

// ---------------------------------------------------------------------------
// .vxg serialization: one JSON header line, then the raw little-endian f32
// buffer in (W, H, D, C) row-major order.
// ---------------------------------------------------------------------------

inline nlohmann::json grid_spec_to_json(const GridSpec& s) {
    nlohmann::json j;
    j["center"] = {s.center.x, s.center.y, s.center.z};
    j["extent"] = {s.extent.x, s.extent.y, s.extent.z};
    j["resolution"] = {s.w, s.h, s.d};
    j["reference_rotation"] = s.reference_pose.rotation.m;
    j["reference_translation"] = {s.reference_pose.translation.x, s.reference_pose.translation.y,
                                  s.reference_pose.translation.z};
    return j;
}

inline GridSpec grid_spec_from_json(const nlohmann::json& j) {
    GridSpec s;
    s.center = {j.at("center").at(0), j.at("center").at(1), j.at("center").at(2)};
    s.extent = {j.at("extent").at(0), j.at("extent").at(1), j.at("extent").at(2)};
    s.w = j.at("resolution").at(0);
    s.h = j.at("resolution").at(1);
    s.d = j.at("resolution").at(2);
    for (int i = 0; i < 9; ++i) s.reference_pose.rotation.m[static_cast<std::size_t>(i)] = j.at("reference_rotation").at(i);
    s.reference_pose.translation = {j.at("reference_translation").at(0),
                                    j.at("reference_translation").at(1),
                                    j.at("reference_translation").at(2)};
    return s;
}

inline void save_vxg(const std::string& path, const VoxelGrid& g) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    nlohmann::json header = grid_spec_to_json(g.spec);
    header["channels"] = g.channels;
    os << header.dump() << "\n";
    write_f32_buffer(os, g.data.data(), g.data.size());
    if (!os) throw IoError("write failed: " + path);
}

inline VoxelGrid load_vxg(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    std::string line;
    if (!std::getline(is, line)) throw IoError("missing header: " + path);
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("bad header in " + path + ": " + e.what());
    }
    VoxelGrid g(grid_spec_from_json(header), header.at("channels"));
    read_f32_buffer(is, g.data.data(), g.data.size());
    return g;
}

}  // namespace voxtrack
