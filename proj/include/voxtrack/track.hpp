#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "voxtrack/box.hpp"
#include "voxtrack/common.hpp"
#include "voxtrack/grid.hpp"
#include "voxtrack/net.hpp"
#include "voxtrack/rng.hpp"
#include "voxtrack/train.hpp"

namespace voxtrack {

// ---------------------------------------------------------------------------
// Object template: voxel coordinates and unit features lifted from the
// zeroth frame's map. The template is never updated during tracking.
// ---------------------------------------------------------------------------

struct ObjectTemplate {
    GridSpec source_spec;
    Box3D source_box;
    std::vector<VoxelIndex> voxels;
    std::vector<std::vector<float>> features;
    std::vector<Vec3> world_points;

    std::size_t size() const { return voxels.size(); }
};

/// Every voxel whose center lies inside the yawed box -- and, unless
/// `occupied_only` is cleared, whose input occupancy is 1 -- contributes one
/// (coordinate, feature) entry.
inline ObjectTemplate extract_template(const VoxelGrid& map0, const VoxelGrid& input0, const Box3D& box,
                                       bool occupied_only = true) {
    if (!map0.spec.same_geometry(input0.spec)) throw SpecMismatch("extract_template: map/input specs differ");
    ObjectTemplate tmpl;
    tmpl.source_spec = map0.spec;
    tmpl.source_box = box;
    for (int x = 0; x < map0.spec.w; ++x) {
        for (int y = 0; y < map0.spec.h; ++y) {
            for (int z = 0; z < map0.spec.d; ++z) {
                Vec3 center = mem_to_world(map0.spec, {double(x), double(y), double(z)});
                if (!box.contains(center)) continue;
                if (occupied_only && input0.at(x, y, z, kOccupancyChannel) <= 0.5f) continue;
                tmpl.voxels.push_back({x, y, z});
                const std::size_t base = map0.offset(x, y, z);
                tmpl.features.emplace_back(map0.data.begin() + static_cast<std::ptrdiff_t>(base),
                                           map0.data.begin() + static_cast<std::ptrdiff_t>(base + map0.channels));
                tmpl.world_points.push_back(center);
            }
        }
    }
    if (tmpl.voxels.empty()) throw EmptyTemplate();
    return tmpl;
}

// ---------------------------------------------------------------------------
// Soft spatial argmax: expected grid coordinate under the softmax of feature
// similarities over every voxel of the search map. `sharpness` scales the
// similarities in the exponent; 1 is the raw form.
// ---------------------------------------------------------------------------

inline GridCoord soft_argmax_correspond(std::span<const float> feature, const VoxelGrid& search_map,
                                        double sharpness = 1.0) {
    if (feature.size() != static_cast<std::size_t>(search_map.channels))
        throw ShapeMismatch("soft_argmax_correspond: feature dim mismatch");
    const int w = search_map.spec.w, h = search_map.spec.h, d = search_map.spec.d;
    const int c_n = search_map.channels;
    const std::size_t n = search_map.voxel_count();

    std::vector<double> scores(n);
    double max_score = -1e300;
    for (std::size_t v = 0; v < n; ++v) {
        const float* f = &search_map.data[v * static_cast<std::size_t>(c_n)];
        double s = 0.0;
        for (int c = 0; c < c_n; ++c) s += static_cast<double>(feature[static_cast<std::size_t>(c)]) * f[c];
        scores[v] = s * sharpness;
        max_score = std::max(max_score, scores[v]);
    }
    double norm = 0.0, ex = 0.0, ey = 0.0, ez = 0.0;
    std::size_t v = 0;
    for (int x = 0; x < w; ++x)
        for (int y = 0; y < h; ++y)
            for (int z = 0; z < d; ++z, ++v) {
                const double p = std::exp(scores[v] - max_score);
                norm += p;
                ex += p * x;
                ey += p * y;
                ez += p * z;
            }
    return {ex / norm, ey / norm, ez / norm};
}

// ---------------------------------------------------------------------------
// RANSAC rigid-motion fit over (src, dst) world-point correspondences.
// ---------------------------------------------------------------------------

struct RansacResult {
    RigidTransform transform;
    std::vector<std::uint8_t> inliers;
    int inlier_count = 0;
};

inline RansacResult estimate_rigid_ransac(std::span<const Vec3> src, std::span<const Vec3> dst,
                                          int iterations, double inlier_threshold, std::uint64_t seed) {
    const std::size_t n = src.size();
    if (n != dst.size()) throw ShapeMismatch("estimate_rigid_ransac: size mismatch");
    if (n < 3) throw DegenerateConfiguration("estimate_rigid_ransac: need at least 3 correspondences");

    Rng rng(seed);
    auto count_inliers = [&](const RigidTransform& t, std::vector<std::uint8_t>& mask) {
        int count = 0;
        mask.assign(n, 0);
        for (std::size_t i = 0; i < n; ++i) {
            if ((t.apply(src[i]) - dst[i]).norm() <= inlier_threshold) {
                mask[i] = 1;
                ++count;
            }
        }
        return count;
    };

    RansacResult best;
    best.inlier_count = -1;
    std::vector<std::uint8_t> mask;
    for (int it = 0; it < iterations; ++it) {
        std::size_t a = rng.uniform_index(n);
        std::size_t b = rng.uniform_index(n);
        std::size_t c = rng.uniform_index(n);
        if (a == b || b == c || a == c) continue;
        Vec3 s3[3] = {src[a], src[b], src[c]};
        Vec3 d3[3] = {dst[a], dst[b], dst[c]};
        RigidTransform hyp;
        try {
            hyp = fit_rigid_least_squares(std::span<const Vec3>(s3, 3), std::span<const Vec3>(d3, 3));
        } catch (const DegenerateConfiguration&) {
            continue;
        }
        const int count = count_inliers(hyp, mask);
        if (count > best.inlier_count) {
            best.inlier_count = count;
            best.transform = hyp;
            best.inliers = mask;
        }
    }
    if (best.inlier_count < 0)
        throw DegenerateConfiguration("estimate_rigid_ransac: every minimal sample was degenerate");

    // refit on the consensus set; keep the hypothesis if the refit loses votes
    if (best.inlier_count >= 3) {
        std::vector<Vec3> s_in, d_in;
        for (std::size_t i = 0; i < n; ++i) {
            if (best.inliers[i]) {
                s_in.push_back(src[i]);
                d_in.push_back(dst[i]);
            }
        }
        try {
            RigidTransform refit = fit_rigid_least_squares(s_in, d_in);
            const int count = count_inliers(refit, mask);
            if (count >= best.inlier_count) {
                best.transform = refit;
                best.inlier_count = count;
                best.inliers = mask;
            }
        } catch (const DegenerateConfiguration&) {
            // consensus set collinear; the minimal-sample transform stands
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// Frame-to-frame tracking.
// ---------------------------------------------------------------------------

struct TrackerConfig {
    double sharpness = 1.0 / 0.07;  // test-time softmax scale (see README)
    int ransac_iterations = 256;
    double inlier_threshold = 0.25;  // meters
    double min_inlier_fraction = 0.10;
    bool occupied_only_template = true;
    // Keep every search region on one world-aligned voxel lattice. Encoder
    // features are sensitive to sub-voxel phase, so matching maps sampled at
    // a common phase is markedly more stable; the recentering error is at
    // most half a voxel.
    bool snap_search_to_lattice = true;
    std::uint64_t seed = 0;
    int threads = 1;
};

namespace detail {

inline Vec3 maybe_snap_center(const Vec3& center, const GridConfig& gc, const TrackerConfig& tc) {
    if (!tc.snap_search_to_lattice) return center;
    const Vec3 vs{gc.search_extent.x / gc.search_w, gc.search_extent.y / gc.search_h,
                  gc.search_extent.z / gc.search_d};
    return {std::round(center.x / vs.x) * vs.x, std::round(center.y / vs.y) * vs.y,
            std::round(center.z / vs.z) * vs.z};
}

}  // namespace detail

struct FrameEstimate {
    int frame = 0;
    Box3D box;
    RigidTransform motion;  // frame-0 object pose -> this frame
    int inlier_count = 0;
    bool lost = false;
};

struct TrackState {
    ObjectTemplate tmpl;
    Box3D box0;
    Box3D current;
    std::vector<FrameEstimate> history;
};

/// Builds the object-centered map of frame 0 and lifts the template.
inline TrackState start_track(const Episode& ep, const Box3D& box0, const EncoderParams& encoder,
                              const GridConfig& gc, const TrackerConfig& tc) {
    GridSpec spec0 = gc.search_spec(detail::maybe_snap_center(box0.center, gc, tc));
    VoxelGrid input0 = voxelize_frame(ep, 0, spec0);
    VoxelGrid map0 = forward_encoder(encoder, input0, tc.threads);
    TrackState st;
    st.tmpl = extract_template(map0, input0, box0, tc.occupied_only_template);
    st.box0 = box0;
    st.current = box0;
    st.history.push_back({0, box0, RigidTransform::identity(), static_cast<int>(st.tmpl.size()), false});
    return st;
}

/// One tracking step: recenter the search region on the last estimate,
/// re-locate every template voxel by soft argmax, and explain the motion
/// field with a RANSAC rigid transform applied to the frame-0 box. A failed
/// fit propagates the box unchanged and flags the frame.
inline void step_track(TrackState& st, const Episode& ep, int frame, const EncoderParams& encoder,
                       const GridConfig& gc, const TrackerConfig& tc) {
    GridSpec search = gc.search_spec(detail::maybe_snap_center(st.current.center, gc, tc));
    VoxelGrid input = voxelize_frame(ep, frame, search);
    VoxelGrid map = forward_encoder(encoder, input, tc.threads);

    const std::size_t n = st.tmpl.size();
    std::vector<Vec3> dst(n);
    for (std::size_t i = 0; i < n; ++i) {
        GridCoord c = soft_argmax_correspond(std::span<const float>(st.tmpl.features[i]), map, tc.sharpness);
        dst[i] = mem_to_world(search, c);
    }

    FrameEstimate est;
    est.frame = frame;
    const int min_inliers =
        std::max(3, static_cast<int>(std::ceil(tc.min_inlier_fraction * static_cast<double>(n))));
    bool ok = n >= 3;
    RansacResult fit;
    if (ok) {
        try {
            fit = estimate_rigid_ransac(std::span<const Vec3>(st.tmpl.world_points),
                                        std::span<const Vec3>(dst), tc.ransac_iterations,
                                        tc.inlier_threshold,
                                        mix_seed(tc.seed, 0xf00 + static_cast<std::uint64_t>(frame)));
            ok = fit.inlier_count >= min_inliers;
        } catch (const DegenerateConfiguration&) {
            ok = false;
        }
    }
    if (ok) {
        est.box = st.box0.transformed(fit.transform);
        est.motion = fit.transform;
        est.inlier_count = fit.inlier_count;
        est.lost = false;
    } else {
        est.box = st.current;  // zero-motion fallback
        est.motion = st.history.back().motion;
        est.inlier_count = ok ? fit.inlier_count : 0;
        est.lost = true;
    }
    st.current = est.box;
    st.history.push_back(est);
}

/// Tracks one object through a whole episode starting from its frame-0 box.
/// Step failures are flagged, never fatal.
inline TrackState track_sequence(const Episode& ep, const Box3D& box0, const EncoderParams& encoder,
                                 const GridConfig& gc, const TrackerConfig& tc) {
    TrackState st = start_track(ep, box0, encoder, gc, tc);
    for (int f = 1; f < ep.scene.frame_count; ++f) step_track(st, ep, f, encoder, gc, tc);
    return st;
}

/// Ablation variant: correspondences are searched in the entire fixed-pose
/// scene map instead of a recentered search region. Pass precomputed per-
/// frame scene maps to share the encoding across objects.
inline TrackState track_sequence_global(const Episode& ep, const Box3D& box0,
                                        const EncoderParams& encoder, const GridConfig& gc,
                                        const TrackerConfig& tc,
                                        const std::vector<VoxelGrid>* scene_maps = nullptr) {
    TrackState st = start_track(ep, box0, encoder, gc, tc);
    const GridSpec scene = gc.scene_spec();
    for (int f = 1; f < ep.scene.frame_count; ++f) {
        VoxelGrid map;
        if (scene_maps) {
            map = (*scene_maps)[static_cast<std::size_t>(f)];
        } else {
            map = forward_encoder(encoder, voxelize_frame(ep, f, scene), tc.threads);
        }
        const std::size_t n = st.tmpl.size();
        std::vector<Vec3> dst(n);
        for (std::size_t i = 0; i < n; ++i) {
            GridCoord c = soft_argmax_correspond(std::span<const float>(st.tmpl.features[i]), map, tc.sharpness);
            dst[i] = mem_to_world(scene, c);
        }
        FrameEstimate est;
        est.frame = f;
        const int min_inliers =
            std::max(3, static_cast<int>(std::ceil(tc.min_inlier_fraction * static_cast<double>(n))));
        bool ok = n >= 3;
        RansacResult fit;
        if (ok) {
            try {
                fit = estimate_rigid_ransac(std::span<const Vec3>(st.tmpl.world_points),
                                            std::span<const Vec3>(dst), tc.ransac_iterations,
                                            tc.inlier_threshold,
                                            mix_seed(tc.seed, 0xf00 + static_cast<std::uint64_t>(f)));
                ok = fit.inlier_count >= min_inliers;
            } catch (const DegenerateConfiguration&) {
                ok = false;
            }
        }
        if (ok) {
            est.box = st.box0.transformed(fit.transform);
            est.motion = fit.transform;
            est.inlier_count = fit.inlier_count;
            est.lost = false;
        } else {
            est.box = st.current;
            est.motion = st.history.back().motion;
            est.inlier_count = 0;
            est.lost = true;
        }
        st.current = est.box;
        st.history.push_back(est);
    }
    return st;
}

// ---------------------------------------------------------------------------
// Trajectory files: one JSON record per frame.
// ---------------------------------------------------------------------------

inline nlohmann::json trajectory_to_json(const TrackState& st, const nlohmann::json& stamp) {
    nlohmann::json j;
    j["stamp"] = stamp;
    j["box0"] = {{"center", {st.box0.center.x, st.box0.center.y, st.box0.center.z}},
                 {"dims", {st.box0.dims.x, st.box0.dims.y, st.box0.dims.z}},
                 {"yaw", st.box0.yaw}};
    j["frames"] = nlohmann::json::array();
    for (const auto& e : st.history) {
        j["frames"].push_back({{"frame", e.frame},
                               {"center", {e.box.center.x, e.box.center.y, e.box.center.z}},
                               {"dims", {e.box.dims.x, e.box.dims.y, e.box.dims.z}},
                               {"yaw", e.box.yaw},
                               {"inliers", e.inlier_count},
                               {"lost", e.lost}});
    }
    return j;
}

struct TrajectoryRecord {
    std::vector<Box3D> boxes;
    std::vector<bool> lost;
};

inline TrajectoryRecord trajectory_from_json(const nlohmann::json& j) {
    TrajectoryRecord out;
    try {
        for (const auto& f : j.at("frames")) {
            Box3D b;
            b.center = {f.at("center").at(0), f.at("center").at(1), f.at("center").at(2)};
            b.dims = {f.at("dims").at(0), f.at("dims").at(1), f.at("dims").at(2)};
            b.yaw = f.at("yaw");
            out.boxes.push_back(b);
            out.lost.push_back(f.at("lost").get<bool>());
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("bad trajectory json: ") + e.what());
    }
    return out;
}

}  // namespace voxtrack
