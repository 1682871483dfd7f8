#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "voxtrack/episode_io.hpp"
#include "voxtrack/grid.hpp"
#include "voxtrack/sim.hpp"

using namespace voxtrack;

namespace {

bool views_equal(const RenderedView& a, const RenderedView& b) {
    return a.rgb.data == b.rgb.data && a.depth.data == b.depth.data;
}

bool point_inside_static(const SceneSpec& scene, const Vec3& p) {
    for (const auto& prim : scene.statics) {
        Vec3 local = invert(prim.pose).apply(p);
        if (prim.shape == PrimitiveShape::Cuboid) {
            if (std::abs(local.x) <= prim.size.x / 2 && std::abs(local.y) <= prim.size.y / 2 &&
                std::abs(local.z) <= prim.size.z / 2)
                return true;
        } else {
            if (local.norm() <= prim.size.x) return true;
        }
    }
    return false;
}

}  // namespace

TEST_CASE("render_view: analytic cases") {
    SECTION("camera facing empty sky sees depth 0 everywhere") {
        SceneSpec scene;
        scene.frame_count = 1;
        CameraView cam;
        cam.intrinsics = {40.0, 40.0, 32.0, 32.0, 64, 64};
        cam.pose = detail::look_at({0.0, 5.0, 0.0}, {0.0, 50.0, 1.0});
        RenderedView view = render_view(scene, 0, cam);
        for (float d : view.depth.data) REQUIRE(d == 0.0f);
    }

    SECTION("looking straight down at the ground plane gives constant depth") {
        SceneSpec scene;
        scene.frame_count = 1;
        const double h = 7.5;
        CameraView cam;
        cam.intrinsics = {40.0, 40.0, 32.0, 32.0, 64, 64};
        cam.pose = detail::look_at({0.0, h, 0.0}, {0.0, 0.0, 0.0});
        RenderedView view = render_view(scene, 0, cam);
        for (float d : view.depth.data) REQUIRE(d == Catch::Approx(h).margin(1e-6));
    }

    SECTION("unit sphere on the optical axis") {
        SceneSpec scene;
        scene.frame_count = 1;
        scene.ground_plane = false;
        Primitive sphere;
        sphere.shape = PrimitiveShape::Sphere;
        sphere.size = {1.0, 1.0, 1.0};
        const double d = 6.0;
        sphere.pose = RigidTransform::from_translation({0.0, 0.0, d});
        scene.statics.push_back(sphere);
        CameraView cam;
        cam.intrinsics = {40.0, 40.0, 32.5, 32.5, 65, 65};
        cam.pose = RigidTransform::identity();
        RenderedView view = render_view(scene, 0, cam);
        REQUIRE(view.depth.at(32, 32) == Catch::Approx(d - 1.0).margin(1e-6));
    }
}

TEST_CASE("rendered depth is consistent with scene geometry") {
    Episode ep = generate_episode(EpisodeKind::Dynamic, 77);
    const auto& cam = ep.scene.rig[0][0];
    const auto& view = ep.frames[0][0];
    int checked = 0;
    for (int v = 0; v < cam.intrinsics.height; v += 7) {
        for (int u = 0; u < cam.intrinsics.width; u += 7) {
            float d = view.depth.at(u, v);
            if (!(d > 0.0f)) continue;
            // exact-geometry round trip: unproject the true depth, re-intersect
            Vec3 dir_px = (cam.pose.rotation *
                           Vec3{(u + 0.5 - cam.intrinsics.cx) / cam.intrinsics.fx,
                                (v + 0.5 - cam.intrinsics.cy) / cam.intrinsics.fy, 1.0})
                              .normalized();
            RayHit ref = ray_cast(ep.scene, 0, cam.pose.translation, dir_px);
            REQUIRE(ref.valid());
            double exact_depth = invert(cam.pose).apply(ref.point).z;
            Vec3 p_world = cam.pose.apply(unproject(cam.intrinsics, u + 0.5, v + 0.5, exact_depth));
            REQUIRE((p_world - ref.point).norm() < 1e-6);
            // stored f32 depth agrees to quantization precision
            REQUIRE(std::abs(exact_depth - d) <= 1e-6 * std::max(1.0, exact_depth));
            ++checked;
        }
    }
    REQUIRE(checked > 20);
}

TEST_CASE("multiview consistency for static content") {
    Episode ep = generate_episode(EpisodeKind::Static, 78);
    const auto& cam_a = ep.scene.rig[0][0];
    const auto& cam_b = ep.scene.rig[0][2];
    const auto& view_a = ep.frames[0][0];
    int agreements = 0;
    for (int v = 2; v < cam_a.intrinsics.height; v += 5) {
        for (int u = 2; u < cam_a.intrinsics.width; u += 5) {
            float d = view_a.depth.at(u, v);
            if (!(d > 0.0f)) continue;
            // Surface point in exact double precision (the stored f32 depth is
            // checked for quantization-level agreement below).
            Vec3 dir_a = (cam_a.pose.rotation *
                          Vec3{(u + 0.5 - cam_a.intrinsics.cx) / cam_a.intrinsics.fx,
                               (v + 0.5 - cam_a.intrinsics.cy) / cam_a.intrinsics.fy, 1.0})
                             .normalized();
            RayHit hit_a = ray_cast(ep.scene, 0, cam_a.pose.translation, dir_a);
            REQUIRE(hit_a.valid());
            Vec3 p_world = hit_a.point;
            double exact_depth = invert(cam_a.pose).apply(p_world).z;
            REQUIRE(std::abs(exact_depth - d) <= 1e-6 * std::max(1.0, exact_depth));

            // Cast from camera B toward the point; if B sees the same surface
            // (no occluder), the hit must coincide with the point.
            Vec3 origin_b = cam_b.pose.translation;
            Vec3 dir = (p_world - origin_b).normalized();
            RayHit hit = ray_cast(ep.scene, 0, origin_b, dir);
            if (!hit.valid()) continue;
            const double expected_range = (p_world - origin_b).norm();
            if (std::abs(hit.t - expected_range) < 1e-6) {
                REQUIRE((hit.point - p_world).norm() < 1e-6);
                ++agreements;
            } else {
                REQUIRE(hit.t < expected_range);  // occluders may only be nearer
            }
        }
    }
    REQUIRE(agreements > 20);
}

TEST_CASE("generate_episode is deterministic and honors the kind") {
    SimConfig cfg;
    cfg.frames = 3;
    Episode a = generate_episode(EpisodeKind::Dynamic, 42, cfg);
    Episode b = generate_episode(EpisodeKind::Dynamic, 42, cfg);
    REQUIRE(a.scene.statics.size() == b.scene.statics.size());
    REQUIRE(a.scene.movers.size() == b.scene.movers.size());
    for (std::size_t f = 0; f < a.frames.size(); ++f)
        for (std::size_t c = 0; c < a.frames[f].size(); ++c)
            REQUIRE(views_equal(a.frames[f][c], b.frames[f][c]));

    Episode s = generate_episode(EpisodeKind::Static, 42, cfg);
    REQUIRE(s.is_static);
    REQUIRE(s.scene.movers.empty());
    REQUIRE(s.mover_boxes[0].empty());

    REQUIRE(!a.is_static);
    REQUIRE(a.scene.movers.size() >= 1);
}

TEST_CASE("mover ground truth matches its trajectory and avoids static geometry") {
    SimConfig cfg;
    cfg.frames = 8;
    for (std::uint64_t seed : {7ull, 8ull, 9ull, 10ull}) {
        Episode ep = generate_episode(EpisodeKind::Dynamic, seed, cfg);
        for (std::size_t m = 0; m < ep.scene.movers.size(); ++m) {
            const Mover& mover = ep.scene.movers[m];
            REQUIRE(mover.trajectory.size() == static_cast<std::size_t>(cfg.frames));
            for (int f = 0; f < cfg.frames; ++f) {
                const Box3D& box = ep.mover_boxes[static_cast<std::size_t>(f)][m];
                REQUIRE((box.center - mover.trajectory[static_cast<std::size_t>(f)].translation).norm() == 0.0);
                REQUIRE(box.valid());
                // sample points inside the mover; none may fall in static geometry
                Rng rng(mix_seed(seed, static_cast<std::uint64_t>(f) * 100 + m));
                for (int i = 0; i < 40; ++i) {
                    Vec3 local{rng.uniform(-0.5, 0.5) * box.dims.x, rng.uniform(-0.5, 0.5) * box.dims.y,
                               rng.uniform(-0.5, 0.5) * box.dims.z};
                    Vec3 p = mover.trajectory[static_cast<std::size_t>(f)].apply(local);
                    REQUIRE(!point_inside_static(ep.scene, p));
                }
            }
        }
    }
}

TEST_CASE("episode io round-trips bit-exactly") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "voxtrack_test_episode";
    fs::remove_all(dir);
    SimConfig cfg;
    cfg.frames = 2;
    cfg.cameras = 2;
    cfg.image_width = 32;
    cfg.image_height = 32;
    Episode ep = generate_episode(EpisodeKind::Dynamic, 5, cfg);
    write_episode(dir.string(), ep);
    Episode back = read_episode(dir.string());

    REQUIRE(back.is_static == ep.is_static);
    REQUIRE(back.scene.frame_count == ep.scene.frame_count);
    REQUIRE(back.scene.statics.size() == ep.scene.statics.size());
    REQUIRE(back.scene.movers.size() == ep.scene.movers.size());
    for (std::size_t f = 0; f < ep.frames.size(); ++f)
        for (std::size_t c = 0; c < ep.frames[f].size(); ++c)
            REQUIRE(views_equal(back.frames[f][c], ep.frames[f][c]));
    for (std::size_t f = 0; f < ep.frames.size(); ++f) {
        for (std::size_t c = 0; c < ep.scene.rig[f].size(); ++c) {
            REQUIRE((back.scene.rig[f][c].pose.translation - ep.scene.rig[f][c].pose.translation).norm() == 0.0);
            for (int i = 0; i < 9; ++i)
                REQUIRE(back.scene.rig[f][c].pose.rotation.m[static_cast<std::size_t>(i)] ==
                        ep.scene.rig[f][c].pose.rotation.m[static_cast<std::size_t>(i)]);
        }
        for (std::size_t m = 0; m < ep.mover_boxes[f].size(); ++m) {
            REQUIRE((back.mover_boxes[f][m].center - ep.mover_boxes[f][m].center).norm() == 0.0);
            REQUIRE(back.mover_boxes[f][m].yaw == ep.mover_boxes[f][m].yaw);
        }
    }
    fs::remove_all(dir);
}

TEST_CASE("episode io rejects corruption") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "voxtrack_test_episode_bad";
    fs::remove_all(dir);
    SimConfig cfg;
    cfg.frames = 2;
    cfg.cameras = 2;
    cfg.image_width = 16;
    cfg.image_height = 16;
    Episode ep = generate_episode(EpisodeKind::Static, 6, cfg);
    write_episode(dir.string(), ep);

    SECTION("truncated depth file") {
        fs::path depth = dir / view_file_name(1, 0, "depth");
        auto size = fs::file_size(depth);
        fs::resize_file(depth, size / 2);
        REQUIRE_THROWS_AS(read_episode(dir.string()), CorruptEpisode);
    }

    SECTION("missing raw file") {
        fs::remove(dir / view_file_name(0, 1, "rgb"));
        REQUIRE_THROWS_AS(read_episode(dir.string()), CorruptEpisode);
    }

    SECTION("frame count exceeding stored arrays") {
        std::ifstream in(dir / "episode.json");
        nlohmann::json j;
        in >> j;
        in.close();
        j["frame_count"] = 3;
        j["rig"].push_back(j["rig"][0]);
        for (auto& m : j["movers"]) m["trajectory"].push_back(m["trajectory"][0]);
        std::ofstream out(dir / "episode.json");
        out << j.dump();
        out.close();
        REQUIRE_THROWS_AS(read_episode(dir.string()), CorruptEpisode);
    }
    fs::remove_all(dir);
}

TEST_CASE("manifest round-trip and filtering") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "voxtrack_test_manifest";
    fs::remove_all(dir);
    DatasetManifest m;
    m.seed = 99;
    m.episodes = {{"ep000", true}, {"ep001", false}, {"ep002", true}};
    write_manifest(dir.string(), m);
    DatasetManifest back = read_manifest(dir.string());
    REQUIRE(back.seed == 99);
    REQUIRE(back.episodes.size() == 3);
    REQUIRE(back.filtered(true).size() == 2);
    REQUIRE(back.filtered(false).size() == 1);
    REQUIRE(back.filtered(false)[0].path == "ep001");
    fs::remove_all(dir);
    REQUIRE_THROWS_AS(read_manifest(dir.string()), DataMissing);
}

TEST_CASE("voxelizing a rendered ground plane produces a single y-slab") {
    SceneSpec scene;
    scene.frame_count = 1;
    CameraView cam;
    cam.intrinsics = {40.0, 40.0, 32.0, 32.0, 64, 64};
    cam.pose = detail::look_at({6.0, 6.0, 6.0}, {0.0, 0.0, 0.0});
    RenderedView view = render_view(scene, 0, cam);

    GridSpec spec;
    spec.center = {0.0, 2.0, 0.0};
    spec.extent = {16.0, 4.0, 16.0};
    spec.w = 32;
    spec.h = 8;
    spec.d = 32;
    VoxelGrid g = voxelize_rgbd(view.rgb, view.depth, cam.intrinsics, cam.pose, spec);
    REQUIRE(occupancy_summary(g).occupied_count > 100);
    // ground plane y=0 lies in the lowest voxel slab (y cell 0 spans [0, 0.5))
    for (int x = 0; x < spec.w; ++x)
        for (int y = 0; y < spec.h; ++y)
            for (int z = 0; z < spec.d; ++z)
                if (g.at(x, y, z, 3) > 0.5f) REQUIRE(y == 0);
}

TEST_CASE("voxelization is equivariant to rigid camera motion") {
    // Voxelizing a transformed camera view with the compensating
    // reference_pose yields the same occupied voxel set.
    Episode ep = generate_episode(EpisodeKind::Static, 91);
    const auto& cam = ep.scene.rig[0][0];
    const auto& view = ep.frames[0][0];

    GridSpec spec;
    spec.center = {0.0, 2.0, 0.0};
    spec.extent = {16.0, 4.0, 16.0};
    spec.w = 16;
    spec.h = 4;
    spec.d = 16;
    VoxelGrid base = voxelize_rgbd(view.rgb, view.depth, cam.intrinsics, cam.pose, spec);

    Rng rng(92);
    RigidTransform motion{Mat3::rotation_y(0.7) * Mat3::rotation_x(0.1), {1.5, 0.3, -2.0}};
    RigidTransform moved_cam = compose(motion, cam.pose);
    GridSpec moved_spec = spec;
    moved_spec.reference_pose = motion;
    VoxelGrid moved = voxelize_rgbd(view.rgb, view.depth, cam.intrinsics, moved_cam, moved_spec);

    std::size_t diff = 0, occ = 0;
    for (std::size_t i = 0; i < base.voxel_count(); ++i) {
        bool a = base.data[i * 4 + 3] > 0.5f;
        bool b = moved.data[i * 4 + 3] > 0.5f;
        occ += a;
        diff += (a != b);
    }
    REQUIRE(occ > 50);
    // boundary flips only: allow a small fraction of disagreement
    REQUIRE(diff < occ / 20 + 2);
}
