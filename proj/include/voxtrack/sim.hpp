#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "voxtrack/box.hpp"
#include "voxtrack/common.hpp"
#include "voxtrack/geom.hpp"
#include "voxtrack/image.hpp"
#include "voxtrack/rng.hpp"

namespace voxtrack {

// ---------------------------------------------------------------------------
// Procedural value noise, used to texture surfaces so they are visually
// discriminable. Deterministic in (point, seed).
// ---------------------------------------------------------------------------

inline std::uint64_t lattice_hash(std::int64_t x, std::int64_t y, std::int64_t z, std::uint64_t seed) {
    std::uint64_t h = seed;
    h ^= static_cast<std::uint64_t>(x) * 0x9e3779b97f4a7c15ull;
    h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ull;
    h ^= static_cast<std::uint64_t>(y) * 0xd6e8feb86659fd93ull;
    h = (h ^ (h >> 27)) * 0x94d049bb133111ebull;
    h ^= static_cast<std::uint64_t>(z) * 0xff51afd7ed558ccdull;
    h = (h ^ (h >> 31)) * 0xc4ceb9fe1a85ec53ull;
    return h ^ (h >> 33);
}

/// Trilinearly interpolated lattice noise in [0, 1). When `period` is
/// positive the lattice wraps every `period` cells, so the pattern tiles:
/// surfaces become locally repetitive the way pavement or siding is, and a
/// local patch no longer identifies its world position.
inline double value_noise(const Vec3& p, std::uint64_t seed, int period = 0) {
    const double fx = std::floor(p.x), fy = std::floor(p.y), fz = std::floor(p.z);
    const auto ix = static_cast<std::int64_t>(fx);
    const auto iy = static_cast<std::int64_t>(fy);
    const auto iz = static_cast<std::int64_t>(fz);
    const double tx = p.x - fx, ty = p.y - fy, tz = p.z - fz;
    auto wrap = [&](std::int64_t v) {
        if (period <= 0) return v;
        std::int64_t m = v % period;
        return m < 0 ? m + period : m;
    };
    double acc = 0.0;
    for (int dx = 0; dx < 2; ++dx)
        for (int dy = 0; dy < 2; ++dy)
            for (int dz = 0; dz < 2; ++dz) {
                const double w = (dx ? tx : 1.0 - tx) * (dy ? ty : 1.0 - ty) * (dz ? tz : 1.0 - tz);
                const double v = static_cast<double>(
                                     lattice_hash(wrap(ix + dx), wrap(iy + dy), wrap(iz + dz), seed) >> 11) *
                                 0x1.0p-53;
                acc += w * v;
            }
    return acc;
}

// ---------------------------------------------------------------------------
// Scene description.
// ---------------------------------------------------------------------------

enum class PrimitiveShape { Cuboid, Sphere };

struct Primitive {
    PrimitiveShape shape = PrimitiveShape::Cuboid;
    RigidTransform pose;          // world-from-local (movers override per frame)
    Vec3 size{1.0, 1.0, 1.0};     // cuboid: full side lengths; sphere: size.x = radius
    Vec3 albedo{0.5, 0.5, 0.5};
    std::uint64_t texture_seed = 0;
};

struct Mover {
    Primitive primitive;                      // pose field unused; trajectory supplies it
    std::vector<RigidTransform> trajectory;   // world-from-local, one per frame
};

struct CameraView {
    CameraIntrinsics intrinsics;
    RigidTransform pose;        // world-from-camera
    Vec3 gain{1.0, 1.0, 1.0};   // per-channel exposure / white balance
    Vec3 offset{0.0, 0.0, 0.0};  // per-channel black-level shift
};

struct SceneSpec {
    std::vector<Primitive> statics;
    std::vector<Mover> movers;
    std::vector<std::vector<CameraView>> rig;  // [frame][camera]
    int frame_count = 0;
    std::uint64_t seed = 0;
    bool ground_plane = true;
    Vec3 ground_albedo{0.45, 0.5, 0.42};
    std::uint64_t ground_texture_seed = 1;
};

struct RenderedView {
    ImageRgb rgb;
    DepthMap depth;
};

struct Episode {
    SceneSpec scene;
    std::vector<std::vector<RenderedView>> frames;  // [frame][camera]
    std::vector<std::vector<Box3D>> mover_boxes;    // [frame][mover]
    bool is_static = true;
};

/// Ground-truth box of a mover at one frame.
inline Box3D mover_box(const Mover& m, int frame) {
    const RigidTransform& pose = m.trajectory[static_cast<std::size_t>(frame)];
    Box3D b;
    b.center = pose.translation;
    b.dims = m.primitive.size;
    b.yaw = wrap_angle(yaw_of_rotation(pose.rotation));
    return b;
}

// ---------------------------------------------------------------------------
// Ray casting.
// ---------------------------------------------------------------------------

struct RayHit {
    double t = -1.0;
    Vec3 point;
    Vec3 normal;
    Vec3 color;
    bool valid() const { return t > 0.0; }
};

namespace detail {

inline constexpr double kRayNear = 1e-4;

inline double texture_factor(const Vec3& p_tex, std::uint64_t seed, int channel, double freq, double amp,
                             int period) {
    return 1.0 - amp +
           2.0 * amp * value_noise(p_tex * freq, seed + static_cast<std::uint64_t>(channel) * 0x51ed2701, period);
}

/// Lambertian base with a specular lobe. The view-dependent term means the
/// same surface point renders with different colors from different cameras,
/// so appearance matching has to be learned, not read off.
inline Vec3 shade(const Vec3& albedo, const Vec3& p_tex, std::uint64_t tex_seed, const Vec3& normal,
                  const Vec3& view_dir, double freq = 1.4, double amp = 0.3, int period = 5) {
    static const Vec3 light = Vec3{0.35, 0.85, 0.4}.normalized();
    const double n_dot_l = std::max(0.0, normal.dot(light));
    const double lambert = 0.35 + 0.65 * n_dot_l;
    Vec3 reflect = normal * (2.0 * normal.dot(light)) - light;
    const double spec = 0.45 * std::pow(std::max(0.0, reflect.dot(-view_dir)), 4.0);
    Vec3 c{albedo.x * texture_factor(p_tex, tex_seed, 0, freq, amp, period),
           albedo.y * texture_factor(p_tex, tex_seed, 1, freq, amp, period),
           albedo.z * texture_factor(p_tex, tex_seed, 2, freq, amp, period)};
    c = c * lambert + Vec3{spec, spec, spec};
    return {std::clamp(c.x, 0.0, 1.0), std::clamp(c.y, 0.0, 1.0), std::clamp(c.z, 0.0, 1.0)};
}

/// Axis-aligned slab test in the primitive's local frame.
inline bool intersect_cuboid_local(const Vec3& o, const Vec3& d, const Vec3& half, double& t_hit,
                                   Vec3& n_local) {
    double t0 = kRayNear, t1 = 1e30;
    int axis = -1;
    double sign = 0.0;
    const double ov[3] = {o.x, o.y, o.z};
    const double dv[3] = {d.x, d.y, d.z};
    const double hv[3] = {half.x, half.y, half.z};
    for (int a = 0; a < 3; ++a) {
        if (std::abs(dv[a]) < 1e-12) {
            if (std::abs(ov[a]) > hv[a]) return false;
            continue;
        }
        double inv = 1.0 / dv[a];
        double ta = (-hv[a] - ov[a]) * inv;
        double tb = (hv[a] - ov[a]) * inv;
        double s = -1.0;
        if (ta > tb) {
            std::swap(ta, tb);
            s = 1.0;
        }
        if (ta > t0) {
            t0 = ta;
            axis = a;
            sign = s;
        }
        if (tb < t1) t1 = tb;
        if (t0 > t1) return false;
    }
    if (axis < 0) return false;  // ray starts inside; ignore
    t_hit = t0;
    n_local = {};
    if (axis == 0) n_local.x = sign;
    if (axis == 1) n_local.y = sign;
    if (axis == 2) n_local.z = sign;
    return true;
}

inline bool intersect_sphere(const Vec3& o, const Vec3& d, const Vec3& c, double r, double& t_hit) {
    Vec3 oc = o - c;
    const double b = oc.dot(d);
    const double disc = b * b - (oc.squared_norm() - r * r);
    if (disc < 0.0) return false;
    const double sq = std::sqrt(disc);
    double t = -b - sq;
    if (t < kRayNear) t = -b + sq;
    if (t < kRayNear) return false;
    t_hit = t;
    return true;
}

inline void consider_primitive(const Primitive& prim, const RigidTransform& pose, const Vec3& origin,
                               const Vec3& dir, RayHit& best) {
    if (prim.shape == PrimitiveShape::Cuboid) {
        RigidTransform inv = invert(pose);
        Vec3 o = inv.apply(origin);
        Vec3 d = inv.rotation * dir;
        double t;
        Vec3 n_local;
        if (!intersect_cuboid_local(o, d, prim.size / 2.0, t, n_local)) return;
        if (best.valid() && t >= best.t) return;
        Vec3 p_local = o + d * t;
        best.t = t;
        best.point = origin + dir * t;
        best.normal = pose.rotation * n_local;
        best.color = shade(prim.albedo, p_local, prim.texture_seed, best.normal, dir);
    } else {
        const Vec3 c = pose.translation;
        double t;
        if (!intersect_sphere(origin, dir, c, prim.size.x, t)) return;
        if (best.valid() && t >= best.t) return;
        best.t = t;
        best.point = origin + dir * t;
        best.normal = (best.point - c).normalized();
        // sample texture in the sphere's local frame so it moves with the body
        Vec3 p_local = invert(pose).apply(best.point);
        best.color = shade(prim.albedo, p_local, prim.texture_seed, best.normal, dir);
    }
}

}  // namespace detail

/// Nearest ray-scene intersection at one frame.
inline RayHit ray_cast(const SceneSpec& scene, int frame, const Vec3& origin, const Vec3& dir) {
    RayHit best;
    if (scene.ground_plane && dir.y < -1e-12) {
        const double t = -origin.y / dir.y;
        if (t > detail::kRayNear) {
            best.t = t;
            best.point = origin + dir * t;
            best.normal = {0.0, 1.0, 0.0};
            best.color = detail::shade(scene.ground_albedo, best.point, scene.ground_texture_seed,
                                       best.normal, dir, 0.8, 0.12, 2);
        }
    }
    for (const auto& prim : scene.statics) detail::consider_primitive(prim, prim.pose, origin, dir, best);
    for (const auto& mover : scene.movers)
        detail::consider_primitive(mover.primitive, mover.trajectory[static_cast<std::size_t>(frame)],
                                   origin, dir, best);
    return best;
}

/// Renders one camera at one frame. Depth is the camera-frame z of the hit;
/// sky pixels get depth 0.
inline RenderedView render_view(const SceneSpec& scene, int frame, const CameraView& cam) {
    const CameraIntrinsics& k = cam.intrinsics;
    RenderedView out;
    out.rgb = ImageRgb(k.width, k.height);
    out.depth = DepthMap(k.width, k.height);
    const RigidTransform world_from_cam = cam.pose;
    for (int v = 0; v < k.height; ++v) {
        for (int u = 0; u < k.width; ++u) {
            Vec3 d_cam{(u + 0.5 - k.cx) / k.fx, (v + 0.5 - k.cy) / k.fy, 1.0};
            Vec3 dir = (world_from_cam.rotation * d_cam).normalized();
            RayHit hit = ray_cast(scene, frame, world_from_cam.translation, dir);
            if (hit.valid()) {
                Vec3 p_cam = invert(world_from_cam).apply(hit.point);
                out.depth.at(u, v) = static_cast<float>(p_cam.z);
                out.rgb.at(u, v, 0) = static_cast<float>(std::clamp(hit.color.x * cam.gain.x + cam.offset.x, 0.0, 1.0));
                out.rgb.at(u, v, 1) = static_cast<float>(std::clamp(hit.color.y * cam.gain.y + cam.offset.y, 0.0, 1.0));
                out.rgb.at(u, v, 2) = static_cast<float>(std::clamp(hit.color.z * cam.gain.z + cam.offset.z, 0.0, 1.0));
            } else {
                out.rgb.at(u, v, 0) = static_cast<float>(std::clamp(0.55 * cam.gain.x + cam.offset.x, 0.0, 1.0));
                out.rgb.at(u, v, 1) = static_cast<float>(std::clamp(0.70 * cam.gain.y + cam.offset.y, 0.0, 1.0));
                out.rgb.at(u, v, 2) = static_cast<float>(std::clamp(0.85 * cam.gain.z + cam.offset.z, 0.0, 1.0));
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Episode generation.
// ---------------------------------------------------------------------------

struct SimConfig {
    int frames = 9;  // an initialization frame plus eight tracked steps
    int cameras = 4;
    int image_width = 64;
    int image_height = 64;
    double focal = 40.0;
    double camera_radius_min = 10.0;
    double camera_radius_max = 14.0;
    double camera_elevation_min = 0.14;  // radians above horizon
    double camera_elevation_max = 0.60;
    int min_static_primitives = 4;
    int max_static_primitives = 7;
    int min_movers = 1;
    int max_movers = 3;
    double mover_spawn_radius = 7.0;
    double parked_probability = 0.25;
    double slow_probability = 0.25;  // remainder moves fast
    double exposure_jitter = 0.3;    // per-view color gain range
    double offset_jitter = 0.08;     // per-view black-level range
    double depth_noise_sigma = 0.0;       // optional sensor noise (meters)
    double pose_noise_translation = 0.0;  // optional egomotion error (meters)
    double pose_noise_rotation = 0.0;     // optional egomotion error (radians)
};

enum class EpisodeKind { Static, Dynamic };

namespace detail {

inline RigidTransform look_at(const Vec3& eye, const Vec3& target) {
    const Vec3 up{0.0, 1.0, 0.0};
    Vec3 z = (target - eye).normalized();
    Vec3 x = z.cross(up);
    if (x.norm() < 1e-6) x = {1.0, 0.0, 0.0};
    x = x.normalized();
    Vec3 y = z.cross(x);
    Mat3 r;
    r.m = {x.x, y.x, z.x, x.y, y.y, z.y, x.z, y.z, z.z};
    return {r, eye};
}

struct FootprintCircle {
    double x, z, r;
};

inline bool circles_clear(const FootprintCircle& a, const FootprintCircle& b, double margin) {
    const double dx = a.x - b.x, dz = a.z - b.z;
    const double need = a.r + b.r + margin;
    return dx * dx + dz * dz >= need * need;
}

}  // namespace detail

/// Seeded, deterministic episode generator: a textured ground plane, a few
/// static primitives, a perturbed hemisphere camera rig, and (for dynamic
/// episodes) rigid movers with ground-truth trajectories. Mover paths are
/// rejection-sampled so they never collide with static geometry.
inline Episode generate_episode(EpisodeKind kind, std::uint64_t seed, const SimConfig& cfg = {}) {
    Rng rng(mix_seed(seed, 0xe715));
    Episode ep;
    ep.is_static = kind == EpisodeKind::Static;
    SceneSpec& scene = ep.scene;
    scene.seed = seed;
    scene.frame_count = cfg.frames;
    scene.ground_texture_seed = 0x6702;  // one world, one pavement

    // A small shared palette: many surfaces look alike, so local appearance
    // alone cannot identify a location.
    static const Vec3 palette[5] = {{0.55, 0.53, 0.5},
                                    {0.42, 0.48, 0.55},
                                    {0.6, 0.45, 0.38},
                                    {0.38, 0.52, 0.4},
                                    {0.58, 0.58, 0.45}};
    auto palette_albedo = [&] { return palette[rng.uniform_index(5)]; };

    // Static primitives come from a fixed global catalog of archetypes.
    // Instances of an archetype share size, albedo, and texture across the
    // whole dataset, like the repeated street furniture and facades of a
    // city: telling two instances apart requires looking at their
    // surroundings, not at the object itself.
    struct Archetype {
        PrimitiveShape shape;
        Vec3 size;
        Vec3 albedo;
        std::uint64_t texture_seed;
        double yaw = 0.0;  // shared: clones shade identically
    };
    std::vector<Archetype> catalog;
    {
        Rng cat_rng(0xca7a106);
        for (int a = 0; a < 4; ++a) {
            Archetype arch;
            if (a < 3) {
                arch.shape = PrimitiveShape::Cuboid;
                // integer footprints on the voxel lattice: instances at
                // quantized poses voxelize into identical local patterns
                arch.size = {double(cat_rng.uniform_int(1, 3)), cat_rng.uniform(1.0, 2.5),
                             double(cat_rng.uniform_int(1, 3))};
            } else {
                arch.shape = PrimitiveShape::Sphere;
                const double r = cat_rng.uniform(0.6, 1.4);
                arch.size = {r, r, r};
            }
            arch.albedo = palette[cat_rng.uniform_index(5)];
            arch.texture_seed = mix_seed(0x5a17, static_cast<std::uint64_t>(a));
            arch.yaw = 1.5707963267948966 * cat_rng.uniform_int(0, 3);
            catalog.push_back(arch);
        }
    }

    std::vector<detail::FootprintCircle> occupied;
    const int n_static = rng.uniform_int(cfg.min_static_primitives, cfg.max_static_primitives);
    for (int i = 0; i < n_static; ++i) {
        for (int attempt = 0; attempt < 64; ++attempt) {
            const Archetype& arch = catalog[rng.uniform_index(catalog.size())];
            Primitive p;
            p.shape = arch.shape;
            p.size = arch.size;
            p.albedo = arch.albedo;
            p.texture_seed = arch.texture_seed;
            const double ang = rng.uniform(0.0, 6.283185307179586);
            const double rad = rng.uniform(2.5, 13.0);
            double px = rad * std::cos(ang), pz = rad * std::sin(ang);
            double foot_r;
            px = std::round(px);
            pz = std::round(pz);
            if (p.shape == PrimitiveShape::Cuboid) {
                p.pose = {Mat3::rotation_y(arch.yaw), {px, p.size.y / 2.0, pz}};
                foot_r = 0.5 * std::hypot(p.size.x, p.size.z);
            } else {
                p.pose = RigidTransform::from_translation({px, p.size.x, pz});
                foot_r = p.size.x;
            }
            detail::FootprintCircle c{px, pz, foot_r};
            bool clear = true;
            for (const auto& o : occupied)
                if (!detail::circles_clear(c, o, 0.3)) clear = false;
            if (!clear) continue;
            occupied.push_back(c);
            scene.statics.push_back(p);
            break;
        }
    }

    // camera rig: hemisphere viewpoints, re-perturbed every frame
    const double base_az = rng.uniform(0.0, 6.283185307179586);
    std::vector<double> cam_az(static_cast<std::size_t>(cfg.cameras));
    for (int c = 0; c < cfg.cameras; ++c)
        cam_az[static_cast<std::size_t>(c)] = base_az + 6.283185307179586 * c / cfg.cameras;
    CameraIntrinsics intr{cfg.focal, cfg.focal, cfg.image_width / 2.0, cfg.image_height / 2.0,
                          cfg.image_width, cfg.image_height};
    scene.rig.resize(static_cast<std::size_t>(cfg.frames));
    for (int f = 0; f < cfg.frames; ++f) {
        for (int c = 0; c < cfg.cameras; ++c) {
            const double az = cam_az[static_cast<std::size_t>(c)] + rng.uniform(-0.25, 0.25);
            const double elev = rng.uniform(cfg.camera_elevation_min, cfg.camera_elevation_max);
            const double rad = rng.uniform(cfg.camera_radius_min, cfg.camera_radius_max);
            Vec3 eye{rad * std::cos(elev) * std::cos(az), rad * std::sin(elev),
                     rad * std::cos(elev) * std::sin(az)};
            Vec3 target{rng.uniform(-1.5, 1.5), rng.uniform(0.0, 1.0), rng.uniform(-1.5, 1.5)};
            Vec3 gain{rng.uniform(1.0 - cfg.exposure_jitter, 1.0 + cfg.exposure_jitter),
                      rng.uniform(1.0 - cfg.exposure_jitter, 1.0 + cfg.exposure_jitter),
                      rng.uniform(1.0 - cfg.exposure_jitter, 1.0 + cfg.exposure_jitter)};
            Vec3 offset{rng.uniform(-cfg.offset_jitter, cfg.offset_jitter),
                        rng.uniform(-cfg.offset_jitter, cfg.offset_jitter),
                        rng.uniform(-cfg.offset_jitter, cfg.offset_jitter)};
            scene.rig[static_cast<std::size_t>(f)].push_back({intr, detail::look_at(eye, target), gain, offset});
        }
    }

    // movers (dynamic only): straight-ish paths with a small yaw rate
    if (kind == EpisodeKind::Dynamic) {
        // vehicles come from a fixed global catalog as well
        struct VehicleType {
            Vec3 size;
            Vec3 albedo;
            std::uint64_t texture_seed;
        };
        std::vector<VehicleType> vehicles;
        {
            Rng veh_rng(0x7e41c1e);
            for (int t = 0; t < 2; ++t)
                vehicles.push_back({{veh_rng.uniform(2.8, 4.6), veh_rng.uniform(1.4, 2.2), veh_rng.uniform(1.6, 2.4)},
                                    palette[veh_rng.uniform_index(5)],
                                    mix_seed(0x3071, static_cast<std::uint64_t>(t))});
        }
        const int n_movers = rng.uniform_int(cfg.min_movers, cfg.max_movers);
        for (int i = 0; i < n_movers; ++i) {
            for (int attempt = 0; attempt < 200; ++attempt) {
                const VehicleType& vt = vehicles[rng.uniform_index(vehicles.size())];
                Mover m;
                m.primitive.shape = PrimitiveShape::Cuboid;
                m.primitive.size = vt.size;
                m.primitive.albedo = vt.albedo;
                m.primitive.texture_seed = vt.texture_seed;

                const double ang = rng.uniform(0.0, 6.283185307179586);
                const double rad = rng.uniform(0.0, cfg.mover_spawn_radius);
                double px = rad * std::cos(ang), pz = rad * std::sin(ang);
                double heading = rng.uniform(-3.14159, 3.14159);
                double speed;
                const double category = rng.uniform();
                const bool must_move = i == 0;  // every dynamic episode has a real mover
                if (!must_move && category < cfg.parked_probability)
                    speed = rng.uniform(0.0, 0.04);
                else if (!must_move && category < cfg.parked_probability + cfg.slow_probability)
                    speed = rng.uniform(0.15, 0.45);
                else
                    speed = rng.uniform(0.45, 0.85);
                const double yaw_rate = speed > 0.05 ? rng.uniform(-0.04, 0.04) : 0.0;

                const double foot_r = 0.5 * std::hypot(m.primitive.size.x, m.primitive.size.z);
                std::vector<detail::FootprintCircle> path;
                double x = px, z = pz, yaw = heading;
                bool ok = true;
                for (int f = 0; f < cfg.frames; ++f) {
                    detail::FootprintCircle c{x, z, foot_r};
                    if (std::hypot(x, z) > 13.0) ok = false;
                    for (const auto& o : occupied)
                        if (!detail::circles_clear(c, o, 0.8)) ok = false;
                    if (!ok) break;
                    path.push_back(c);
                    m.trajectory.push_back(
                        {Mat3::rotation_y(yaw), {x, m.primitive.size.y / 2.0, z}});
                    x += speed * std::cos(yaw);
                    z -= speed * std::sin(yaw);
                    yaw += yaw_rate;
                }
                if (!ok) continue;
                // the tracked object must be observed: at every frame, at
                // least two cameras must see its top face unoccluded
                for (int f = 0; f < cfg.frames && ok; ++f) {
                    Vec3 probe = m.trajectory[static_cast<std::size_t>(f)].apply(
                        {0.0, m.primitive.size.y / 2.0 - 0.05, 0.0});
                    int seen = 0;
                    for (const auto& cam : scene.rig[static_cast<std::size_t>(f)]) {
                        Vec3 p_cam = invert(cam.pose).apply(probe);
                        if (p_cam.z <= 0.5) continue;
                        Pixel px_probe = project(cam.intrinsics, p_cam);
                        if (px_probe.u < 2 || px_probe.u > cam.intrinsics.width - 2 || px_probe.v < 2 ||
                            px_probe.v > cam.intrinsics.height - 2)
                            continue;
                        Vec3 dir = (probe - cam.pose.translation).normalized();
                        // temporarily cast against statics and this mover only
                        RayHit hit;
                        for (const auto& sp : scene.statics) detail::consider_primitive(sp, sp.pose, cam.pose.translation, dir, hit);
                        const double range = (probe - cam.pose.translation).norm();
                        if (!hit.valid() || hit.t > range - 0.05) ++seen;
                    }
                    if (seen < 2) ok = false;
                }
                if (!ok) continue;
                for (const auto& c : path) occupied.push_back(c);
                scene.movers.push_back(std::move(m));
                break;
            }
        }
    }

    // render
    ep.frames.resize(static_cast<std::size_t>(cfg.frames));
    for (int f = 0; f < cfg.frames; ++f)
        for (int c = 0; c < cfg.cameras; ++c)
            ep.frames[static_cast<std::size_t>(f)].push_back(
                render_view(scene, f, scene.rig[static_cast<std::size_t>(f)][static_cast<std::size_t>(c)]));

    if (cfg.depth_noise_sigma > 0.0) {
        Rng noise(mix_seed(seed, 0xd011));
        for (auto& frame : ep.frames)
            for (auto& view : frame)
                for (auto& d : view.depth.data)
                    if (d > 0.0f) d = static_cast<float>(std::max(0.01, d + noise.normal(0.0, cfg.depth_noise_sigma)));
    }
    if (cfg.pose_noise_translation > 0.0 || cfg.pose_noise_rotation > 0.0) {
        // the renders use true poses; the *reported* rig is perturbed
        Rng noise(mix_seed(seed, 0x9e11));
        for (auto& frame : scene.rig)
            for (auto& cam : frame) {
                cam.pose.translation += Vec3{noise.normal(0.0, cfg.pose_noise_translation),
                                             noise.normal(0.0, cfg.pose_noise_translation),
                                             noise.normal(0.0, cfg.pose_noise_translation)};
                cam.pose.rotation =
                    cam.pose.rotation * Mat3::rotation_y(noise.normal(0.0, cfg.pose_noise_rotation));
            }
    }

    // ground-truth boxes
    ep.mover_boxes.resize(static_cast<std::size_t>(cfg.frames));
    for (int f = 0; f < cfg.frames; ++f)
        for (const auto& m : scene.movers)
            ep.mover_boxes[static_cast<std::size_t>(f)].push_back(mover_box(m, f));

    return ep;
}

}  // namespace voxtrack
