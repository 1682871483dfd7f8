#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "voxtrack/common.hpp"
#include "voxtrack/linalg.hpp"

namespace voxtrack {

/// Rigid SE(3) transform: p' = rotation * p + translation.
/// Compositions re-orthonormalize lazily once drift exceeds 1e-8, so chains of
/// thousands of transforms stay valid rotations.
struct RigidTransform {
    Mat3 rotation;
    Vec3 translation;

    static RigidTransform identity() { return {}; }
    static RigidTransform from_translation(const Vec3& t) { return {Mat3::identity(), t}; }

    Vec3 apply(const Vec3& p) const { return rotation * p + translation; }

    bool valid(double tol = 1e-9) const {
        return rotation.orthonormality_drift() <= tol && std::abs(rotation.det() - 1.0) <= tol &&
               translation.finite();
    }
};

/// result = a after b, i.e. apply(result, p) == apply(a, apply(b, p)).
inline RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
    RigidTransform r{a.rotation * b.rotation, a.rotation * b.translation + a.translation};
    if (r.rotation.orthonormality_drift() > 1e-8) r.rotation = nearest_rotation(r.rotation);
    return r;
}

inline RigidTransform invert(const RigidTransform& t) {
    Mat3 rt = t.rotation.transposed();
    return {rt, -(rt * t.translation)};
}

struct Pixel {
    double u = 0.0;
    double v = 0.0;
    double depth = 0.0;
};

struct CameraIntrinsics {
    double fx = 1.0, fy = 1.0;  // focal lengths, pixels
    double cx = 0.0, cy = 0.0;  // principal point, pixels
    int width = 1, height = 1;

    bool valid() const { return fx > 0.0 && fy > 0.0 && width >= 1 && height >= 1; }
};

/// Pinhole projection of a camera-frame point (camera looks down +z).
inline Pixel project(const CameraIntrinsics& k, const Vec3& p_cam) {
    if (p_cam.z <= 0.0) throw NonPositiveDepth("project: point is behind the camera");
    return {k.fx * p_cam.x / p_cam.z + k.cx, k.fy * p_cam.y / p_cam.z + k.cy, p_cam.z};
}

inline Vec3 unproject(const CameraIntrinsics& k, double u, double v, double depth) {
    if (depth <= 0.0) throw NonPositiveDepth("unproject: depth must be positive");
    return {(u - k.cx) * depth / k.fx, (v - k.cy) * depth / k.fy, depth};
}

/// Least-squares rigid fit: returns T minimizing sum ||T * src_i - dst_i||^2
/// (Kabsch, with the determinant-corrected SVD so reflections are excluded).
inline RigidTransform fit_rigid_least_squares(std::span<const Vec3> src, std::span<const Vec3> dst) {
    if (src.size() != dst.size()) throw ShapeMismatch("fit_rigid_least_squares: size mismatch");
    const std::size_t n = src.size();
    if (n < 3) throw DegenerateConfiguration("fit_rigid_least_squares: need at least 3 points");

    Vec3 cs{}, cd{};
    for (std::size_t i = 0; i < n; ++i) {
        cs += src[i];
        cd += dst[i];
    }
    cs = cs / static_cast<double>(n);
    cd = cd / static_cast<double>(n);

    Mat3 h = Mat3::zero();
    for (std::size_t i = 0; i < n; ++i) {
        Vec3 a = src[i] - cs;
        Vec3 b = dst[i] - cd;
        h(0, 0) += a.x * b.x;
        h(0, 1) += a.x * b.y;
        h(0, 2) += a.x * b.z;
        h(1, 0) += a.y * b.x;
        h(1, 1) += a.y * b.y;
        h(1, 2) += a.y * b.z;
        h(2, 0) += a.z * b.x;
        h(2, 1) += a.z * b.y;
        h(2, 2) += a.z * b.z;
    }

    Svd3 s = svd3(h);
    // Collinear sources leave the second singular value at zero: the rotation
    // about the point axis is then unconstrained.
    double scale = std::abs(s.sigma.x);
    if (s.sigma.y <= 1e-12 * std::max(scale, 1.0))
        throw DegenerateConfiguration("fit_rigid_least_squares: collinear points");

    Mat3 r = s.v * s.u.transposed();
    if (r.det() < 0.0) {
        Mat3 v = s.v;
        v.set_col(2, -v.col(2));
        r = v * s.u.transposed();
    }
    return {r, cd - r * cs};
}

inline RigidTransform fit_rigid_least_squares(const std::vector<Vec3>& src, const std::vector<Vec3>& dst) {
    return fit_rigid_least_squares(std::span<const Vec3>(src), std::span<const Vec3>(dst));
}

/// Rotation angle in radians (for error reporting).
inline double rotation_angle(const Mat3& r) {
    double c = (r(0, 0) + r(1, 1) + r(2, 2) - 1.0) / 2.0;
    c = std::max(-1.0, std::min(1.0, c));
    return std::acos(c);
}

/// Best-fit rotation angle about the world vertical (y) axis.
inline double yaw_of_rotation(const Mat3& r) {
    return std::atan2(r(0, 2) - r(2, 0), r(0, 0) + r(2, 2));
}

/// Wrap to (-pi, pi].
inline double wrap_angle(double a) {
    const double pi = 3.14159265358979323846;
    a = std::fmod(a, 2.0 * pi);
    if (a <= -pi) a += 2.0 * pi;
    if (a > pi) a -= 2.0 * pi;
    return a;
}

}  // namespace voxtrack
