#pragma once

#include <array>
#include <cmath>

#include "voxtrack/geom.hpp"

namespace voxtrack {

/// Yaw-oriented 3D bounding box. `dims` is (length, height, width): extent
/// along the box's local x, the world vertical y, and local z. Yaw rotates
/// about the vertical axis and lives in (-pi, pi].
struct Box3D {
    Vec3 center;
    Vec3 dims{1.0, 1.0, 1.0};
    double yaw = 0.0;

    bool valid() const {
        const double pi = 3.14159265358979323846;
        return dims.x > 0.0 && dims.y > 0.0 && dims.z > 0.0 && yaw > -pi - 1e-12 && yaw <= pi + 1e-12 &&
               center.finite();
    }

    double volume() const { return dims.x * dims.y * dims.z; }

    /// World point -> box-local coordinates (un-yawed, centered).
    Vec3 to_local(const Vec3& p) const {
        Vec3 r = p - center;
        const double c = std::cos(-yaw), s = std::sin(-yaw);
        return {c * r.x + s * r.z, r.y, -s * r.x + c * r.z};
    }

    bool contains(const Vec3& p) const {
        Vec3 l = to_local(p);
        return std::abs(l.x) <= dims.x / 2.0 && std::abs(l.y) <= dims.y / 2.0 &&
               std::abs(l.z) <= dims.z / 2.0;
    }

    /// Footprint corners in the horizontal (x, z) plane, counter-clockwise.
    std::array<std::array<double, 2>, 4> footprint() const {
        const double c = std::cos(yaw), s = std::sin(yaw);
        const double hx = dims.x / 2.0, hz = dims.z / 2.0;
        std::array<std::array<double, 2>, 4> out{};
        const double lx[4] = {hx, -hx, -hx, hx};
        const double lz[4] = {hz, hz, -hz, -hz};
        for (int i = 0; i < 4; ++i) {
            out[static_cast<std::size_t>(i)] = {center.x + c * lx[i] + s * lz[i],
                                                center.z - s * lx[i] + c * lz[i]};
        }
        return out;
    }

    /// Box moved by a rigid transform: center mapped, yaw advanced by the
    /// transform's vertical-axis rotation, dims unchanged.
    Box3D transformed(const RigidTransform& t) const {
        Box3D out = *this;
        out.center = t.apply(center);
        out.yaw = wrap_angle(yaw + yaw_of_rotation(t.rotation));
        return out;
    }
};

}  // namespace voxtrack
