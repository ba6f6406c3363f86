// Copyright Contributors to the splatedit Project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <Eigen/Core>

namespace splatedit {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;

/// Pinhole intrinsics in pixels. Pixel (x, y) has its center at (x + 0.5, y + 0.5).
struct Intrinsics {
    double fx = 0.0;
    double fy = 0.0;
    double cx = 0.0;
    double cy = 0.0;
    int width = 0;
    int height = 0;

    /// Square-pixel intrinsics with the principal point at the image center.
    static Intrinsics from_fov(int width, int height, double fov_y_deg);
};

/// Pinhole camera with a world-to-camera rigid pose (x right, y down, z forward).
struct Camera {
    Intrinsics intrinsics;
    Mat3 rotation = Mat3::Identity(); ///< world -> camera
    Vec3 translation = Vec3::Zero();  ///< world -> camera
    double near = 0.01;
    double far = 100.0;

    Vec3 to_camera(const Vec3 &world) const { return rotation * world + translation; }
    Vec3 center() const { return -rotation.transpose() * translation; }
    Vec3 forward() const { return rotation.row(2).transpose(); }

    /// Throws InvalidParameterError if intrinsics, clip range, or pose are invalid.
    void validate() const;

    /// Camera at `eye` whose optical axis passes through `target`.
    static Camera look_at(const Vec3 &eye, const Vec3 &target, const Vec3 &up,
                          const Intrinsics &intrinsics, double near, double far);
};

/// Spherical coordinates of a point around an orbit center.
///
/// Azimuth 0 lies along the reference axis (world +x, or +y when up is
/// parallel to x) projected onto the plane orthogonal to `up`; azimuth grows
/// counter-clockwise when looking down `up`.
struct OrbitCoordinates {
    double azimuth_deg = 0.0;
    double elevation_deg = 0.0;
    double radius = 0.0;
};

struct OrbitFrame {
    Vec3 center = Vec3::Zero();
    Vec3 up = Vec3::UnitZ();

    Vec3 position(const OrbitCoordinates &coords) const;
    OrbitCoordinates coordinates(const Vec3 &point) const;
    Camera camera(const OrbitCoordinates &coords, const Intrinsics &intrinsics, double near,
                  double far) const;
};

/// Wraps an angle to (-180, 180].
double wrap_degrees(double degrees);

} // namespace splatedit
