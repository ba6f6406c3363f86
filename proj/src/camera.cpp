// Copyright Contributors to the splatedit Project
// SPDX-License-Identifier: Apache-2.0
//
#include "splatedit/camera.hpp"

#include "splatedit/error.hpp"

#include <Eigen/Geometry>
#include <fmt/format.h>

#include <cmath>
#include <numbers>

namespace splatedit {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

struct OrbitBasis {
    Vec3 e1;
    Vec3 e2;
    Vec3 up;
};

OrbitBasis make_basis(const Vec3 &up_in) {
    const double norm = up_in.norm();
    if (!(norm > 0.0) || !std::isfinite(norm)) {
        throw InvalidParameterError("orbit up vector must be finite and nonzero");
    }
    const Vec3 up = up_in / norm;
    Vec3 ref = Vec3::UnitX();
    if (std::abs(ref.dot(up)) > 0.9) {
        ref = Vec3::UnitY();
    }
    const Vec3 e1 = (ref - ref.dot(up) * up).normalized();
    const Vec3 e2 = up.cross(e1);
    return {e1, e2, up};
}

} // namespace

Intrinsics Intrinsics::from_fov(int width, int height, double fov_y_deg) {
    if (width <= 0 || height <= 0 || !(fov_y_deg > 0.0 && fov_y_deg < 180.0)) {
        throw InvalidParameterError(
            fmt::format("invalid image size {}x{} or fov {}", width, height, fov_y_deg));
    }
    const double f = 0.5 * height / std::tan(0.5 * fov_y_deg * kDegToRad);
    return {f, f, 0.5 * width, 0.5 * height, width, height};
}

void Camera::validate() const {
    const auto &k = intrinsics;
    if (!(k.fx > 0.0) || !(k.fy > 0.0) || !std::isfinite(k.fx) || !std::isfinite(k.fy)) {
        throw InvalidParameterError("camera focal lengths must be positive");
    }
    if (k.width <= 0 || k.height <= 0) {
        throw InvalidParameterError(
            fmt::format("camera image size {}x{} must be positive", k.width, k.height));
    }
    if (!(near > 0.0) || !(near < far)) {
        throw InvalidParameterError(fmt::format("camera clip range near={} far={}", near, far));
    }
    if (!rotation.allFinite() || !translation.allFinite()) {
        throw InvalidParameterError("camera pose must be finite");
    }
    const double err = (rotation * rotation.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff();
    if (err > 1e-6 || rotation.determinant() < 0.0) {
        throw InvalidParameterError(
            fmt::format("camera rotation is not a proper orthonormal matrix (error {:.3g})", err));
    }
}

Camera Camera::look_at(const Vec3 &eye, const Vec3 &target, const Vec3 &up,
                       const Intrinsics &intrinsics, double near, double far) {
    const Vec3 delta = target - eye;
    if (!(delta.norm() > 0.0)) {
        throw InvalidParameterError("look_at eye and target coincide");
    }
    const Vec3 forward = delta.normalized();
    const Vec3 side = forward.cross(up);
    if (side.norm() < 1e-9 * std::max(1.0, up.norm())) {
        throw InvalidParameterError("look_at up vector is parallel to the view direction");
    }
    const Vec3 right = side.normalized();
    const Vec3 down = forward.cross(right);

    Camera cam;
    cam.intrinsics = intrinsics;
    cam.rotation.row(0) = right.transpose();
    cam.rotation.row(1) = down.transpose();
    cam.rotation.row(2) = forward.transpose();
    cam.translation = -cam.rotation * eye;
    cam.near = near;
    cam.far = far;
    cam.validate();
    return cam;
}

Vec3 OrbitFrame::position(const OrbitCoordinates &coords) const {
    const OrbitBasis basis = make_basis(up);
    const double az = coords.azimuth_deg * kDegToRad;
    const double el = coords.elevation_deg * kDegToRad;
    const Vec3 dir = std::cos(el) * (std::cos(az) * basis.e1 + std::sin(az) * basis.e2) +
                     std::sin(el) * basis.up;
    return center + coords.radius * dir;
}

OrbitCoordinates OrbitFrame::coordinates(const Vec3 &point) const {
    const OrbitBasis basis = make_basis(up);
    const Vec3 d = point - center;
    const double r = d.norm();
    if (r == 0.0) {
        return {};
    }
    const double horizontal = std::hypot(d.dot(basis.e1), d.dot(basis.e2));
    return {std::atan2(d.dot(basis.e2), d.dot(basis.e1)) / kDegToRad,
            std::atan2(d.dot(basis.up), horizontal) / kDegToRad, r};
}

Camera OrbitFrame::camera(const OrbitCoordinates &coords, const Intrinsics &intrinsics, double near,
                          double far) const {
    if (!(coords.radius > 0.0)) {
        throw InvalidParameterError("orbit radius must be positive");
    }
    return Camera::look_at(position(coords), center, up, intrinsics, near, far);
}

double wrap_degrees(double degrees) {
    double wrapped = std::fmod(degrees, 360.0);
    if (wrapped <= -180.0) {
        wrapped += 360.0;
    } else if (wrapped > 180.0) {
        wrapped -= 360.0;
    }
    return wrapped;
}

} // namespace splatedit
