// Copyright Contributors to the splatedit Project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include "splatedit/camera.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace splatedit {

/// Zeroth-order spherical-harmonic basis constant; color = 0.5 + kShC0 * f_dc.
inline constexpr double kShC0 = 0.28209479177387814;

double sigmoid(double x);
double logit(double p);

/// One anisotropic 3D Gaussian in its stored (pre-activation) parameterization.
///
/// Opacity is kept as a logit and scale as a log so the values round-trip
/// through the standard 3DGS PLY layout without loss. Color is linear RGB
/// (the degree-0 SH term already applied).
struct GaussianSplat {
    Vec3 position = Vec3::Zero();
    Vec4 rotation{1.0, 0.0, 0.0, 0.0}; ///< quaternion (w, x, y, z), unit norm
    Vec3 log_scale = Vec3::Zero();
    double opacity_logit = 0.0;
    Vec3 color = Vec3::Constant(0.5);

    Vec3 scale() const { return log_scale.array().exp(); }
    double opacity() const { return sigmoid(opacity_logit); }
    Mat3 rotation_matrix() const;
    Mat3 covariance() const;

    bool operator==(const GaussianSplat &other) const;
};

enum class SplatTag : std::uint8_t { Background, Object };

/// Axis-aligned box in its own frame, optionally yawed about world +z through its center.
struct Box {
    Vec3 min = Vec3::Zero();
    Vec3 max = Vec3::Zero();
    double yaw_deg = 0.0;

    static Box from_center(const Vec3 &center, const Vec3 &extents, double yaw_deg = 0.0);

    Vec3 center() const { return 0.5 * (min + max); }
    Vec3 extents() const { return max - min; }
    bool valid() const;
    bool contains(const Vec3 &p) const;
    Box inflated(double margin) const;
    std::array<Vec3, 8> corners() const;

    bool operator==(const Box &other) const = default;
};

/// Tight axis-aligned bounds of the splat centers (zero box when empty).
Box bounds_of(std::span<const GaussianSplat> splats);

/// Ordered collection of splats, each tagged as background or object.
class Scene {
  public:
    Scene() = default;
    Scene(std::vector<GaussianSplat> splats, std::vector<SplatTag> tags, Box bbox);

    /// Every splat receives `tag`.
    static Scene uniform(std::vector<GaussianSplat> splats, SplatTag tag, Box bbox);

    std::size_t size() const noexcept { return splats_.size(); }
    bool empty() const noexcept { return splats_.empty(); }

    const std::vector<GaussianSplat> &splats() const noexcept { return splats_; }
    const std::vector<SplatTag> &tags() const noexcept { return tags_; }
    const GaussianSplat &splat(std::size_t i) const { return splats_[i]; }
    SplatTag tag(std::size_t i) const { return tags_[i]; }
    const Box &bbox() const noexcept { return bbox_; }

    /// Mutable access for the exclusive owner (the optimizer); tag count is unaffected.
    std::vector<GaussianSplat> &mutable_splats() noexcept { return splats_; }
    void set_bbox(const Box &bbox) { bbox_ = bbox; }

    std::size_t count(SplatTag tag) const;

    /// Throws ValidationError when a splat is non-finite, a quaternion is not
    /// unit within 1e-6, or an object splat lies outside bbox inflated by `margin`.
    void validate(double object_margin) const;

    bool operator==(const Scene &other) const = default;

  private:
    std::vector<GaussianSplat> splats_;
    std::vector<SplatTag> tags_;
    Box bbox_;
};

/// Sigma = R S S^T R^T for a unit quaternion (w, x, y, z) and positive per-axis scale.
Mat3 build_covariance(const Vec4 &rotation, const Vec3 &scale);

/// Rotation matrix of a (normalized internally) quaternion (w, x, y, z).
Mat3 quaternion_to_matrix(const Vec4 &q);

/// Scene without splats whose center lies inside `bbox`; order is preserved.
Scene excise_bbox(const Scene &scene, const Box &bbox);

/// Concatenates splats, tagging `background` splats Background and `object` splats Object.
Scene merge_scenes(const Scene &background, const Scene &object);

/// Reads a binary little-endian 3DGS PLY. Tags default to Background and the
/// bbox to the bounds of the splat centers.
Scene load_scene(const std::filesystem::path &path);

/// Writes `x y z f_dc_0..2 opacity scale_0..2 rot_0..3` as float32 binary little-endian.
void save_scene(const Scene &scene, const std::filesystem::path &path);

} // namespace splatedit
