// Copyright Contributors to the splatedit Project
// SPDX-License-Identifier: Apache-2.0
//
#include "splatedit/scene.hpp"

#include "splatedit/error.hpp"

#include <Eigen/Geometry>
#include <fmt/format.h>

#include <cmath>
#include <numbers>

namespace splatedit {

double sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double logit(double p) { return std::log(p) - std::log1p(-p); }

Mat3 quaternion_to_matrix(const Vec4 &q_in) {
    const Vec4 q = q_in / q_in.norm();
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3 r;
    r << 1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y),
        2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x),
        2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y);
    return r;
}

Mat3 build_covariance(const Vec4 &rotation, const Vec3 &scale) {
    if (!rotation.allFinite() || !scale.allFinite()) {
        throw InvalidParameterError("build_covariance: non-finite rotation or scale");
    }
    if (!(rotation.norm() > 0.0)) {
        throw InvalidParameterError("build_covariance: zero quaternion");
    }
    if ((scale.array() <= 0.0).any()) {
        throw InvalidParameterError("build_covariance: scale must be strictly positive");
    }
    const Mat3 m = quaternion_to_matrix(rotation) * scale.asDiagonal();
    return m * m.transpose();
}

Mat3 GaussianSplat::rotation_matrix() const { return quaternion_to_matrix(rotation); }

Mat3 GaussianSplat::covariance() const { return build_covariance(rotation, scale()); }

bool GaussianSplat::operator==(const GaussianSplat &other) const {
    return position == other.position && rotation == other.rotation &&
           log_scale == other.log_scale && opacity_logit == other.opacity_logit &&
           color == other.color;
}

Box Box::from_center(const Vec3 &center, const Vec3 &extents, double yaw_deg) {
    return {center - 0.5 * extents, center + 0.5 * extents, yaw_deg};
}

bool Box::valid() const {
    return min.allFinite() && max.allFinite() && (min.array() < max.array()).all() &&
           std::isfinite(yaw_deg);
}

namespace {

Vec3 rotate_yaw(const Vec3 &p, const Vec3 &pivot, double yaw_deg) {
    if (yaw_deg == 0.0) {
        return p;
    }
    const double a = yaw_deg * std::numbers::pi / 180.0;
    const double c = std::cos(a), s = std::sin(a);
    const Vec3 d = p - pivot;
    return pivot + Vec3(c * d.x() - s * d.y(), s * d.x() + c * d.y(), d.z());
}

} // namespace

bool Box::contains(const Vec3 &p) const {
    // Bring the point into the box frame (inverse yaw about the center).
    const Vec3 q = rotate_yaw(p, center(), -yaw_deg);
    return (q.array() >= min.array()).all() && (q.array() <= max.array()).all();
}

Box Box::inflated(double margin) const {
    return {min.array() - margin, max.array() + margin, yaw_deg};
}

std::array<Vec3, 8> Box::corners() const {
    std::array<Vec3, 8> out;
    for (int i = 0; i < 8; ++i) {
        const Vec3 local((i & 1) ? max.x() : min.x(), (i & 2) ? max.y() : min.y(),
                         (i & 4) ? max.z() : min.z());
        out[static_cast<std::size_t>(i)] = rotate_yaw(local, center(), yaw_deg);
    }
    return out;
}

Box bounds_of(std::span<const GaussianSplat> splats) {
    if (splats.empty()) {
        return {};
    }
    Box box{splats.front().position, splats.front().position, 0.0};
    for (const auto &s : splats) {
        box.min = box.min.cwiseMin(s.position);
        box.max = box.max.cwiseMax(s.position);
    }
    return box;
}

Scene::Scene(std::vector<GaussianSplat> splats, std::vector<SplatTag> tags, Box bbox)
    : splats_(std::move(splats)), tags_(std::move(tags)), bbox_(bbox) {
    if (splats_.size() != tags_.size()) {
        throw InvalidParameterError(fmt::format("scene has {} splats but {} tags", splats_.size(),
                                                tags_.size()));
    }
}

Scene Scene::uniform(std::vector<GaussianSplat> splats, SplatTag tag, Box bbox) {
    std::vector<SplatTag> tags(splats.size(), tag);
    return Scene(std::move(splats), std::move(tags), bbox);
}

std::size_t Scene::count(SplatTag tag) const {
    return static_cast<std::size_t>(std::count(tags_.begin(), tags_.end(), tag));
}

void Scene::validate(double object_margin) const {
    const Box region = bbox_.inflated(object_margin);
    for (std::size_t i = 0; i < splats_.size(); ++i) {
        const auto &s = splats_[i];
        if (!s.position.allFinite() || !s.rotation.allFinite() || !s.log_scale.allFinite() ||
            !std::isfinite(s.opacity_logit) || !s.color.allFinite()) {
            throw ValidationError(fmt::format("splat {} has a non-finite field", i));
        }
        if (std::abs(s.rotation.norm() - 1.0) > 1e-6) {
            throw ValidationError(
                fmt::format("splat {} quaternion norm {} is not unit", i, s.rotation.norm()));
        }
        if (tags_[i] == SplatTag::Object && !region.contains(s.position)) {
            throw ValidationError(fmt::format("object splat {} lies outside the bounding box", i));
        }
    }
}

Scene excise_bbox(const Scene &scene, const Box &bbox) {
    if (!bbox.valid()) {
        throw InvalidParameterError("excise_bbox: box must satisfy min < max on every axis");
    }
    std::vector<GaussianSplat> splats;
    std::vector<SplatTag> tags;
    for (std::size_t i = 0; i < scene.size(); ++i) {
        if (!bbox.contains(scene.splat(i).position)) {
            splats.push_back(scene.splat(i));
            tags.push_back(scene.tag(i));
        }
    }
    return Scene(std::move(splats), std::move(tags), scene.bbox());
}

Scene merge_scenes(const Scene &background, const Scene &object) {
    std::vector<GaussianSplat> splats;
    splats.reserve(background.size() + object.size());
    splats.insert(splats.end(), background.splats().begin(), background.splats().end());
    splats.insert(splats.end(), object.splats().begin(), object.splats().end());

    std::vector<SplatTag> tags(background.size(), SplatTag::Background);
    tags.resize(splats.size(), SplatTag::Object);

    const Box bbox = object.empty() ? background.bbox() : object.bbox();
    return Scene(std::move(splats), std::move(tags), bbox);
}

} // namespace splatedit
