// Copyright Contributors to the splatedit Project
// SPDX-License-Identifier: Apache-2.0
//
#include "splatedit/renderer.hpp"

#include "splatedit/error.hpp"
#include "splatedit/parallel.hpp"

#include <Eigen/LU>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace splatedit {

double footprint(double m) {
    if (m >= kSupportRadius2) {
        return 0.0;
    }
    const double g = std::exp(-0.5 * m);
    if (m <= kTaperStart2) {
        return g;
    }
    const double t = (m - kTaperStart2) / (kSupportRadius2 - kTaperStart2);
    const double smoother = t * t * t * (t * (6.0 * t - 15.0) + 10.0);
    return g * (1.0 - smoother);
}

double footprint_derivative(double m) {
    if (m >= kSupportRadius2) {
        return 0.0;
    }
    const double g = std::exp(-0.5 * m);
    if (m <= kTaperStart2) {
        return -0.5 * g;
    }
    const double span = kSupportRadius2 - kTaperStart2;
    const double t = (m - kTaperStart2) / span;
    const double smoother = t * t * t * (t * (6.0 * t - 15.0) + 10.0);
    const double dsmoother = 30.0 * t * t * (1.0 - t) * (1.0 - t) / span;
    return -0.5 * g * (1.0 - smoother) - g * dsmoother;
}

namespace {

/// 2x3 Jacobian of the perspective projection at camera-space point `pc`.
Eigen::Matrix<double, 2, 3> projection_jacobian(const Intrinsics &k, const Vec3 &pc) {
    const double z = pc.z();
    Eigen::Matrix<double, 2, 3> j;
    j << k.fx / z, 0.0, -k.fx * pc.x() / (z * z), //
        0.0, k.fy / z, -k.fy * pc.y() / (z * z);
    return j;
}

Mat2 projected_covariance(const GaussianSplat &splat, const Camera &camera, const Vec3 &pc) {
    const Eigen::Matrix<double, 2, 3> t = projection_jacobian(camera.intrinsics, pc) * camera.rotation;
    Mat2 cov = t * splat.covariance() * t.transpose();
    cov.diagonal().array() += kLowPassVariance;
    return cov;
}

} // namespace

std::optional<ProjectedSplat> project(const GaussianSplat &splat, const Camera &camera) {
    const Vec3 pc = camera.to_camera(splat.position);
    if (!(pc.z() > camera.near)) {
        return std::nullopt;
    }
    const Intrinsics &k = camera.intrinsics;

    ProjectedSplat out;
    out.depth = pc.z();
    out.mean2d = Vec2(k.fx * pc.x() / pc.z() + k.cx, k.fy * pc.y() / pc.z() + k.cy);
    out.cov2d = projected_covariance(splat, camera, pc);
    const double det = out.cov2d.determinant();
    if (!(det > 0.0) || !out.mean2d.allFinite()) {
        return std::nullopt;
    }
    out.conic = out.cov2d.inverse();
    out.color = splat.color.cwiseMax(0.0).cwiseMin(1.0);
    out.opacity = splat.opacity();

    const double rx = std::sqrt(kSupportRadius2 * out.cov2d(0, 0));
    const double ry = std::sqrt(kSupportRadius2 * out.cov2d(1, 1));
    // Pixel x has its center at x + 0.5.
    out.x_min = std::max(0, static_cast<int>(std::ceil(out.mean2d.x() - rx - 0.5)));
    out.x_max = std::min(k.width - 1, static_cast<int>(std::floor(out.mean2d.x() + rx - 0.5)));
    out.y_min = std::max(0, static_cast<int>(std::ceil(out.mean2d.y() - ry - 0.5)));
    out.y_max = std::min(k.height - 1, static_cast<int>(std::floor(out.mean2d.y() + ry - 0.5)));
    if (out.x_min > out.x_max || out.y_min > out.y_max) {
        return std::nullopt;
    }
    return out;
}

Image RenderOutput::normalized_depth(double fill, double min_mask) const {
    Image out(1, depth.height(), depth.width());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double m = mask.data()[i];
        out.data()[i] = m > min_mask ? depth.data()[i] / m : fill;
    }
    return out;
}

namespace {

double mahalanobis(const ProjectedSplat &ps, double dx, double dy) {
    return ps.conic(0, 0) * dx * dx + 2.0 * ps.conic(0, 1) * dx * dy + ps.conic(1, 1) * dy * dy;
}

void build_tiles(RasterState &state, std::span<const GaussianSplat> splats, const Camera &camera,
                 int threads) {
    const int width = camera.intrinsics.width;
    const int height = camera.intrinsics.height;
    state.tiles_x = (width + kTileSize - 1) / kTileSize;
    state.tiles_y = (height + kTileSize - 1) / kTileSize;
    const std::size_t tile_count = static_cast<std::size_t>(state.tiles_x) * state.tiles_y;

    state.projected.assign(splats.size(), std::nullopt);
    parallel_for(splats.size(), threads,
                 [&](std::size_t i) { state.projected[i] = project(splats[i], camera); });

    // Global depth order; ties keep input order.
    std::vector<std::uint32_t> order;
    order.reserve(splats.size());
    for (std::size_t i = 0; i < splats.size(); ++i) {
        if (state.projected[i]) {
            order.push_back(static_cast<std::uint32_t>(i));
        }
    }
    std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
        return state.projected[a]->depth < state.projected[b]->depth;
    });

    std::vector<std::uint32_t> counts(tile_count, 0);
    auto for_each_tile = [&](const ProjectedSplat &ps, auto &&fn) {
        for (int ty = ps.y_min / kTileSize; ty <= ps.y_max / kTileSize; ++ty) {
            for (int tx = ps.x_min / kTileSize; tx <= ps.x_max / kTileSize; ++tx) {
                fn(static_cast<std::size_t>(ty) * state.tiles_x + tx);
            }
        }
    };
    for (std::uint32_t id : order) {
        for_each_tile(*state.projected[id], [&](std::size_t tile) { ++counts[tile]; });
    }
    state.tile_offsets.assign(tile_count + 1, 0);
    std::partial_sum(counts.begin(), counts.end(), state.tile_offsets.begin() + 1);
    state.tile_splats.assign(state.tile_offsets.back(), 0);
    std::vector<std::uint32_t> cursor(state.tile_offsets.begin(), state.tile_offsets.end() - 1);
    for (std::uint32_t id : order) {
        for_each_tile(*state.projected[id],
                      [&](std::size_t tile) { state.tile_splats[cursor[tile]++] = id; });
    }
}

template <typename Fn>
void for_each_tile_pixel(const RasterState &state, std::size_t tile, int width, int height, Fn &&fn) {
    const int tx = static_cast<int>(tile % static_cast<std::size_t>(state.tiles_x));
    const int ty = static_cast<int>(tile / static_cast<std::size_t>(state.tiles_x));
    const int x_end = std::min(width, (tx + 1) * kTileSize);
    const int y_end = std::min(height, (ty + 1) * kTileSize);
    for (int y = ty * kTileSize; y < y_end; ++y) {
        for (int x = tx * kTileSize; x < x_end; ++x) {
            fn(x, y);
        }
    }
}

} // namespace

RenderOutput render(std::span<const GaussianSplat> splats, const Camera &camera,
                    const Vec3 &background, const RenderOptions &options) {
    camera.validate();
    const int width = camera.intrinsics.width;
    const int height = camera.intrinsics.height;

    RenderOutput out;
    out.background = background;
    out.color = Image(3, height, width);
    out.depth = Image(1, height, width);
    out.mask = Image(1, height, width);
    RasterState &state = out.state;
    build_tiles(state, splats, camera, options.threads);

    const std::size_t pixels = static_cast<std::size_t>(width) * height;
    state.last_contributor.assign(pixels, 0);
    state.final_transmittance.assign(pixels, 1.0);

    const std::size_t tile_count = static_cast<std::size_t>(state.tiles_x) * state.tiles_y;
    parallel_for(tile_count, options.threads, [&](std::size_t tile) {
        const std::uint32_t begin = state.tile_offsets[tile];
        const std::uint32_t end = state.tile_offsets[tile + 1];
        for_each_tile_pixel(state, tile, width, height, [&](int x, int y) {
            const double px = x + 0.5;
            const double py = y + 0.5;
            double transmittance = 1.0;
            Vec3 color = Vec3::Zero();
            double depth = 0.0;
            double mask = 0.0;
            std::uint32_t last = begin;
            for (std::uint32_t k = begin; k < end; ++k) {
                if (transmittance < kMinTransmittance) {
                    break;
                }
                const ProjectedSplat &ps = *state.projected[state.tile_splats[k]];
                const double m = mahalanobis(ps, px - ps.mean2d.x(), py - ps.mean2d.y());
                const double sigma = std::min(ps.opacity * footprint(m), kMaxSigma);
                if (!(sigma > 0.0)) {
                    continue;
                }
                const double weight = sigma * transmittance;
                color += weight * ps.color;
                depth += weight * ps.depth;
                mask += weight;
                transmittance *= 1.0 - sigma;
                last = k + 1;
            }
            const std::size_t pix = static_cast<std::size_t>(y) * width + x;
            state.last_contributor[pix] = last;
            state.final_transmittance[pix] = transmittance;
            for (int c = 0; c < 3; ++c) {
                out.color.at(c, y, x) = color[c] + background[c] * transmittance;
            }
            out.depth.at(0, y, x) = depth;
            out.mask.at(0, y, x) = mask;
        });
    });
    return out;
}

RenderOutput render(const Scene &scene, const Camera &camera, const Vec3 &background,
                    const RenderOptions &options) {
    return render(std::span<const GaussianSplat>(scene.splats()), camera, background, options);
}

SplatGradient &SplatGradient::operator+=(const SplatGradient &other) {
    position += other.position;
    rotation += other.rotation;
    log_scale += other.log_scale;
    opacity_logit += other.opacity_logit;
    color += other.color;
    return *this;
}

SplatGradient &SplatGradient::operator*=(double factor) {
    position *= factor;
    rotation *= factor;
    log_scale *= factor;
    opacity_logit *= factor;
    color *= factor;
    return *this;
}

namespace {

/// Loss gradient w.r.t. one splat's screen-space quantities.
struct ScreenGradient {
    Vec2 mean2d = Vec2::Zero();
    Vec3 conic = Vec3::Zero(); ///< (d/dQ00, d/dQ01, d/dQ11) with Q treated as a full matrix
    double opacity = 0.0;      ///< w.r.t. the activated opacity
    Vec3 color = Vec3::Zero(); ///< w.r.t. the clamped color
    double depth = 0.0;

    ScreenGradient &operator+=(const ScreenGradient &o) {
        mean2d += o.mean2d;
        conic += o.conic;
        opacity += o.opacity;
        color += o.color;
        depth += o.depth;
        return *this;
    }
};

Vec4 quaternion_backward(const Vec4 &q_raw, const Mat3 &g) {
    const double norm = q_raw.norm();
    const Vec4 q = q_raw / norm;
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Vec4 gq;
    gq[0] = 2.0 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) +
                   x * g(2, 1));
    gq[1] = 2.0 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2) +
                   z * g(2, 0) + w * g(2, 1) - 2.0 * x * g(2, 2));
    gq[2] = 2.0 * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) -
                   w * g(2, 0) + z * g(2, 1) - 2.0 * y * g(2, 2));
    gq[3] = 2.0 * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) -
                   2.0 * z * g(1, 1) + y * g(1, 2) + x * g(2, 0) + y * g(2, 1));
    // Through q / |q|.
    return (gq - q * q.dot(gq)) / norm;
}

SplatGradient splat_backward(const GaussianSplat &splat, const Camera &camera,
                             const ScreenGradient &sg) {
    const Intrinsics &k = camera.intrinsics;
    const Mat3 &view = camera.rotation;
    const Vec3 pc = camera.to_camera(splat.position);
    const double x = pc.x(), y = pc.y(), z = pc.z();

    const Mat3 rot = splat.rotation_matrix();
    const Vec3 scale = splat.scale();
    const Mat3 m = rot * scale.asDiagonal();
    const Mat3 sigma = m * m.transpose();

    const Eigen::Matrix<double, 2, 3> jac = projection_jacobian(k, pc);
    const Eigen::Matrix<double, 2, 3> t = jac * view;
    Mat2 cov = t * sigma * t.transpose();
    cov.diagonal().array() += kLowPassVariance;
    const Mat2 conic = cov.inverse();

    Mat2 g_conic;
    g_conic << sg.conic[0], sg.conic[1], sg.conic[1], sg.conic[2];
    const Mat2 g_cov = -conic * g_conic * conic;
    const Eigen::Matrix<double, 2, 3> g_t = 2.0 * g_cov * t * sigma;
    const Mat3 g_sigma = t.transpose() * g_cov * t;
    const Eigen::Matrix<double, 2, 3> g_jac = g_t * view.transpose();

    Vec3 g_pc = Vec3::Zero();
    const double z2 = z * z;
    const double z3 = z2 * z;
    g_pc.x() += g_jac(0, 2) * (-k.fx / z2);
    g_pc.y() += g_jac(1, 2) * (-k.fy / z2);
    g_pc.z() += g_jac(0, 0) * (-k.fx / z2) + g_jac(0, 2) * (2.0 * k.fx * x / z3) +
                g_jac(1, 1) * (-k.fy / z2) + g_jac(1, 2) * (2.0 * k.fy * y / z3);
    g_pc.x() += sg.mean2d.x() * k.fx / z;
    g_pc.y() += sg.mean2d.y() * k.fy / z;
    g_pc.z() += -sg.mean2d.x() * k.fx * x / z2 - sg.mean2d.y() * k.fy * y / z2;
    g_pc.z() += sg.depth;

    SplatGradient out;
    out.position = view.transpose() * g_pc;

    const Mat3 g_m = 2.0 * g_sigma * m;
    const Mat3 g_rot = g_m * scale.asDiagonal();
    for (int axis = 0; axis < 3; ++axis) {
        out.log_scale[axis] = scale[axis] * g_m.col(axis).dot(rot.col(axis));
    }
    out.rotation = quaternion_backward(splat.rotation, g_rot);

    const double alpha = splat.opacity();
    out.opacity_logit = sg.opacity * alpha * (1.0 - alpha);
    for (int c = 0; c < 3; ++c) {
        const double value = splat.color[c];
        out.color[c] = (value >= 0.0 && value <= 1.0) ? sg.color[c] : 0.0;
    }
    return out;
}

} // namespace

std::vector<SplatGradient> render_backward(std::span<const GaussianSplat> splats,
                                           const Camera &camera, const RenderOutput &output,
                                           const Image &grad_color, const Image &grad_depth,
                                           const Image &grad_mask, const RenderOptions &options) {
    const int width = camera.intrinsics.width;
    const int height = camera.intrinsics.height;
    const RasterState &state = output.state;
    if (output.color.width() != width || output.color.height() != height ||
        state.projected.size() != splats.size()) {
        throw InvalidParameterError("render_backward: output was not produced for this scene/camera");
    }
    if (grad_color.channels() != 3 || !grad_color.same_extent(output.color)) {
        throw InvalidParameterError("render_backward: grad_color must be 3 x H x W");
    }
    const bool has_depth = !grad_depth.empty();
    const bool has_mask = !grad_mask.empty();
    if ((has_depth && (grad_depth.channels() != 1 || !grad_depth.same_extent(output.color))) ||
        (has_mask && (grad_mask.channels() != 1 || !grad_mask.same_extent(output.color)))) {
        throw InvalidParameterError("render_backward: grad_depth/grad_mask must be 1 x H x W");
    }

    // One slot per tile-list entry so tiles never share accumulators.
    std::vector<ScreenGradient> entries(state.tile_splats.size());
    const Vec3 &bg = output.background;
    const std::size_t tile_count = static_cast<std::size_t>(state.tiles_x) * state.tiles_y;

    parallel_for(tile_count, options.threads, [&](std::size_t tile) {
        const std::uint32_t begin = state.tile_offsets[tile];
        for_each_tile_pixel(state, tile, width, height, [&](int x, int y) {
            const std::size_t pix = static_cast<std::size_t>(y) * width + x;
            const Vec3 gc(grad_color.at(0, y, x), grad_color.at(1, y, x), grad_color.at(2, y, x));
            const double gd = has_depth ? grad_depth.at(0, y, x) : 0.0;
            const double gm = has_mask ? grad_mask.at(0, y, x) : 0.0;
            const double px = x + 0.5;
            const double py = y + 0.5;

            double transmittance = state.final_transmittance[pix];
            // Contribution of everything behind the current splat, including background.
            double behind = gc.dot(bg) * transmittance;
            for (std::uint32_t k = state.last_contributor[pix]; k-- > begin;) {
                const ProjectedSplat &ps = *state.projected[state.tile_splats[k]];
                const double dx = px - ps.mean2d.x();
                const double dy = py - ps.mean2d.y();
                const double m = mahalanobis(ps, dx, dy);
                const double fp = footprint(m);
                const double raw_sigma = ps.opacity * fp;
                const double sigma = std::min(raw_sigma, kMaxSigma);
                if (!(sigma > 0.0)) {
                    continue;
                }
                transmittance /= 1.0 - sigma;
                const double weight = sigma * transmittance;
                const double value = gc.dot(ps.color) + gd * ps.depth + gm;
                const double g_sigma = value * transmittance - behind / (1.0 - sigma);
                behind += value * weight;

                ScreenGradient &e = entries[k];
                e.color += gc * weight;
                e.depth += gd * weight;
                if (raw_sigma < kMaxSigma) {
                    e.opacity += g_sigma * fp;
                    const double g_m = g_sigma * ps.opacity * footprint_derivative(m);
                    // m = d^T Q d with d = pixel - mean
                    const Vec2 qd = ps.conic * Vec2(dx, dy);
                    e.mean2d += -2.0 * g_m * qd;
                    e.conic += g_m * Vec3(dx * dx, dx * dy, dy * dy);
                }
            }
        });
    });

    // Deterministic reduction in tile order.
    std::vector<ScreenGradient> screen(splats.size());
    for (std::size_t k = 0; k < entries.size(); ++k) {
        screen[state.tile_splats[k]] += entries[k];
    }

    std::vector<SplatGradient> grads(splats.size());
    parallel_for(splats.size(), options.threads, [&](std::size_t i) {
        if (state.projected[i]) {
            grads[i] = splat_backward(splats[i], camera, screen[i]);
        }
    });
    return grads;
}

std::vector<SplatGradient> render_backward(const Scene &scene, const Camera &camera,
                                           const RenderOutput &output, const Image &grad_color,
                                           const Image &grad_depth, const Image &grad_mask,
                                           const RenderOptions &options) {
    return render_backward(std::span<const GaussianSplat>(scene.splats()), camera, output,
                           grad_color, grad_depth, grad_mask, options);
}

namespace {

double cross2(const Vec2 &o, const Vec2 &a, const Vec2 &b) {
    return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
}

std::vector<Vec2> convex_hull(std::vector<Vec2> pts) {
    std::sort(pts.begin(), pts.end(), [](const Vec2 &a, const Vec2 &b) {
        return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
    });
    std::vector<Vec2> hull(2 * pts.size());
    std::size_t n = 0;
    for (const Vec2 &p : pts) {
        while (n >= 2 && cross2(hull[n - 2], hull[n - 1], p) <= 0.0) {
            --n;
        }
        hull[n++] = p;
    }
    for (std::size_t i = pts.size() - 1, lower = n + 1; i-- > 0;) {
        while (n >= lower && cross2(hull[n - 2], hull[n - 1], pts[i]) <= 0.0) {
            --n;
        }
        hull[n++] = pts[i];
    }
    hull.resize(n > 0 ? n - 1 : 0);
    return hull;
}

} // namespace

Image project_box_mask(const Box &box, const Camera &camera) {
    camera.validate();
    const Intrinsics &k = camera.intrinsics;
    Image mask(1, k.height, k.width);

    std::vector<Vec2> pts;
    for (const Vec3 &corner : box.corners()) {
        const Vec3 pc = camera.to_camera(corner);
        if (!(pc.z() > camera.near)) {
            std::fill(mask.data().begin(), mask.data().end(), 1.0);
            return mask;
        }
        pts.emplace_back(k.fx * pc.x() / pc.z() + k.cx, k.fy * pc.y() / pc.z() + k.cy);
    }
    const std::vector<Vec2> hull = convex_hull(std::move(pts));
    if (hull.size() < 3) {
        return mask;
    }
    for (int y = 0; y < k.height; ++y) {
        for (int x = 0; x < k.width; ++x) {
            const Vec2 p(x + 0.5, y + 0.5);
            bool inside = true;
            for (std::size_t i = 0; i < hull.size() && inside; ++i) {
                inside = cross2(hull[i], hull[(i + 1) % hull.size()], p) >= 0.0;
            }
            mask.at(0, y, x) = inside ? 1.0 : 0.0;
        }
    }
    return mask;
}

} // namespace splatedit
