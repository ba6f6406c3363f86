// Copyright Contributors to the splatedit Project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include "splatedit/camera.hpp"
#include "splatedit/image.hpp"
#include "splatedit/scene.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace splatedit {

/// Low-pass term added to every projected covariance, in px^2.
inline constexpr double kLowPassVariance = 0.3;
/// Per-contributor opacity ceiling.
inline constexpr double kMaxSigma = 0.99;
/// Compositing stops once transmittance falls below this.
inline constexpr double kMinTransmittance = 1e-4;
/// Squared Mahalanobis radius of the 99% ellipse of a 2D Gaussian (-2 ln 0.01).
inline constexpr double kSupportRadius2 = 9.210340371976184;
/// Squared Mahalanobis radius at which the footprint taper begins (2.5 sigma).
inline constexpr double kTaperStart2 = 6.25;
inline constexpr int kTileSize = 16;

/// Footprint weight of a splat at squared Mahalanobis distance `m`:
/// exp(-m/2) inside 2.5 sigma, smoothly tapered to exactly zero at the 99% ellipse.
double footprint(double m);
/// d footprint / d m.
double footprint_derivative(double m);

/// A splat after EWA projection into one camera.
struct ProjectedSplat {
    Vec2 mean2d = Vec2::Zero(); ///< pixels
    Mat2 cov2d = Mat2::Identity(); ///< pixels^2, low-pass term included
    Mat2 conic = Mat2::Identity(); ///< inverse of cov2d
    double depth = 0.0;            ///< camera-space z of the center
    Vec3 color = Vec3::Zero();     ///< clamped to [0, 1]
    double opacity = 0.0;
    /// Inclusive pixel bounds of the 99% ellipse clipped to the viewport.
    int x_min = 0, y_min = 0, x_max = -1, y_max = -1;
};

/// Projects one splat; std::nullopt when it is behind the near plane or its
/// 99% ellipse misses the viewport.
std::optional<ProjectedSplat> project(const GaussianSplat &splat, const Camera &camera);

struct RenderOptions {
    int threads = 0; ///< 0 = all hardware threads, 1 = single-threaded
};

/// Per-view rasterization state that the backward pass replays.
struct RasterState {
    int tiles_x = 0;
    int tiles_y = 0;
    std::vector<std::optional<ProjectedSplat>> projected; ///< indexed like the input splats
    std::vector<std::uint32_t> tile_offsets;              ///< tiles + 1 prefix offsets
    std::vector<std::uint32_t> tile_splats;               ///< depth-ordered splat ids per tile
    std::vector<std::uint32_t> last_contributor;          ///< per pixel, exclusive end in tile list
    std::vector<double> final_transmittance;              ///< per pixel
};

/// Color C, alpha-weighted depth D and accumulated opacity m of one view.
struct RenderOutput {
    Image color; ///< 3 x H x W
    Image depth; ///< 1 x H x W, sum of d_i sigma_i T_i (not normalized by mask)
    Image mask;  ///< 1 x H x W, sum of sigma_i T_i
    Vec3 background = Vec3::Zero();
    RasterState state;

    /// D / m where m > `min_mask`, else `fill` (e.g. the far plane).
    Image normalized_depth(double fill, double min_mask = 1e-6) const;
};

/// Rasterizes the splats front-to-back with a global per-view depth sort.
RenderOutput render(std::span<const GaussianSplat> splats, const Camera &camera,
                    const Vec3 &background, const RenderOptions &options = {});
RenderOutput render(const Scene &scene, const Camera &camera, const Vec3 &background,
                    const RenderOptions &options = {});

/// Gradient of a scalar loss with respect to one splat's stored parameters.
struct SplatGradient {
    Vec3 position = Vec3::Zero();
    Vec4 rotation = Vec4::Zero(); ///< w.r.t. the stored (w, x, y, z), through normalization
    Vec3 log_scale = Vec3::Zero();
    double opacity_logit = 0.0;
    Vec3 color = Vec3::Zero();

    SplatGradient &operator+=(const SplatGradient &other);
    SplatGradient &operator*=(double factor);
};

/// Gradients of <grad_color, C> + <grad_depth, D> + <grad_mask, m> with
/// respect to every splat. Splats culled in the forward pass receive zero.
/// Either grad_depth or grad_mask may be empty images, meaning zero.
std::vector<SplatGradient> render_backward(std::span<const GaussianSplat> splats,
                                           const Camera &camera, const RenderOutput &output,
                                           const Image &grad_color, const Image &grad_depth,
                                           const Image &grad_mask,
                                           const RenderOptions &options = {});
std::vector<SplatGradient> render_backward(const Scene &scene, const Camera &camera,
                                           const RenderOutput &output, const Image &grad_color,
                                           const Image &grad_depth, const Image &grad_mask,
                                           const RenderOptions &options = {});

/// Binary mask of the convex hull of the projected box corners; full frame when
/// any corner is behind the near plane.
Image project_box_mask(const Box &box, const Camera &camera);

} // namespace splatedit
