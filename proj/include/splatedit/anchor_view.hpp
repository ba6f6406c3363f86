// Copyright Contributors to the splatedit Project
// SPDX-License-Identifier: Apache-2.0
//
// Anchor view proposal: pick the ring view with the strongest left/right
// illumination contrast after rotation normalization.
#pragma once

#include "splatedit/camera.hpp"
#include "splatedit/image.hpp"

#include <optional>
#include <span>
#include <vector>

namespace splatedit {

/// Cameras evenly spaced in azimuth around a center, all looking at it.
struct AzimuthRing {
    Vec3 center = Vec3::Zero();
    double radius = 1.0;
    double elevation_deg = 0.0;
    int count = 100;
    Vec3 up = Vec3::UnitZ();
    Intrinsics intrinsics;
    double near = 0.01;
    double far = 100.0;

    OrbitFrame frame() const { return {center, up}; }
    double azimuth_of(int index) const { return index * 360.0 / count; }
};

/// View k sits at azimuth k * 360 / count. Throws InvalidParameterError on a
/// broken ring or when `up` is parallel to a viewing direction.
std::vector<Camera> sample_ring(const AzimuthRing &ring);

/// HSV value channel: max(R, G, B) per pixel.
Image value_channel(const Image &rgb);

inline const std::vector<double> &default_rotation_set() {
    static const std::vector<double> set = {0, 45, 90, 135, 180, 225, 270, 315};
    return set;
}

/// Mean V of the left half over the sum of both half means, after rotating the
/// image (and mask) counter-clockwise about its center by `rotation_deg`.
///
/// Pixels mapped from outside the frame or outside the mask are excluded. An
/// empty `fg_mask` means the full frame. Both means zero gives 0.5. Throws
/// DegenerateInputError when either half has no valid pixel.
double brightness_ratio(const Image &v, double rotation_deg, const Image &fg_mask = {});

enum class BrightSide { Left, Right };

struct ViewScore {
    int view_index = 0;
    double best_rotation = 0.0;
    double ratio = 0.5; ///< ratio at best_rotation
    double contrast = 0.0;
};

struct AvpOptions {
    std::vector<double> rotations = default_rotation_set();
    /// Right reports the rotation with the darkest left half (minimum ratio);
    /// Left reports the one with the brightest left half.
    BrightSide bright_side = BrightSide::Right;
    int threads = 0;
};

/// One rendered candidate: RGB in [0, 1] plus an optional region mask.
struct AnchorCandidate {
    Camera camera;
    Image color;
    Image region_mask; ///< empty = full frame
};

/// Scores one view. Rotations whose halves are empty are skipped; std::nullopt
/// when every rotation is degenerate.
std::optional<ViewScore> score_view(const Image &color, const Image &region_mask,
                                    const AvpOptions &options, int view_index = 0);

struct AvpReport {
    std::vector<std::optional<ViewScore>> views; ///< nullopt for degenerate views
    ViewScore anchor;
};

/// Scores every view and picks the maximal-contrast one (lowest index on ties).
/// Throws InvalidParameterError for fewer than two views and
/// DegenerateInputError when every view is degenerate.
AvpReport score_views(std::span<const AnchorCandidate> views, const AvpOptions &options = {});

ViewScore propose_anchor(std::span<const AnchorCandidate> views, const AvpOptions &options = {});

} // namespace splatedit
