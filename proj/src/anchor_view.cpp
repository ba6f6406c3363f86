// Copyright Contributors to the splatedit Project
// SPDX-License-Identifier: Apache-2.0
//
#include "splatedit/anchor_view.hpp"

#include "splatedit/error.hpp"
#include "splatedit/parallel.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace splatedit {

std::vector<Camera> sample_ring(const AzimuthRing &ring) {
    if (ring.count < 2) {
        throw InvalidParameterError(fmt::format("ring count must be >= 2, got {}", ring.count));
    }
    if (!(ring.radius > 0.0)) {
        throw InvalidParameterError(fmt::format("ring radius must be > 0, got {}", ring.radius));
    }
    if (!(ring.up.norm() > 0.0)) {
        throw InvalidParameterError("ring up vector is zero");
    }
    const OrbitFrame frame = ring.frame();
    std::vector<Camera> cameras;
    cameras.reserve(static_cast<std::size_t>(ring.count));
    for (int k = 0; k < ring.count; ++k) {
        const OrbitCoordinates coords{ring.azimuth_of(k), ring.elevation_deg, ring.radius};
        cameras.push_back(frame.camera(coords, ring.intrinsics, ring.near, ring.far));
    }
    return cameras;
}

Image value_channel(const Image &rgb) {
    if (rgb.channels() != 3) {
        throw InvalidParameterError(
            fmt::format("value_channel expects 3 channels, got {}", rgb.channels()));
    }
    Image v(1, rgb.height(), rgb.width());
    const auto r = rgb.plane(0);
    const auto g = rgb.plane(1);
    const auto b = rgb.plane(2);
    auto out = v.plane(0);
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = std::max({r[i], g[i], b[i]});
    }
    return v;
}

namespace {

struct HalfSums {
    double left_sum = 0.0;
    double right_sum = 0.0;
    double left_weight = 0.0;
    double right_weight = 0.0;
};

/// Nearest-pixel taps along one axis; a coordinate exactly between two pixel
/// centers splits evenly so point reflections about the center stay exact.
struct Taps {
    int index[2];
    double weight[2];
    int count;
};

Taps nearest_taps(double coord) {
    const double f = std::floor(coord);
    const int i = static_cast<int>(f);
    if (coord == f) {
        return {{i - 1, i}, {0.5, 0.5}, 2};
    }
    return {{i, i}, {1.0, 0.0}, 1};
}

/// Exact cos/sin at multiples of 45 degrees, symmetric under a half turn.
std::pair<double, double> rotation_cos_sin(double degrees) {
    const double wrapped = std::fmod(std::fmod(degrees, 360.0) + 360.0, 360.0);
    if (wrapped == 0.0) return {1.0, 0.0};
    if (wrapped == 90.0) return {0.0, 1.0};
    if (wrapped == 180.0) return {-1.0, 0.0};
    if (wrapped == 270.0) return {0.0, -1.0};
    constexpr double h = std::numbers::sqrt2 / 2.0;
    if (wrapped == 45.0) return {h, h};
    if (wrapped == 135.0) return {-h, h};
    if (wrapped == 225.0) return {-h, -h};
    if (wrapped == 315.0) return {h, -h};
    const double rad = wrapped * std::numbers::pi / 180.0;
    return {std::cos(rad), std::sin(rad)};
}

HalfSums half_sums(const Image &v, double rotation_deg, const Image &mask) {
    const int w = v.width();
    const int h = v.height();
    const double cx = 0.5 * w;
    const double cy = 0.5 * h;
    const auto [c, s] = rotation_cos_sin(rotation_deg);
    HalfSums sums;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double dx = x + 0.5 - cx;
            if (dx == 0.0) {
                continue; // center column of an odd-width image belongs to neither half
            }
            const double dy = y + 0.5 - cy;
            // Inverse of a counter-clockwise (as displayed, y down) rotation.
            const double sx = cx + c * dx - s * dy;
            const double sy = cy + s * dx + c * dy;
            const Taps tx = nearest_taps(sx);
            const Taps ty = nearest_taps(sy);
            for (int a = 0; a < ty.count; ++a) {
                for (int b = 0; b < tx.count; ++b) {
                    const int ix = tx.index[b];
                    const int iy = ty.index[a];
                    if (ix < 0 || iy < 0 || ix >= w || iy >= h) {
                        continue;
                    }
                    if (!mask.empty() && !(mask.at(0, iy, ix) > 0.5)) {
                        continue;
                    }
                    const double weight = tx.weight[b] * ty.weight[a];
                    const double value = weight * v.at(0, iy, ix);
                    if (dx < 0.0) {
                        sums.left_sum += value;
                        sums.left_weight += weight;
                    } else {
                        sums.right_sum += value;
                        sums.right_weight += weight;
                    }
                }
            }
        }
    }
    return sums;
}

void check_inputs(const Image &v, const Image &mask) {
    if (v.channels() != 1 || v.empty()) {
        throw InvalidParameterError("brightness_ratio expects a non-empty single-channel image");
    }
    if (!mask.empty() && (mask.channels() != 1 || !mask.same_extent(v))) {
        throw InvalidParameterError("brightness_ratio mask must match the value image extent");
    }
}

std::optional<double> ratio_if_defined(const Image &v, double rotation_deg, const Image &mask) {
    const HalfSums s = half_sums(v, rotation_deg, mask);
    if (s.left_weight == 0.0 || s.right_weight == 0.0) {
        return std::nullopt;
    }
    const double left = s.left_sum / s.left_weight;
    const double right = s.right_sum / s.right_weight;
    if (left + right == 0.0) {
        return 0.5;
    }
    return left / (left + right);
}

} // namespace

double brightness_ratio(const Image &v, double rotation_deg, const Image &fg_mask) {
    check_inputs(v, fg_mask);
    const auto ratio = ratio_if_defined(v, rotation_deg, fg_mask);
    if (!ratio) {
        throw DegenerateInputError(fmt::format(
            "no valid pixels in one image half after rotating by {} degrees", rotation_deg));
    }
    return *ratio;
}

std::optional<ViewScore> score_view(const Image &color, const Image &region_mask,
                                    const AvpOptions &options, int view_index) {
    const Image v = value_channel(color);
    check_inputs(v, region_mask);
    std::optional<ViewScore> best;
    for (double rotation : options.rotations) {
        const auto ratio = ratio_if_defined(v, rotation, region_mask);
        if (!ratio) {
            continue;
        }
        if (!best) {
            best = ViewScore{view_index, rotation, *ratio, 0.0};
        }
        best->contrast = std::max(best->contrast, std::abs(*ratio - 0.5));
        const bool better = options.bright_side == BrightSide::Right ? *ratio < best->ratio
                                                                     : *ratio > best->ratio;
        if (better) {
            best->best_rotation = rotation;
            best->ratio = *ratio;
        }
    }
    return best;
}

AvpReport score_views(std::span<const AnchorCandidate> views, const AvpOptions &options) {
    if (views.size() < 2) {
        throw InvalidParameterError(
            fmt::format("anchor proposal needs at least 2 views, got {}", views.size()));
    }
    if (options.rotations.empty()) {
        throw InvalidParameterError("anchor proposal needs a non-empty rotation set");
    }
    AvpReport report;
    report.views.resize(views.size());
    parallel_for(views.size(), options.threads, [&](std::size_t i) {
        report.views[i] = score_view(views[i].color, views[i].region_mask, options,
                                     static_cast<int>(i));
    });

    const ViewScore *winner = nullptr;
    for (const auto &score : report.views) {
        if (score && (winner == nullptr || score->contrast > winner->contrast)) {
            winner = &*score;
        }
    }
    if (winner == nullptr) {
        throw DegenerateInputError("every candidate view is fully masked");
    }
    report.anchor = *winner;
    return report;
}

ViewScore propose_anchor(std::span<const AnchorCandidate> views, const AvpOptions &options) {
    return score_views(views, options).anchor;
}

} // namespace splatedit
