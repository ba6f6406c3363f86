// Copyright Contributors to the splatedit Project
// SPDX-License-Identifier: Apache-2.0
//
// Minimal raster line plot for per-view diagnostics.
#pragma once

#include "splatedit/image.hpp"

#include <optional>
#include <vector>

namespace splatedit {

struct CurvePlotOptions {
    int width = 640;
    int height = 240;
    double y_min = 0.0;
    double y_max = 1.0;
    std::optional<int> highlight; ///< sample index marked with a vertical bar
    double reference_line = 0.5;  ///< dashed horizontal guide
};

/// RGB plot of `values` against their index on a white canvas with a frame,
/// quarter gridlines, the dashed reference line and the curve in blue.
/// Non-finite samples break the curve.
Image plot_curve(const std::vector<double> &values, const CurvePlotOptions &options = {});

} // namespace splatedit
