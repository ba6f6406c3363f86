// Copyright Contributors to the splatedit Project
// SPDX-License-Identifier: Apache-2.0
//
#include "splatedit/plot.hpp"

#include "splatedit/error.hpp"


#include <algorithm>
#include <cmath>

namespace splatedit {

namespace {

struct Canvas {
    Image image;

    void put(int x, int y, double r, double g, double b) {
        if (x < 0 || y < 0 || x >= image.width() || y >= image.height()) {
            return;
        }
        image.at(0, y, x) = r;
        image.at(1, y, x) = g;
        image.at(2, y, x) = b;
    }

    void line(double x0, double y0, double x1, double y1, double r, double g, double b) {
        const int steps = static_cast<int>(std::ceil(std::max(std::abs(x1 - x0), std::abs(y1 - y0)))) + 1;
        for (int i = 0; i <= steps; ++i) {
            const double t = static_cast<double>(i) / steps;
            const int x = static_cast<int>(std::lround(std::lerp(x0, x1, t)));
            const int y = static_cast<int>(std::lround(std::lerp(y0, y1, t)));
            put(x, y, r, g, b);
            put(x, y + 1, r, g, b);
        }
    }
};

} // namespace

Image plot_curve(const std::vector<double> &values, const CurvePlotOptions &options) {
    if (options.width < 32 || options.height < 32 || !(options.y_max > options.y_min)) {
        throw InvalidParameterError("plot needs >= 32x32 pixels and y_max > y_min");
    }
    Canvas canvas{Image(3, options.height, options.width, 1.0)};
    const int left = 12, right = options.width - 12, top = 12, bottom = options.height - 12;
    const auto px = [&](double i) {
        const double n = std::max<double>(1.0, static_cast<double>(values.size()) - 1.0);
        return left + (right - left) * i / n;
    };
    const auto py = [&](double v) {
        const double t = (v - options.y_min) / (options.y_max - options.y_min);
        return bottom - (bottom - top) * std::clamp(t, 0.0, 1.0);
    };

    for (int q = 1; q < 4; ++q) {
        const double y = top + (bottom - top) * q / 4.0;
        canvas.line(left, y, right, y, 0.9, 0.9, 0.9);
    }
    const double ref = py(options.reference_line);
    for (int x = left; x < right; x += 8) {
        canvas.line(x, ref, std::min(x + 4, right), ref, 0.6, 0.6, 0.6);
    }
    if (options.highlight && *options.highlight >= 0 &&
        static_cast<std::size_t>(*options.highlight) < values.size()) {
        const double x = px(*options.highlight);
        canvas.line(x, top, x, bottom, 0.9, 0.2, 0.2);
    }
    for (std::size_t i = 1; i < values.size(); ++i) {
        if (!std::isfinite(values[i - 1]) || !std::isfinite(values[i])) {
            continue;
        }
        canvas.line(px(static_cast<double>(i - 1)), py(values[i - 1]), px(static_cast<double>(i)),
                    py(values[i]), 0.1, 0.3, 0.8);
    }
    canvas.line(left, top, right, top, 0.0, 0.0, 0.0);
    canvas.line(left, bottom, right, bottom, 0.0, 0.0, 0.0);
    canvas.line(left, top, left, bottom, 0.0, 0.0, 0.0);
    canvas.line(right, top, right, bottom, 0.0, 0.0, 0.0);
    return canvas.image;
}

} // namespace splatedit
