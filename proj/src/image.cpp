// Copyright Contributors to the splatedit Project
// SPDX-License-Identifier: Apache-2.0
//
#include "splatedit/image.hpp"

#include "splatedit/error.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace splatedit {

Image::Image(int channels, int height, int width, double fill)
    : channels_(channels), height_(height), width_(width) {
    if (channels < 0 || height < 0 || width < 0) {
        throw InvalidParameterError(
            fmt::format("negative image shape ({}, {}, {})", channels, height, width));
    }
    data_.assign(static_cast<std::size_t>(channels) * height * width, fill);
}

Image Image::slice_channels(int first, int count) const {
    if (first < 0 || count < 0 || first + count > channels_) {
        throw InvalidParameterError(fmt::format("channel slice [{}, {}) out of range for {} channels",
                                                first, first + count, channels_));
    }
    Image out(count, height_, width_);
    std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(first * pixels()), count * pixels(),
                out.data_.begin());
    return out;
}

Image Image::concat_channels(std::span<const Image *const> parts) {
    if (parts.empty()) {
        return {};
    }
    int channels = 0;
    for (const Image *part : parts) {
        if (!part->same_extent(*parts.front())) {
            throw InvalidParameterError("channel concatenation requires equal spatial extent");
        }
        channels += part->channels();
    }
    Image out(channels, parts.front()->height(), parts.front()->width());
    auto dst = out.data_.begin();
    for (const Image *part : parts) {
        dst = std::copy(part->data_.begin(), part->data_.end(), dst);
    }
    return out;
}

void require_same_shape(const Image &a, const Image &b, const char *what) {
    if (!a.same_shape(b)) {
        throw InvalidParameterError(fmt::format("{}: shape ({}, {}, {}) does not match ({}, {}, {})",
                                                what, a.channels(), a.height(), a.width(),
                                                b.channels(), b.height(), b.width()));
    }
}

double mean(const Image &image) {
    if (image.empty()) {
        return 0.0;
    }
    return std::accumulate(image.data().begin(), image.data().end(), 0.0) /
           static_cast<double>(image.size());
}

double psnr(const Image &a, const Image &b) {
    require_same_shape(a, b, "psnr");
    double sse = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a.data()[i] - b.data()[i];
        sse += d * d;
    }
    const double mse = sse / static_cast<double>(std::max<std::size_t>(a.size(), 1));
    if (mse == 0.0) {
        return std::numeric_limits<double>::infinity();
    }
    return -10.0 * std::log10(mse);
}

} // namespace splatedit
