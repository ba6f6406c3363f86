// Copyright Contributors to the splatedit Project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace splatedit {

/// Planar, row-major float64 image: `channels` planes of `height` x `width`.
///
/// Used for rendered color (3 channels), depth and mask (1 channel), and for
/// diffusion latents of arbitrary channel count.
class Image {
  public:
    Image() = default;
    Image(int channels, int height, int width, double fill = 0.0);

    int channels() const noexcept { return channels_; }
    int height() const noexcept { return height_; }
    int width() const noexcept { return width_; }
    std::size_t pixels() const noexcept {
        return static_cast<std::size_t>(height_) * static_cast<std::size_t>(width_);
    }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double &at(int c, int y, int x) noexcept { return data_[index(c, y, x)]; }
    double at(int c, int y, int x) const noexcept { return data_[index(c, y, x)]; }

    std::span<double> plane(int c) noexcept { return {data_.data() + c * pixels(), pixels()}; }
    std::span<const double> plane(int c) const noexcept {
        return {data_.data() + c * pixels(), pixels()};
    }

    std::vector<double> &data() noexcept { return data_; }
    const std::vector<double> &data() const noexcept { return data_; }

    bool same_shape(const Image &other) const noexcept {
        return channels_ == other.channels_ && height_ == other.height_ && width_ == other.width_;
    }
    bool same_extent(const Image &other) const noexcept {
        return height_ == other.height_ && width_ == other.width_;
    }

    /// Copies channels [first, first + count).
    Image slice_channels(int first, int count) const;

    /// Stacks images with identical extent along the channel axis.
    static Image concat_channels(std::span<const Image *const> parts);

    bool operator==(const Image &other) const = default;

  private:
    std::size_t index(int c, int y, int x) const noexcept {
        return (static_cast<std::size_t>(c) * height_ + y) * width_ + x;
    }

    int channels_ = 0;
    int height_ = 0;
    int width_ = 0;
    std::vector<double> data_;
};

/// Throws InvalidParameterError unless `a` and `b` have identical shape.
void require_same_shape(const Image &a, const Image &b, const char *what);

double mean(const Image &image);

/// Peak signal-to-noise ratio for signals in [0, 1].
double psnr(const Image &a, const Image &b);

} // namespace splatedit
