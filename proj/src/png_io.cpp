// Copyright Contributors to the splatedit Project
// SPDX-License-Identifier: Apache-2.0
//
#include "splatedit/png_io.hpp"

#include "splatedit/error.hpp"

#include <fmt/format.h>
#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <memory>
#include <vector>

namespace splatedit {

namespace {

struct FileCloser {
    void operator()(std::FILE *f) const { std::fclose(f); }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

File open_file(const std::filesystem::path &path, const char *mode) {
    File f(std::fopen(path.c_str(), mode));
    if (!f) {
        throw IoError(fmt::format("cannot open '{}'", path.string()));
    }
    return f;
}

[[noreturn]] void png_fail(png_structp png, png_const_charp message) {
    auto *what = static_cast<std::string *>(png_get_error_ptr(png));
    *what = message;
    png_longjmp(png, 1);
}

void png_warn(png_structp, png_const_charp) {}

} // namespace

void write_png(const Image &image, const std::filesystem::path &path, int bit_depth) {
    if (image.channels() != 1 && image.channels() != 3) {
        throw InvalidParameterError(
            fmt::format("PNG export needs 1 or 3 channels, got {}", image.channels()));
    }
    if (bit_depth != 8 && bit_depth != 16) {
        throw InvalidParameterError(fmt::format("PNG bit depth must be 8 or 16, got {}", bit_depth));
    }
    if (image.empty()) {
        throw InvalidParameterError("cannot write an empty PNG");
    }
    const int w = image.width();
    const int h = image.height();
    const int c = image.channels();
    const int bytes = bit_depth / 8;
    const double scale = bit_depth == 8 ? 255.0 : 65535.0;
    std::vector<unsigned char> rows(static_cast<std::size_t>(w) * h * c * bytes);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int ch = 0; ch < c; ++ch) {
                const double v = std::clamp(image.at(ch, y, x), 0.0, 1.0);
                const auto q = static_cast<unsigned>(std::lround(v * scale));
                const std::size_t at = ((static_cast<std::size_t>(y) * w + x) * c + ch) * bytes;
                if (bytes == 1) {
                    rows[at] = static_cast<unsigned char>(q);
                } else {
                    rows[at] = static_cast<unsigned char>(q >> 8); // PNG is big-endian
                    rows[at + 1] = static_cast<unsigned char>(q & 0xff);
                }
            }
        }
    }

    File file = open_file(path, "wb");
    std::string error;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &error, png_fail, png_warn);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("libpng initialization failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError(fmt::format("writing '{}' failed: {}", path.string(), error));
    }
    png_init_io(png, file.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), bit_depth,
                 c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    const std::size_t stride = static_cast<std::size_t>(w) * c * bytes;
    for (int y = 0; y < h; ++y) {
        png_write_row(png, rows.data() + y * stride);
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Image read_png(const std::filesystem::path &path) {
    File file = open_file(path, "rb");
    unsigned char signature[8] = {};
    if (std::fread(signature, 1, 8, file.get()) != 8 || png_sig_cmp(signature, 0, 8) != 0) {
        throw FormatError(fmt::format("'{}' is not a PNG file", path.string()));
    }
    std::string error;
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &error, png_fail, png_warn);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("libpng initialization failed");
    }
    Image out;
    std::vector<unsigned char> data;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError(fmt::format("reading '{}' failed: {}", path.string(), error));
    }
    png_init_io(png, file.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    png_set_expand(png);
    png_set_strip_alpha(png);
    png_set_swap(png); // 16-bit samples to host little-endian
    png_read_update_info(png, info);
    const auto w = png_get_image_width(png, info);
    const auto h = png_get_image_height(png, info);
    const int depth = png_get_bit_depth(png, info);
    const int channels = png_get_channels(png, info);
    const std::size_t stride = png_get_rowbytes(png, info);
    data.resize(stride * h);
    rows.resize(h);
    for (png_uint_32 y = 0; y < h; ++y) {
        rows[y] = data.data() + y * stride;
    }
    png_read_image(png, rows.data());
    png_destroy_read_struct(&png, &info, nullptr);

    if (channels != 1 && channels != 3) {
        throw FormatError(fmt::format("'{}' has {} channels after expansion", path.string(), channels));
    }
    out = Image(channels, static_cast<int>(h), static_cast<int>(w));
    const double scale = depth == 16 ? 65535.0 : 255.0;
    for (int y = 0; y < static_cast<int>(h); ++y) {
        for (int x = 0; x < static_cast<int>(w); ++x) {
            for (int c = 0; c < channels; ++c) {
                const std::size_t i = static_cast<std::size_t>(x) * channels + c;
                double v = 0.0;
                if (depth == 16) {
                    std::uint16_t s = 0;
                    std::memcpy(&s, rows[static_cast<std::size_t>(y)] + 2 * i, 2);
                    v = s;
                } else {
                    v = rows[static_cast<std::size_t>(y)][i];
                }
                out.at(c, y, x) = v / scale;
            }
        }
    }
    return out;
}

Image tile_images(const std::vector<Image> &images, int columns, double fill) {
    if (images.empty()) {
        return {};
    }
    if (columns <= 0) {
        throw InvalidParameterError(fmt::format("tile columns must be > 0, got {}", columns));
    }
    const Image &first = images.front();
    for (const Image &img : images) {
        if (!img.same_shape(first)) {
            throw InvalidParameterError("tiled images must share one shape");
        }
    }
    const int n = static_cast<int>(images.size());
    const int cols = std::min(columns, n);
    const int rows = (n + cols - 1) / cols;
    Image out(first.channels(), rows * first.height(), cols * first.width(), fill);
    for (int i = 0; i < n; ++i) {
        const int oy = (i / cols) * first.height();
        const int ox = (i % cols) * first.width();
        for (int c = 0; c < first.channels(); ++c) {
            for (int y = 0; y < first.height(); ++y) {
                for (int x = 0; x < first.width(); ++x) {
                    out.at(c, oy + y, ox + x) = images[static_cast<std::size_t>(i)].at(c, y, x);
                }
            }
        }
    }
    return out;
}

} // namespace splatedit
