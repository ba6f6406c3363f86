// Copyright Contributors to the splatedit Project
// SPDX-License-Identifier: Apache-2.0
//
// PNG import/export for [0, 1] images.
#pragma once

#include "splatedit/image.hpp"

#include <filesystem>
#include <vector>

namespace splatedit {

/// Writes a 1-channel (gray) or 3-channel (RGB) image, clamping to [0, 1] and
/// rounding to `bit_depth` (8 or 16) bits. Throws IoError on failure.
void write_png(const Image &image, const std::filesystem::path &path, int bit_depth = 8);

/// Reads any PNG as an image in [0, 1]: gray inputs give one channel, color
/// inputs three. Alpha is dropped and palettes expanded. Throws IoError or FormatError.
Image read_png(const std::filesystem::path &path);

/// Lays equally sized images out left to right, top to bottom in `columns` columns.
Image tile_images(const std::vector<Image> &images, int columns, double fill = 1.0);

} // namespace splatedit
