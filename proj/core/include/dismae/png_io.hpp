// Copyright (c) 2026, The dismae Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace dismae {

/// 8-bit interleaved image, 1 (gray) or 3 (RGB) channels.
struct Image8 {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<std::uint8_t> pixels;
};

void write_png(const std::filesystem::path& path, const Image8& img);
/// Any PNG flavour, converted to 8-bit RGB.
Image8 read_png_rgb(const std::filesystem::path& path);

/// [0,1] → round(v·255), clamped.
std::uint8_t to_byte(double v);

}  // namespace dismae
