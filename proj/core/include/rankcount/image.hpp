#pragma once

#include <filesystem>
#include <vector>

#include "rankcount/geometry.hpp"

namespace rankcount {

/// Single-channel image, row-major, values in [0, 1].
struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> pixels;

  double at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  double& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }

  static Image filled(int width, int height, double value);
};

/// Reads an 8-bit PGM (binary P5 or ASCII P2); gray levels are mapped to
/// [0, 1].
Image load_pgm(const std::filesystem::path& path);
/// Writes binary P5, clamping values to [0, 1].
void save_pgm(const std::filesystem::path& path, const Image& img);
/// Reads only the dimensions from a PGM header.
void read_pgm_size(const std::filesystem::path& path, int& width, int& height);

Image crop(const Image& img, const Rect& rect);
/// Bilinear resampling with half-pixel centers (src = (dst + 0.5) * scale - 0.5).
Image resize_bilinear(const Image& img, int out_width, int out_height);

}  // namespace rankcount
