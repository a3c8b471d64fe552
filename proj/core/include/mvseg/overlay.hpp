#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "mvseg/grid.hpp"

namespace mvseg {

struct RgbImage {
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> pixels;  // row-major RGB
};

// Foreground pixels with a 4-neighbor outside the mask (or on the border).
Mask contour(const Mask& m);

// Grayscale image with ground-truth contour in green, predicted contour in
// red and their overlap in yellow, upscaled by `scale` (nearest neighbor).
RgbImage render_overlay(const Image& image, const Mask& truth, const Mask& prediction, int scale = 3);

void write_png(const std::filesystem::path& path, const RgbImage& img);
RgbImage read_png(const std::filesystem::path& path);

}  // namespace mvseg
