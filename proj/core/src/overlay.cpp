#include "mvseg/overlay.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "mvseg/error.hpp"

namespace mvseg {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

Mask contour(const Mask& m) {
  Mask out(m.rows(), m.cols());
  for (int r = 0; r < m.rows(); ++r) {
    for (int c = 0; c < m.cols(); ++c) {
      if (!m(r, c)) continue;
      const bool edge = !m.in_bounds(r - 1, c) || !m(r - 1, c) || !m.in_bounds(r + 1, c) ||
                        !m(r + 1, c) || !m.in_bounds(r, c - 1) || !m(r, c - 1) ||
                        !m.in_bounds(r, c + 1) || !m(r, c + 1);
      out(r, c) = edge;
    }
  }
  return out;
}

RgbImage render_overlay(const Image& image, const Mask& truth, const Mask& prediction, int scale) {
  if (!truth.same_shape(prediction) || truth.rows() != image.rows() || truth.cols() != image.cols()) {
    throw ShapeError("overlay: image and masks differ in shape");
  }
  if (scale < 1) throw ConfigError("overlay scale must be >= 1");
  const Mask gt = contour(truth), pr = contour(prediction);
  RgbImage out;
  out.rows = image.rows() * scale;
  out.cols = image.cols() * scale;
  out.pixels.resize(static_cast<std::size_t>(out.rows) * out.cols * 3);
  for (int r = 0; r < out.rows; ++r) {
    for (int c = 0; c < out.cols; ++c) {
      const int sr = r / scale, sc = c / scale;
      const auto g = static_cast<std::uint8_t>(std::lround(std::clamp(image(sr, sc), 0.0f, 1.0f) * 255.0f));
      std::uint8_t rgb[3] = {g, g, g};
      if (gt(sr, sc) && pr(sr, sc)) {
        rgb[0] = 255, rgb[1] = 255, rgb[2] = 0;
      } else if (gt(sr, sc)) {
        rgb[0] = 0, rgb[1] = 255, rgb[2] = 0;
      } else if (pr(sr, sc)) {
        rgb[0] = 255, rgb[1] = 0, rgb[2] = 0;
      }
      std::copy(rgb, rgb + 3, out.pixels.begin() + (static_cast<std::size_t>(r) * out.cols + c) * 3);
    }
  }
  return out;
}

void write_png(const std::filesystem::path& path, const RgbImage& img) {
  if (img.pixels.size() != static_cast<std::size_t>(img.rows) * img.cols * 3 || img.rows <= 0) {
    throw ShapeError("write_png: pixel buffer does not match the image size");
  }
  FilePtr f(std::fopen(path.string().c_str(), "wb"));
  if (!f) throw InputError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw InputError("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw InputError("libpng failed writing " + path.string());
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, img.cols, img.rows, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int r = 0; r < img.rows; ++r) {
    png_write_row(png, img.pixels.data() + static_cast<std::size_t>(r) * img.cols * 3);
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

RgbImage read_png(const std::filesystem::path& path) {
  FilePtr f(std::fopen(path.string().c_str(), "rb"));
  if (!f) throw NotFoundError("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw InputError("libpng initialization failed");
  }
  RgbImage out;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw CorruptionError("not a readable PNG: " + path.string());
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  if (png_get_color_type(png, info) != PNG_COLOR_TYPE_RGB || png_get_bit_depth(png, info) != 8) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw CorruptionError("expected an 8-bit RGB PNG: " + path.string());
  }
  out.rows = static_cast<int>(png_get_image_height(png, info));
  out.cols = static_cast<int>(png_get_image_width(png, info));
  out.pixels.resize(static_cast<std::size_t>(out.rows) * out.cols * 3);
  for (int r = 0; r < out.rows; ++r) {
    png_read_row(png, out.pixels.data() + static_cast<std::size_t>(r) * out.cols * 3, nullptr);
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

}  // namespace mvseg
