// Copyright (c) 2026 sparsederf authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <png.h>

#include <cstdio>
#include <cstring>
#include <memory>
#include <string>
#include <vector>

#include "sparsederf/common.hpp"

namespace sderf {

// RGB image, doubles in [0, 1], row-major, origin top-left.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> data;  // width * height * 3

  Image() = default;
  Image(int w, int h) : width(w), height(h), data(size_t(w) * h * 3, 0.0) {}

  double& at(int x, int y, int c) {
    return data[(size_t(y) * width + x) * 3 + c];
  }
  double at(int x, int y, int c) const {
    return data[(size_t(y) * width + x) * 3 + c];
  }
};

inline Image load_png(const std::string& path) {
  std::FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw IOError("cannot open image: " + path);
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw IOError("libpng init failed for: " + path);
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw DataError("failed to decode png: " + path);
  }
  png_init_io(png, fp);
  png_read_info(png, info);

  png_uint_32 w = png_get_image_width(png, info);
  png_uint_32 h = png_get_image_height(png, info);
  png_byte color = png_get_color_type(png, info);
  png_byte depth = png_get_bit_depth(png, info);

  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8)
    png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  std::vector<png_byte> rowbuf(png_get_rowbytes(png, info));
  Image img{int(w), int(h)};
  for (png_uint_32 y = 0; y < h; ++y) {
    png_read_row(png, rowbuf.data(), nullptr);
    for (png_uint_32 x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        img.at(int(x), int(y), c) = rowbuf[x * 3 + c] / 255.0;
      }
    }
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return img;
}

inline void save_png(const std::string& path, const Image& img) {
  std::FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw IOError("cannot write image: " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                            nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw IOError("libpng init failed for: " + path);
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw DataError("failed to encode png: " + path);
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_byte> row(size_t(img.width) * 3);
  for (int y = 0; y < img.height; ++y) {
    const double* src = &img.data[size_t(y) * img.width * 3];
    for (int i = 0; i < img.width * 3; ++i) {
      double v = src[i];
      v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
      row[i] = png_byte(v * 255.0 + 0.5);
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

inline double mse(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height)
    throw DataError("mse: image size mismatch");
  double s = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) s += sqr(a.data[i] - b.data[i]);
  return s / double(a.data.size());
}

}  // namespace sderf
