// Copyright 2026 The shapenet Authors
// SPDX-License-Identifier: Apache-2.0

#include "shapenet/image.hpp"

#include "shapenet/error.hpp"

#include <jpeglib.h>
#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <filesystem>
#include <memory>

namespace shapenet {

double sample_bilinear(const Image& image, double x, double y, int channel, Border border) {
  // Shift to pixel-centre index space.
  const double fx = x - 0.5;
  const double fy = y - 0.5;
  if (border == Border::zero &&
      (fx < -1.0 || fy < -1.0 || fx > image.width || fy > image.height)) {
    return 0.0;
  }
  const int x0 = static_cast<int>(std::floor(fx));
  const int y0 = static_cast<int>(std::floor(fy));
  const double ax = fx - x0;
  const double ay = fy - y0;
  auto pixel = [&](int px, int py) {
    if (px < 0 || py < 0 || px >= image.width || py >= image.height) {
      if (border == Border::zero) return 0.0;
      px = std::clamp(px, 0, image.width - 1);
      py = std::clamp(py, 0, image.height - 1);
    }
    return image.at(px, py, channel);
  };
  return (1 - ay) * ((1 - ax) * pixel(x0, y0) + ax * pixel(x0 + 1, y0)) +
         ay * ((1 - ax) * pixel(x0, y0 + 1) + ax * pixel(x0 + 1, y0 + 1));
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::string& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw Error(ErrorCode::io, "cannot open " + path);
  return f;
}

Image read_png(const std::string& path) {
  FilePtr file = open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::io, "libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::parse, "corrupt PNG: " + path);
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) {
    png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
  }
  if (depth == 16) png_set_swap(png);
  png_read_update_info(png, info);

  const int width = static_cast<int>(png_get_image_width(png, info));
  const int height = static_cast<int>(png_get_image_height(png, info));
  const int channels = png_get_channels(png, info);
  const int out_depth = png_get_bit_depth(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  std::vector<unsigned char> buffer(rowbytes * static_cast<std::size_t>(height));
  std::vector<png_bytep> rows(static_cast<std::size_t>(height));
  for (int y = 0; y < height; ++y) rows[static_cast<std::size_t>(y)] = buffer.data() + rowbytes * y;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);

  Image img(width, height, channels);
  if (out_depth == 16) {
    for (int y = 0; y < height; ++y) {
      const auto* row = reinterpret_cast<const std::uint16_t*>(rows[static_cast<std::size_t>(y)]);
      for (int i = 0; i < width * channels; ++i) {
        img.data[static_cast<std::size_t>(y) * width * channels + i] = row[i] / 65535.0;
      }
    }
  } else {
    for (int y = 0; y < height; ++y) {
      const unsigned char* row = rows[static_cast<std::size_t>(y)];
      for (int i = 0; i < width * channels; ++i) {
        img.data[static_cast<std::size_t>(y) * width * channels + i] = row[i] / 255.0;
      }
    }
  }
  return img;
}

struct JpegError {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegError*>(cinfo->err);
  std::longjmp(err->jump, 1);
}

Image read_jpeg(const std::string& path) {
  FilePtr file = open_file(path, "rb");
  jpeg_decompress_struct cinfo{};
  JpegError err{};
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = jpeg_error_exit;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw Error(ErrorCode::parse, "corrupt JPEG: " + path);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, file.get());
  jpeg_read_header(&cinfo, TRUE);
  if (cinfo.jpeg_color_space != JCS_GRAYSCALE) cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  Image img(static_cast<int>(cinfo.output_width), static_cast<int>(cinfo.output_height),
            cinfo.output_components);
  std::vector<unsigned char> row(static_cast<std::size_t>(img.width) * img.channels);
  while (cinfo.output_scanline < cinfo.output_height) {
    const int y = static_cast<int>(cinfo.output_scanline);
    unsigned char* ptr = row.data();
    jpeg_read_scanlines(&cinfo, &ptr, 1);
    for (std::size_t i = 0; i < row.size(); ++i) {
      img.data[static_cast<std::size_t>(y) * row.size() + i] = row[i] / 255.0;
    }
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return img;
}

}  // namespace

Image read_image(const std::string& path) {
  unsigned char magic[8] = {};
  {
    FilePtr f = open_file(path, "rb");
    const std::size_t n = std::fread(magic, 1, sizeof(magic), f.get());
    if (n < 3) throw Error(ErrorCode::parse, "image file too short: " + path);
  }
  if (png_sig_cmp(magic, 0, 8) == 0) return read_png(path);
  if (magic[0] == 0xFF && magic[1] == 0xD8 && magic[2] == 0xFF) return read_jpeg(path);
  throw Error(ErrorCode::parse, "unsupported image format: " + path);
}

void write_png(const Image& image, const std::string& path) {
  if (image.channels != 1 && image.channels != 3) {
    throw Error(ErrorCode::io, "PNG output supports 1 or 3 channels");
  }
  const std::filesystem::path target(path);
  if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
  const std::string tmp = path + ".tmp";
  FilePtr file = open_file(tmp, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::io, "libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::io, "PNG encoding failed: " + path);
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width),
               static_cast<png_uint_32>(image.height), 8,
               image.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<unsigned char> row(static_cast<std::size_t>(image.width) * image.channels);
  for (int y = 0; y < image.height; ++y) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      const double v = image.data[static_cast<std::size_t>(y) * row.size() + i];
      row[i] = static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fflush(file.get()) != 0) throw Error(ErrorCode::io, "cannot flush " + tmp);
  file.reset();
  std::filesystem::rename(tmp, target);
}

}  // namespace shapenet
