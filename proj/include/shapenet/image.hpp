// Copyright 2026 The shapenet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

namespace shapenet {

/// Interleaved (HWC) image with intensities in [0, 1].
///
/// Continuous pixel coordinates put the top-left corner of pixel (i, j) at
/// (j, i), so its centre is at (j + 0.5, i + 0.5).
struct Image {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<double> data;

  Image() = default;
  Image(int w, int h, int c, double fill = 0.0)
      : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

  double& at(int x, int y, int c) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  double at(int x, int y, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  friend bool operator==(const Image&, const Image&) = default;
};

enum class Border { clamp, zero };

/// Bilinear sample at continuous coordinates (x, y).
double sample_bilinear(const Image& image, double x, double y, int channel, Border border);

/// Decodes PNG (8/16-bit, gray/RGB, alpha dropped) or JPEG.
Image read_image(const std::string& path);

/// Writes an 8-bit PNG (1 or 3 channels).
void write_png(const Image& image, const std::string& path);

}  // namespace shapenet
