#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "eedvit/errors.hpp"
#include "eedvit/tensor.hpp"

namespace eedvit {

inline constexpr std::size_t image_channels = 3;

/// H x W x 3 image, interleaved channels, values in [0, 1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, float fill = 0.0f)
      : height(h), width(w), pixels(h * w * image_channels, fill) {}

  float& at(std::size_t y, std::size_t x, std::size_t c) {
    return pixels[(y * width + x) * image_channels + c];
  }
  float at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels[(y * width + x) * image_channels + c];
  }

  friend bool operator==(const Image&, const Image&) = default;
};

/// Integer crop rectangle, always inside the source image.
struct CropRect {
  std::size_t top = 0;
  std::size_t left = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  friend bool operator==(const CropRect&, const CropRect&) = default;
};

/// Bilinear resample of a sub-rectangle to out_h x out_w (half-pixel
/// centers, edge clamped). Optionally mirrored horizontally.
inline Image resized_crop(const Image& src, const CropRect& rect, std::size_t out_h,
                          std::size_t out_w, bool flip = false) {
  if (rect.height == 0 || rect.width == 0 || rect.top + rect.height > src.height ||
      rect.left + rect.width > src.width) {
    throw ShapeMismatch("crop rectangle outside the image");
  }
  Image out(out_h, out_w);
  const double sy = static_cast<double>(rect.height) / static_cast<double>(out_h);
  const double sx = static_cast<double>(rect.width) / static_cast<double>(out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0,
                                 static_cast<double>(rect.height - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, rect.height - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0,
                                   static_cast<double>(rect.width - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, rect.width - 1);
      const double wx = fx - static_cast<double>(x0);
      const std::size_t ox = flip ? out_w - 1 - x : x;
      for (std::size_t c = 0; c < image_channels; ++c) {
        const double v00 = src.at(rect.top + y0, rect.left + x0, c);
        const double v01 = src.at(rect.top + y0, rect.left + x1, c);
        const double v10 = src.at(rect.top + y1, rect.left + x0, c);
        const double v11 = src.at(rect.top + y1, rect.left + x1, c);
        const double top = v00 + wx * (v01 - v00);
        const double bottom = v10 + wx * (v11 - v10);
        out.at(y, ox, c) = static_cast<float>(top + wy * (bottom - top));
      }
    }
  }
  return out;
}

/// Non-overlapping patch flattening: one row per patch (grid row-major),
/// columns ordered (dy, dx, channel).
template <typename T> Matrix<T> patchify(const Image& img, std::size_t patch) {
  if (patch == 0 || img.height % patch != 0 || img.width % patch != 0) {
    throw ShapeMismatch("image " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                        " is not divisible into " + std::to_string(patch) + "px patches");
  }
  const std::size_t gh = img.height / patch;
  const std::size_t gw = img.width / patch;
  const std::size_t cols = patch * patch * image_channels;
  Matrix<T> out(static_cast<Eigen::Index>(gh * gw), static_cast<Eigen::Index>(cols));
  for (std::size_t py = 0; py < gh; ++py) {
    for (std::size_t px = 0; px < gw; ++px) {
      const auto row = static_cast<Eigen::Index>(py * gw + px);
      std::size_t col = 0;
      for (std::size_t dy = 0; dy < patch; ++dy) {
        for (std::size_t dx = 0; dx < patch; ++dx) {
          for (std::size_t c = 0; c < image_channels; ++c) {
            out(row, static_cast<Eigen::Index>(col++)) =
                static_cast<T>(img.at(py * patch + dy, px * patch + dx, c));
          }
        }
      }
    }
  }
  return out;
}

} // namespace eedvit
