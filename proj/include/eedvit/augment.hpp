#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "eedvit/image.hpp"
#include "eedvit/rng.hpp"

namespace eedvit {

struct CropScale {
  double min = 0.08;
  double max = 1.0;
};

struct MultiCropConfig {
  std::size_t global_size = 32;
  std::size_t local_size = 16;
  CropScale global_scale{0.4, 1.0};
  CropScale local_scale{0.05, 0.4};
  std::size_t num_local_crops = 2;
  double flip_probability = 0.5;
  /// Each channel is multiplied by 1 + U(-jitter, jitter), then clamped.
  double channel_jitter = 0.2;
};

/// Inception-style random-resized-crop rectangle: area fraction uniform in
/// `scale`, log-uniform aspect ratio in [3/4, 4/3]; after 10 rejected draws
/// falls back to the largest centered crop with a clamped ratio.
inline CropRect sample_crop_rect(Rng& rng, std::size_t height, std::size_t width, CropScale scale) {
  const double area = static_cast<double>(height) * static_cast<double>(width);
  const double log_lo = std::log(3.0 / 4.0);
  const double log_hi = std::log(4.0 / 3.0);
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = area * uniform(rng, scale.min, scale.max);
    const double ratio = std::exp(uniform(rng, log_lo, log_hi));
    const auto w = static_cast<std::size_t>(std::lround(std::sqrt(target * ratio)));
    const auto h = static_cast<std::size_t>(std::lround(std::sqrt(target / ratio)));
    if (w > 0 && h > 0 && w <= width && h <= height) {
      const auto top = static_cast<std::size_t>(uniform_index(rng, height - h + 1));
      const auto left = static_cast<std::size_t>(uniform_index(rng, width - w + 1));
      return {top, left, h, w};
    }
  }
  const double in_ratio = static_cast<double>(width) / static_cast<double>(height);
  std::size_t w = width;
  std::size_t h = height;
  if (in_ratio < 3.0 / 4.0) {
    h = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(w) / (3.0 / 4.0))));
  } else if (in_ratio > 4.0 / 3.0) {
    w = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(h) * (4.0 / 3.0))));
  }
  h = std::min(h, height);
  w = std::min(w, width);
  return {(height - h) / 2, (width - w) / 2, h, w};
}

struct CropView {
  Image image;
  CropRect rect;
  bool flipped = false;
  bool global = false;
};

inline CropView random_view(const Image& src, Rng& rng, CropScale scale, std::size_t out_size,
                            const MultiCropConfig& cfg, bool global) {
  CropView v;
  v.rect = sample_crop_rect(rng, src.height, src.width, scale);
  v.flipped = uniform01(rng) < cfg.flip_probability;
  v.image = resized_crop(src, v.rect, out_size, out_size, v.flipped);
  v.global = global;
  if (cfg.channel_jitter > 0.0) {
    for (std::size_t c = 0; c < image_channels; ++c) {
      const auto gain = static_cast<float>(1.0 + uniform(rng, -cfg.channel_jitter, cfg.channel_jitter));
      for (std::size_t i = c; i < v.image.pixels.size(); i += image_channels) {
        v.image.pixels[i] = std::clamp(v.image.pixels[i] * gain, 0.0f, 1.0f);
      }
    }
  }
  return v;
}

/// Two global views at full resolution followed by the local views.
inline std::vector<CropView> multi_crop(const Image& src, Rng& rng, const MultiCropConfig& cfg) {
  std::vector<CropView> views;
  views.reserve(2 + cfg.num_local_crops);
  for (int g = 0; g < 2; ++g) {
    views.push_back(random_view(src, rng, cfg.global_scale, cfg.global_size, cfg, true));
  }
  for (std::size_t l = 0; l < cfg.num_local_crops; ++l) {
    views.push_back(random_view(src, rng, cfg.local_scale, cfg.local_size, cfg, false));
  }
  return views;
}

} // namespace eedvit
