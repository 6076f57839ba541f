#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "eedvit/errors.hpp"
#include "eedvit/image.hpp"
#include "eedvit/io.hpp"
#include "eedvit/kv.hpp"
#include "eedvit/rng.hpp"

namespace eedvit {

struct ImageDataset {
  std::vector<Image> images;
  std::vector<int> labels; // empty or one per image
  std::string source;

  std::size_t size() const noexcept { return images.size(); }
  std::size_t image_size() const { return images.empty() ? 0 : images.front().height; }

  /// Uniform square shapes and pixel values in [0, 1].
  void validate() const {
    if (!labels.empty() && labels.size() != images.size()) {
      throw FormatError("label count differs from image count");
    }
    for (const auto& img : images) {
      if (img.height != images.front().height || img.width != images.front().width) {
        throw FormatError("dataset images differ in shape");
      }
      for (float v : img.pixels) {
        if (!(v >= 0.0f && v <= 1.0f)) {
          throw FormatError("pixel value outside [0, 1]");
        }
      }
    }
  }
};

// ---------------------------------------------------------------------------
// CIFAR-100 binary layout: per record 1 coarse label byte, 1 fine label byte,
// then 1024 R, 1024 G, 1024 B bytes (row-major planes). The same record
// layout with a different plane size stores the synthetic corpora.
// ---------------------------------------------------------------------------

inline std::size_t cifar100_record_size(std::size_t image_size) {
  return 2 + image_channels * image_size * image_size;
}

inline ImageDataset decode_cifar100(std::span<const std::uint8_t> bytes, std::size_t image_size,
                                    const std::string& origin) {
  const std::size_t record = cifar100_record_size(image_size);
  if (bytes.empty() || bytes.size() % record != 0) {
    throw FormatError(origin + ": size " + std::to_string(bytes.size()) + " is not a multiple of the " +
                      std::to_string(record) + "-byte record");
  }
  const std::size_t n = bytes.size() / record;
  const std::size_t plane = image_size * image_size;
  ImageDataset ds;
  ds.source = origin;
  ds.images.reserve(n);
  ds.labels.reserve(n);
  for (std::size_t r = 0; r < n; ++r) {
    const std::uint8_t* rec = bytes.data() + r * record;
    ds.labels.push_back(rec[1]);
    Image img(image_size, image_size);
    for (std::size_t c = 0; c < image_channels; ++c) {
      for (std::size_t i = 0; i < plane; ++i) {
        img.pixels[i * image_channels + c] = static_cast<float>(rec[2 + c * plane + i]) / 255.0f;
      }
    }
    ds.images.push_back(std::move(img));
  }
  return ds;
}

/// Reads a CIFAR-100 binary file (train.bin / test.bin); fine labels kept.
inline ImageDataset load_cifar100(const std::string& path, std::size_t image_size = 32) {
  const auto bytes = read_file(path);
  return decode_cifar100(bytes, image_size, path);
}

inline std::uint8_t quantize_pixel(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

inline std::vector<std::uint8_t> encode_cifar100(const ImageDataset& ds) {
  const std::size_t size = ds.image_size();
  const std::size_t plane = size * size;
  std::vector<std::uint8_t> out;
  out.reserve(ds.size() * cifar100_record_size(size));
  for (std::size_t r = 0; r < ds.size(); ++r) {
    const int label = ds.labels.empty() ? 0 : ds.labels[r];
    out.push_back(0);
    out.push_back(static_cast<std::uint8_t>(label));
    for (std::size_t c = 0; c < image_channels; ++c) {
      for (std::size_t i = 0; i < plane; ++i) {
        out.push_back(quantize_pixel(ds.images[r].pixels[i * image_channels + c]));
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic corpora
// ---------------------------------------------------------------------------

enum class CorpusKind { texture, object };

inline const char* to_string(CorpusKind k) { return k == CorpusKind::texture ? "texture" : "object"; }

inline std::optional<CorpusKind> parse_corpus_kind(const std::string& s) {
  if (s == "texture") {
    return CorpusKind::texture;
  }
  if (s == "object") {
    return CorpusKind::object;
  }
  return std::nullopt;
}

inline constexpr int texture_classes = 4;
inline constexpr int object_classes = 4;

namespace detail {

/// Zero-mean, unit-variance scalar field of `waves` random plane waves with
/// spatial frequency in [f_lo, f_hi] cycles/pixel and orientation
/// theta0 +- spread.
inline std::vector<double> wave_field(Rng& rng, std::size_t size, int waves, double f_lo, double f_hi,
                                      double theta0, double spread) {
  std::vector<double> field(size * size, 0.0);
  for (int k = 0; k < waves; ++k) {
    const double f = uniform(rng, f_lo, f_hi);
    const double theta = theta0 + uniform(rng, -spread, spread);
    const double phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    const double amp = uniform(rng, 0.5, 1.0);
    const double kx = 2.0 * std::numbers::pi * f * std::cos(theta);
    const double ky = 2.0 * std::numbers::pi * f * std::sin(theta);
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        field[y * size + x] += amp * std::sin(kx * static_cast<double>(x) + ky * static_cast<double>(y) + phase);
      }
    }
  }
  return field;
}

/// White noise minus its 3x3 box blur: a high-pass field.
inline std::vector<double> highpass_noise(Rng& rng, std::size_t size) {
  std::vector<double> white(size * size);
  for (double& v : white) {
    v = standard_normal(rng);
  }
  std::vector<double> out(size * size);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      double acc = 0.0;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const std::size_t yy = (y + size + static_cast<std::size_t>(dy + 1) - 1) % size;
          const std::size_t xx = (x + size + static_cast<std::size_t>(dx + 1) - 1) % size;
          acc += white[yy * size + xx];
        }
      }
      out[y * size + x] = white[y * size + x] - acc / 9.0;
    }
  }
  return out;
}

inline void standardize(std::vector<double>& f) {
  double mean = 0.0;
  for (double v : f) {
    mean += v;
  }
  mean /= static_cast<double>(f.size());
  double var = 0.0;
  for (double v : f) {
    var += (v - mean) * (v - mean);
  }
  const double sd = std::sqrt(var / static_cast<double>(f.size()));
  for (double& v : f) {
    v = sd > 0.0 ? (v - mean) / sd : 0.0;
  }
}

/// Stationary colored texture: per channel an independent mix of the shared
/// wave field and channel-specific waves and noise, all in the class band.
inline Image texture_image(Rng& rng, std::size_t size, int cls, double contrast) {
  // Class = frequency band x orientation family.
  constexpr std::array<double, texture_classes> band_lo{0.10, 0.18, 0.26, 0.34};
  const double f_lo = band_lo[static_cast<std::size_t>(cls)];
  const double f_hi = f_lo + 0.08;
  const double theta0 = static_cast<double>(cls) * std::numbers::pi / 4.0;
  const double spread = std::numbers::pi / 6.0;

  std::vector<double> shared = wave_field(rng, size, 6, f_lo, f_hi, theta0, spread);
  standardize(shared);
  Image img(size, size);
  for (std::size_t c = 0; c < image_channels; ++c) {
    std::vector<double> own = wave_field(rng, size, 4, f_lo, f_hi, theta0, spread);
    standardize(own);
    std::vector<double> noise = highpass_noise(rng, size);
    standardize(noise);
    const double base = uniform(rng, 0.35, 0.65);
    const double mix = uniform(rng, 0.3, 0.7);
    for (std::size_t i = 0; i < size * size; ++i) {
      const double v = mix * shared[i] + (1.0 - mix) * own[i] + 0.35 * noise[i];
      img.pixels[i * image_channels + c] = static_cast<float>(std::clamp(base + contrast * v, 0.0, 1.0));
    }
  }
  return img;
}

/// Inside test for shape class `cls` centered at the origin, in the shape's
/// own rotated frame, with characteristic radius r.
inline bool inside_shape(int cls, double u, double v, double r) {
  switch (cls) {
  case 0: // disc
    return u * u + v * v <= r * r;
  case 1: // square
    return std::abs(u) <= r && std::abs(v) <= r;
  case 2: { // equilateral triangle, circumradius r
    const double h = r * 0.5;
    if (v < -h) {
      return false;
    }
    const double slope = std::sqrt(3.0);
    return v <= r - slope * std::abs(u);
  }
  default: { // cross, arm half-width r/3
    const double w = r / 3.0;
    return (std::abs(u) <= r && std::abs(v) <= w) || (std::abs(v) <= r && std::abs(u) <= w);
  }
  }
}

struct ShapeMask {
  std::vector<std::uint8_t> mask;
  std::size_t area = 0;
};

inline ShapeMask rasterize_shape(std::size_t size, int cls, double cx, double cy, double r, double angle) {
  ShapeMask m;
  m.mask.assign(size * size, 0);
  const double ca = std::cos(angle);
  const double sa = std::sin(angle);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double dx = static_cast<double>(x) + 0.5 - cx;
      const double dy = static_cast<double>(y) + 0.5 - cy;
      const double u = ca * dx + sa * dy;
      const double v = -sa * dx + ca * dy;
      if (inside_shape(cls, u, v, r)) {
        m.mask[y * size + x] = 1;
        ++m.area;
      }
    }
  }
  return m;
}

} // namespace detail

/// Texture-centric corpus: stationary high-frequency fields whose class is
/// carried by spectral statistics (frequency band, orientation) only.
inline ImageDataset gen_texture_dataset(std::uint64_t seed, std::size_t n, std::size_t size = 32) {
  if (n == 0 || size < 8) {
    throw DegenerateInput("texture corpus needs n >= 1 and size >= 8");
  }
  ImageDataset ds;
  ds.source = "synthetic-texture";
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = make_rng(seed, "texture", {i});
    const int cls = static_cast<int>(uniform_index(rng, texture_classes));
    ds.images.push_back(detail::texture_image(rng, size, cls, 0.16));
    ds.labels.push_back(cls);
  }
  return ds;
}

/// Object-centric corpus: one solid shape (disc, square, triangle, cross) at
/// random position, scale, rotation and color, covering 5-40% of the pixels,
/// composited over a cluttered high-frequency background. The label is the
/// shape; the background is nuisance.
inline ImageDataset gen_object_dataset(std::uint64_t seed, std::size_t n, std::size_t size = 32) {
  if (n == 0 || size < 8) {
    throw DegenerateInput("object corpus needs n >= 1 and size >= 8");
  }
  ImageDataset ds;
  ds.source = "synthetic-object";
  const double s = static_cast<double>(size);
  const double total = s * s;
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = make_rng(seed, "object", {i});
    const int cls = static_cast<int>(uniform_index(rng, object_classes));
    const int bg_cls = static_cast<int>(uniform_index(rng, texture_classes));
    Image img = detail::texture_image(rng, size, bg_cls, 0.10);

    detail::ShapeMask shape;
    for (int attempt = 0;; ++attempt) {
      const double r = uniform(rng, 0.16, 0.42) * s;
      const double cx = uniform(rng, 0.3, 0.7) * s;
      const double cy = uniform(rng, 0.3, 0.7) * s;
      const double angle = uniform(rng, 0.0, 2.0 * std::numbers::pi);
      shape = detail::rasterize_shape(size, cls, cx, cy, r, angle);
      const double frac = static_cast<double>(shape.area) / total;
      if (frac >= 0.05 && frac <= 0.40) {
        break;
      }
      if (attempt > 1000) {
        throw DegenerateInput("object generator could not place a shape");
      }
    }
    std::array<float, image_channels> color{};
    for (auto& c : color) {
      c = static_cast<float>(uniform01(rng) < 0.5 ? uniform(rng, 0.0, 0.2) : uniform(rng, 0.8, 1.0));
    }
    for (std::size_t p = 0; p < size * size; ++p) {
      if (shape.mask[p]) {
        for (std::size_t c = 0; c < image_channels; ++c) {
          img.pixels[p * image_channels + c] = color[c];
        }
      }
    }
    ds.images.push_back(std::move(img));
    ds.labels.push_back(cls);
  }
  return ds;
}

inline ImageDataset generate_corpus(CorpusKind kind, std::uint64_t seed, std::size_t n, std::size_t size) {
  return kind == CorpusKind::texture ? gen_texture_dataset(seed, n, size) : gen_object_dataset(seed, n, size);
}

// ---------------------------------------------------------------------------
// On-disk dataset directory: images.bin (CIFAR-100 record layout at the
// stored size) plus manifest.txt (key = value).
// ---------------------------------------------------------------------------

inline void write_dataset_dir(const std::string& dir, const ImageDataset& ds, const KeyValues& extra) {
  namespace fs = std::filesystem;
  KeyValues manifest = extra;
  manifest.set("format", "cifar100-records");
  manifest.set("images", "images.bin");
  manifest.set_number("count", ds.size());
  manifest.set_number("image_size", ds.image_size());
  manifest.set("source", ds.source);
  const auto bytes = encode_cifar100(ds);
  write_file_atomic((fs::path(dir) / "images.bin").string(), bytes);
  write_text_atomic((fs::path(dir) / "manifest.txt").string(), manifest.to_text());
}

/// Loads either a dataset directory (with manifest.txt) or a raw CIFAR-100
/// binary file.
inline ImageDataset load_dataset(const std::string& path) {
  namespace fs = std::filesystem;
  if (fs::is_directory(path)) {
    const auto manifest = KeyValues::load((fs::path(path) / "manifest.txt").string());
    if (manifest.get("format", "") != "cifar100-records") {
      throw FormatError(path + ": unsupported dataset format '" + manifest.get("format", "") + "'");
    }
    const auto size = static_cast<std::size_t>(manifest.get_uint("image_size", 32));
    const auto file = (fs::path(path) / manifest.get("images", "images.bin")).string();
    ImageDataset ds = decode_cifar100(read_file(file), size, file);
    ds.source = manifest.get("source", file);
    if (manifest.contains("count") && manifest.get_uint("count", 0) != ds.size()) {
      throw FormatError(path + ": manifest count differs from the image file");
    }
    return ds;
  }
  if (!fs::exists(path)) {
    throw IoError("dataset not found: " + path);
  }
  return load_cifar100(path);
}

/// First n images (or all) as a probe set.
inline std::vector<Image> take_images(const ImageDataset& ds, std::size_t n) {
  n = std::min(n, ds.size());
  return {ds.images.begin(), ds.images.begin() + static_cast<std::ptrdiff_t>(n)};
}

} // namespace eedvit
