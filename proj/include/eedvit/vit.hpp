#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "eedvit/autodiff.hpp"
#include "eedvit/errors.hpp"
#include "eedvit/image.hpp"
#include "eedvit/parameters.hpp"
#include "eedvit/rng.hpp"
#include "eedvit/tensor.hpp"

namespace eedvit {

struct ViTConfig {
  std::size_t image_size = 32;
  std::size_t patch_size = 4;
  std::size_t embed_dim = 64;
  std::size_t num_layers = 6;
  std::size_t num_heads = 4;
  std::size_t mlp_ratio = 4;
  bool include_cls_token = true;
  double init_std = 0.02;
  double ln_eps = 1e-6;
  /// Pixels enter the patch projection as (v - pixel_mean) / pixel_std.
  double pixel_mean = 0.5;
  double pixel_std = 0.25;

  /// Architecture of ViT-Small with 4px patches for 32px inputs.
  static ViTConfig vit_small() {
    ViTConfig c;
    c.embed_dim = 384;
    c.num_layers = 12;
    c.num_heads = 6;
    c.mlp_ratio = 4;
    return c;
  }

  std::size_t grid() const { return image_size / patch_size; }
  std::size_t num_patches() const { return grid() * grid(); }
  std::size_t tokens_per_image() const { return num_patches() + (include_cls_token ? 1 : 0); }
  std::size_t patch_dim() const { return patch_size * patch_size * image_channels; }
  std::size_t head_dim() const { return embed_dim / num_heads; }
  std::size_t mlp_hidden() const { return mlp_ratio * embed_dim; }

  void validate() const {
    if (patch_size == 0 || image_size == 0 || image_size % patch_size != 0) {
      throw ConfigError("image_size must be a positive multiple of patch_size");
    }
    if (num_heads == 0 || embed_dim == 0 || embed_dim % num_heads != 0) {
      throw ConfigError("embed_dim must be a positive multiple of num_heads");
    }
    if (num_layers == 0 || mlp_ratio == 0) {
      throw ConfigError("num_layers and mlp_ratio must be positive");
    }
    if (!(pixel_std > 0.0) || !(init_std >= 0.0) || !(ln_eps > 0.0)) {
      throw ConfigError("pixel_std, ln_eps must be positive and init_std nonnegative");
    }
  }

  friend bool operator==(const ViTConfig&, const ViTConfig&) = default;
};

/// Where a layer's tokens are read: the residual stream leaving the block, or
/// that stream after the next LayerNorm (final norm for the last block).
enum class CapturePoint { residual, normalized };

/// Token embeddings of one layer, concatenated over a probe batch.
template <typename T> struct LayerActivations {
  std::size_t layer_index = 0;
  std::size_t tokens_per_image = 0;
  Matrix<T> tokens; // (images * tokens_per_image) x D
};

namespace detail {

inline Matrix<double> linear_interp_1d(std::size_t src, std::size_t dst) {
  Matrix<double> m = Matrix<double>::Zero(static_cast<Eigen::Index>(dst), static_cast<Eigen::Index>(src));
  const double s = static_cast<double>(src) / static_cast<double>(dst);
  for (std::size_t i = 0; i < dst; ++i) {
    const double f = std::clamp((static_cast<double>(i) + 0.5) * s - 0.5, 0.0, static_cast<double>(src - 1));
    const auto i0 = static_cast<std::size_t>(f);
    const std::size_t i1 = std::min(i0 + 1, src - 1);
    const double w = f - static_cast<double>(i0);
    m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i0)) += 1.0 - w;
    m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i1)) += w;
  }
  return m;
}

} // namespace detail

/// Bilinear resampling of a src x src positional grid to dst x dst, as a
/// (dst^2 x src^2) matrix acting on row-major grid rows.
template <typename T> Matrix<T> grid_interpolation(std::size_t src, std::size_t dst) {
  const Matrix<double> a = detail::linear_interp_1d(src, dst);
  Matrix<double> out = Matrix<double>::Zero(static_cast<Eigen::Index>(dst * dst), static_cast<Eigen::Index>(src * src));
  for (std::size_t y = 0; y < dst; ++y) {
    for (std::size_t x = 0; x < dst; ++x) {
      for (std::size_t sy = 0; sy < src; ++sy) {
        const double wy = a(static_cast<Eigen::Index>(y), static_cast<Eigen::Index>(sy));
        if (wy == 0.0) {
          continue;
        }
        for (std::size_t sx = 0; sx < src; ++sx) {
          out(static_cast<Eigen::Index>(y * dst + x), static_cast<Eigen::Index>(sy * src + sx)) =
              wy * a(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(sx));
        }
      }
    }
  }
  return out.cast<T>();
}

/// Adds the backbone parameters for `config` to `params`.
/// Weights ~ truncated normal(0, init_std); biases zero; LayerNorm gain one.
template <typename T> void add_vit_parameters(ParameterSet<T>& params, const ViTConfig& config, Rng& rng) {
  config.validate();
  const auto d = static_cast<Eigen::Index>(config.embed_dim);
  const auto hidden = static_cast<Eigen::Index>(config.mlp_hidden());
  auto normal = [&](Eigen::Index r, Eigen::Index c) {
    Matrix<T> m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      m.data()[i] = static_cast<T>(truncated_normal(rng, config.init_std));
    }
    return m;
  };
  auto zeros = [](Eigen::Index r, Eigen::Index c) { return Matrix<T>::Zero(r, c); };
  auto ones = [](Eigen::Index r, Eigen::Index c) { return Matrix<T>::Ones(r, c); };

  params.add("patch_embed.weight", normal(static_cast<Eigen::Index>(config.patch_dim()), d));
  params.add("patch_embed.bias", zeros(1, d));
  if (config.include_cls_token) {
    params.add("cls_token", normal(1, d));
  }
  params.add("pos_embed", normal(static_cast<Eigen::Index>(config.tokens_per_image()), d));
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    const std::string p = "blocks." + std::to_string(l) + ".";
    params.add(p + "norm1.weight", ones(1, d));
    params.add(p + "norm1.bias", zeros(1, d));
    params.add(p + "attn.qkv.weight", normal(d, 3 * d));
    params.add(p + "attn.qkv.bias", zeros(1, 3 * d));
    params.add(p + "attn.proj.weight", normal(d, d));
    params.add(p + "attn.proj.bias", zeros(1, d));
    params.add(p + "norm2.weight", ones(1, d));
    params.add(p + "norm2.bias", zeros(1, d));
    params.add(p + "mlp.fc1.weight", normal(d, hidden));
    params.add(p + "mlp.fc1.bias", zeros(1, hidden));
    params.add(p + "mlp.fc2.weight", normal(hidden, d));
    params.add(p + "mlp.fc2.bias", zeros(1, d));
  }
  params.add("norm.weight", ones(1, d));
  params.add("norm.bias", zeros(1, d));
}

template <typename T> ParameterSet<T> init_vit_parameters(const ViTConfig& config, std::uint64_t seed) {
  ParameterSet<T> params;
  Rng rng = make_rng(seed, "vit.init");
  add_vit_parameters(params, config, rng);
  return params;
}

/// Pre-norm Vision Transformer evaluated on a Tape.
template <typename T> class VisionTransformer {
public:
  struct Output {
    Var tokens;   // final block output after the final LayerNorm
    Var pooled;   // CLS row, or token mean without CLS
    std::vector<Var> captured;
  };

  VisionTransformer(ViTConfig config, const ParameterSet<T>& params) : config_(std::move(config)) {
    config_.validate();
    patch_w_ = params.index_of("patch_embed.weight");
    patch_b_ = params.index_of("patch_embed.bias");
    pos_ = params.index_of("pos_embed");
    cls_ = config_.include_cls_token ? params.index_of("cls_token") : -1;
    for (std::size_t l = 0; l < config_.num_layers; ++l) {
      const std::string p = "blocks." + std::to_string(l) + ".";
      blocks_.push_back({params.index_of(p + "norm1.weight"), params.index_of(p + "norm1.bias"),
                         params.index_of(p + "attn.qkv.weight"), params.index_of(p + "attn.qkv.bias"),
                         params.index_of(p + "attn.proj.weight"), params.index_of(p + "attn.proj.bias"),
                         params.index_of(p + "norm2.weight"), params.index_of(p + "norm2.bias"),
                         params.index_of(p + "mlp.fc1.weight"), params.index_of(p + "mlp.fc1.bias"),
                         params.index_of(p + "mlp.fc2.weight"), params.index_of(p + "mlp.fc2.bias")});
    }
    norm_w_ = params.index_of("norm.weight");
    norm_b_ = params.index_of("norm.bias");
    const auto d = static_cast<Eigen::Index>(config_.embed_dim);
    if (params[static_cast<std::size_t>(pos_)].value.rows() != static_cast<Eigen::Index>(config_.tokens_per_image()) ||
        params[static_cast<std::size_t>(pos_)].value.cols() != d ||
        params[static_cast<std::size_t>(patch_w_)].value.rows() != static_cast<Eigen::Index>(config_.patch_dim())) {
      throw ShapeMismatch("parameter shapes do not match the ViT configuration");
    }
  }

  const ViTConfig& config() const noexcept { return config_; }

  /// Patch flattening, linear projection, positional embedding and (when
  /// enabled) a prepended CLS token. Square images of any multiple of the
  /// patch size are accepted; positional embeddings are resampled bilinearly
  /// when the grid differs from the configured one.
  Var patch_embed(Tape<T>& tape, const BoundParameters<T>& p, const Image& image) const {
    if (image.height != image.width || image.height % config_.patch_size != 0) {
      throw ShapeMismatch("patch_embed: image " + std::to_string(image.height) + "x" +
                          std::to_string(image.width) + " does not tile into " +
                          std::to_string(config_.patch_size) + "px patches");
    }
    Matrix<T> patches = patchify<T>(image, config_.patch_size);
    patches.array() = (patches.array() - static_cast<T>(config_.pixel_mean)) / static_cast<T>(config_.pixel_std);
    Var x = ops::linear(tape, tape.constant(std::move(patches)), p[patch_w_], p[patch_b_]);

    const std::size_t grid = image.height / config_.patch_size;
    const auto n_patch = static_cast<Eigen::Index>(config_.num_patches());
    const Eigen::Index offset = config_.include_cls_token ? 1 : 0;
    Var pos_patch = offset ? ops::slice_rows(tape, p[pos_], offset, n_patch) : p[pos_];
    if (grid != config_.grid()) {
      pos_patch = ops::matmul(tape, tape.constant(grid_interpolation<T>(config_.grid(), grid)), pos_patch);
    }
    x = ops::add(tape, x, pos_patch);
    if (config_.include_cls_token) {
      Var cls = ops::add(tape, p[cls_], ops::slice_rows(tape, p[pos_], 0, 1));
      x = ops::concat_rows(tape, cls, x);
    }
    return x;
  }

  /// x + MHSA(LN(x)), then + MLP(LN(.)) with GELU hidden layer.
  Var encoder_layer(Tape<T>& tape, const BoundParameters<T>& p, std::size_t layer, Var x) const {
    const Block& b = blocks_.at(layer);
    const auto eps = static_cast<T>(config_.ln_eps);
    const auto rows = tape.value(x).rows();
    const auto cols = tape.value(x).cols();
    if (cols != static_cast<Eigen::Index>(config_.embed_dim)) {
      throw ShapeMismatch("encoder_layer: token width differs from embed_dim");
    }
    Var h = ops::layer_norm(tape, x, p[b.norm1_w], p[b.norm1_b], eps);
    h = ops::linear(tape, h, p[b.qkv_w], p[b.qkv_b]);
    h = ops::attention(tape, h, static_cast<int>(config_.num_heads));
    h = ops::linear(tape, h, p[b.proj_w], p[b.proj_b]);
    x = ops::add(tape, x, h);
    h = ops::layer_norm(tape, x, p[b.norm2_w], p[b.norm2_b], eps);
    h = ops::gelu(tape, ops::linear(tape, h, p[b.fc1_w], p[b.fc1_b]));
    h = ops::linear(tape, h, p[b.fc2_w], p[b.fc2_b]);
    x = ops::add(tape, x, h);
    if (tape.value(x).rows() != rows || tape.value(x).cols() != cols) {
      throw ShapeMismatch("encoder_layer changed the token shape");
    }
    return x;
  }

  Var final_norm(Tape<T>& tape, const BoundParameters<T>& p, Var x) const {
    return ops::layer_norm(tape, x, p[norm_w_], p[norm_b_], static_cast<T>(config_.ln_eps));
  }

  Output forward(Tape<T>& tape, const BoundParameters<T>& p, const Image& image,
                 std::span<const std::size_t> capture_layers = {},
                 CapturePoint point = CapturePoint::residual) const {
    Output out;
    Var x = patch_embed(tape, p, image);
    for (std::size_t l = 0; l < config_.num_layers; ++l) {
      x = encoder_layer(tape, p, l, x);
      if (std::find(capture_layers.begin(), capture_layers.end(), l) != capture_layers.end()) {
        out.captured.push_back(point == CapturePoint::residual ? x : capture_normalized(tape, p, l, x));
      }
    }
    out.tokens = final_norm(tape, p, x);
    out.pooled = config_.include_cls_token ? ops::slice_rows(tape, out.tokens, 0, 1)
                                           : ops::mean_rows(tape, out.tokens);
    return out;
  }

private:
  struct Block {
    int norm1_w, norm1_b, qkv_w, qkv_b, proj_w, proj_b, norm2_w, norm2_b, fc1_w, fc1_b, fc2_w, fc2_b;
  };

  Var capture_normalized(Tape<T>& tape, const BoundParameters<T>& p, std::size_t layer, Var x) const {
    const auto eps = static_cast<T>(config_.ln_eps);
    if (layer + 1 < config_.num_layers) {
      const Block& next = blocks_[layer + 1];
      return ops::layer_norm(tape, x, p[next.norm1_w], p[next.norm1_b], eps);
    }
    return final_norm(tape, p, x);
  }

  ViTConfig config_;
  int patch_w_ = -1, patch_b_ = -1, pos_ = -1, cls_ = -1, norm_w_ = -1, norm_b_ = -1;
  std::vector<Block> blocks_;
};

template <typename T> struct CaptureResult {
  Matrix<T> features; // (images * tokens) x D after the final LayerNorm
  std::vector<LayerActivations<T>> layers;
};

/// Inference over a batch with per-layer token capture. Never mutates params.
template <typename T>
CaptureResult<T> forward_with_capture(std::span<const Image> images, const ViTConfig& config,
                                      const ParameterSet<T>& params,
                                      std::span<const std::size_t> capture_layers,
                                      CapturePoint point = CapturePoint::residual) {
  for (std::size_t l : capture_layers) {
    if (l >= config.num_layers) {
      throw ShapeMismatch("capture layer " + std::to_string(l) + " outside 0.." +
                          std::to_string(config.num_layers - 1));
    }
  }
  std::vector<std::size_t> layers(capture_layers.begin(), capture_layers.end());
  std::sort(layers.begin(), layers.end());
  layers.erase(std::unique(layers.begin(), layers.end()), layers.end());

  const VisionTransformer<T> model(config, params);
  const auto n_tok = static_cast<Eigen::Index>(config.tokens_per_image());
  const auto d = static_cast<Eigen::Index>(config.embed_dim);
  const auto total = static_cast<Eigen::Index>(images.size()) * n_tok;

  CaptureResult<T> result;
  result.features.resize(total, d);
  for (std::size_t l : layers) {
    result.layers.push_back({l, config.tokens_per_image(), Matrix<T>(total, d)});
  }
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].height != config.image_size || images[i].width != config.image_size) {
      throw ShapeMismatch("probe image size differs from the model's image_size");
    }
    Tape<T> tape(false);
    BoundParameters<T> bound(tape, params);
    auto out = model.forward(tape, bound, images[i], layers, point);
    const auto row0 = static_cast<Eigen::Index>(i) * n_tok;
    result.features.middleRows(row0, n_tok) = tape.value(out.tokens);
    for (std::size_t k = 0; k < layers.size(); ++k) {
      result.layers[k].tokens.middleRows(row0, n_tok) = tape.value(out.captured[k]);
    }
  }
  return result;
}

} // namespace eedvit
