#pragma once

#include <cstdint>
#include <set>
#include <string>

#include "eedvit/dino.hpp"
#include "eedvit/errors.hpp"
#include "eedvit/kv.hpp"
#include "eedvit/optim.hpp"
#include "eedvit/rng.hpp"
#include "eedvit/vit.hpp"

namespace eedvit {

/// Everything a training run needs besides data, epochs and seed.
struct TrainConfig {
  ViTConfig vit;
  DinoConfig dino;
  AdamWConfig optim;
  std::size_t batch_size = 32;
  /// Stop after this many optimizer steps; 0 means epochs * steps_per_epoch.
  std::size_t max_steps = 0;
  /// Steps between periodic checkpoints; 0 disables.
  std::size_t checkpoint_every = 0;
  /// Worker threads for per-image forward/backward. 1 is the bit-reproducible
  /// reference path.
  std::size_t threads = 1;

  void validate() const {
    vit.validate();
    dino.validate();
    if (batch_size == 0) {
      throw ConfigError("train.batch_size must be positive");
    }
    if (threads == 0) {
      throw ConfigError("train.threads must be positive");
    }
    if (dino.crops.local_size % vit.patch_size != 0) {
      throw ConfigError("dino.local_size must be a multiple of vit.patch_size");
    }
  }
};

inline KeyValues to_key_values(const TrainConfig& c) {
  KeyValues kv;
  kv.set_number("vit.image_size", c.vit.image_size);
  kv.set_number("vit.patch_size", c.vit.patch_size);
  kv.set_number("vit.embed_dim", c.vit.embed_dim);
  kv.set_number("vit.num_layers", c.vit.num_layers);
  kv.set_number("vit.num_heads", c.vit.num_heads);
  kv.set_number("vit.mlp_ratio", c.vit.mlp_ratio);
  kv.set("vit.include_cls_token", c.vit.include_cls_token ? "true" : "false");
  kv.set_number("vit.init_std", c.vit.init_std);
  kv.set_number("vit.ln_eps", c.vit.ln_eps);
  kv.set_number("vit.pixel_mean", c.vit.pixel_mean);
  kv.set_number("vit.pixel_std", c.vit.pixel_std);

  kv.set_number("dino.out_dim", c.dino.out_dim);
  kv.set_number("dino.head_hidden", c.dino.head_hidden);
  kv.set_number("dino.head_bottleneck", c.dino.head_bottleneck);
  kv.set_number("dino.student_temp", c.dino.student_temp);
  kv.set_number("dino.teacher_temp", c.dino.teacher_temp);
  kv.set_number("dino.teacher_momentum", c.dino.teacher_momentum);
  kv.set_number("dino.center_momentum", c.dino.center_momentum);
  kv.set("dino.centering", c.dino.centering ? "true" : "false");
  kv.set_number("dino.num_local_crops", c.dino.crops.num_local_crops);
  kv.set_number("dino.local_size", c.dino.crops.local_size);
  kv.set_number("dino.global_scale_min", c.dino.crops.global_scale.min);
  kv.set_number("dino.global_scale_max", c.dino.crops.global_scale.max);
  kv.set_number("dino.local_scale_min", c.dino.crops.local_scale.min);
  kv.set_number("dino.local_scale_max", c.dino.crops.local_scale.max);
  kv.set_number("dino.flip_probability", c.dino.crops.flip_probability);
  kv.set_number("dino.channel_jitter", c.dino.crops.channel_jitter);

  kv.set_number("optim.lr", c.optim.lr);
  kv.set_number("optim.min_lr", c.optim.min_lr);
  kv.set_number("optim.weight_decay", c.optim.weight_decay);
  kv.set_number("optim.beta1", c.optim.beta1);
  kv.set_number("optim.beta2", c.optim.beta2);
  kv.set_number("optim.eps", c.optim.eps);
  kv.set_number("optim.warmup_steps", c.optim.warmup_steps);
  kv.set_number("optim.clip_grad", c.optim.clip_grad);

  kv.set_number("train.batch_size", c.batch_size);
  kv.set_number("train.max_steps", c.max_steps);
  kv.set_number("train.checkpoint_every", c.checkpoint_every);
  kv.set_number("train.threads", c.threads);
  return kv;
}

/// Overlays `kv` onto `base`. Unknown keys are rejected so typos surface.
inline TrainConfig train_config_from(const KeyValues& kv, TrainConfig base = {}) {
  const std::set<std::string> known = [] {
    std::set<std::string> s;
    const KeyValues defaults = to_key_values(TrainConfig{});
    for (const auto& [k, v] : defaults.entries()) {
      s.insert(k);
    }
    return s;
  }();
  for (const auto& [k, v] : kv.entries()) {
    if (!known.contains(k)) {
      throw ConfigError("unknown config key '" + k + "'");
    }
  }
  TrainConfig c = base;
  auto sz = [&](const char* key, std::size_t fallback) {
    return static_cast<std::size_t>(kv.get_uint(key, fallback));
  };
  c.vit.image_size = sz("vit.image_size", c.vit.image_size);
  c.vit.patch_size = sz("vit.patch_size", c.vit.patch_size);
  c.vit.embed_dim = sz("vit.embed_dim", c.vit.embed_dim);
  c.vit.num_layers = sz("vit.num_layers", c.vit.num_layers);
  c.vit.num_heads = sz("vit.num_heads", c.vit.num_heads);
  c.vit.mlp_ratio = sz("vit.mlp_ratio", c.vit.mlp_ratio);
  c.vit.include_cls_token = kv.get_bool("vit.include_cls_token", c.vit.include_cls_token);
  c.vit.init_std = kv.get_double("vit.init_std", c.vit.init_std);
  c.vit.ln_eps = kv.get_double("vit.ln_eps", c.vit.ln_eps);
  c.vit.pixel_mean = kv.get_double("vit.pixel_mean", c.vit.pixel_mean);
  c.vit.pixel_std = kv.get_double("vit.pixel_std", c.vit.pixel_std);

  c.dino.out_dim = sz("dino.out_dim", c.dino.out_dim);
  c.dino.head_hidden = sz("dino.head_hidden", c.dino.head_hidden);
  c.dino.head_bottleneck = sz("dino.head_bottleneck", c.dino.head_bottleneck);
  c.dino.student_temp = kv.get_double("dino.student_temp", c.dino.student_temp);
  c.dino.teacher_temp = kv.get_double("dino.teacher_temp", c.dino.teacher_temp);
  c.dino.teacher_momentum = kv.get_double("dino.teacher_momentum", c.dino.teacher_momentum);
  c.dino.center_momentum = kv.get_double("dino.center_momentum", c.dino.center_momentum);
  c.dino.centering = kv.get_bool("dino.centering", c.dino.centering);
  c.dino.crops.num_local_crops = sz("dino.num_local_crops", c.dino.crops.num_local_crops);
  c.dino.crops.local_size = sz("dino.local_size", c.dino.crops.local_size);
  c.dino.crops.global_scale.min = kv.get_double("dino.global_scale_min", c.dino.crops.global_scale.min);
  c.dino.crops.global_scale.max = kv.get_double("dino.global_scale_max", c.dino.crops.global_scale.max);
  c.dino.crops.local_scale.min = kv.get_double("dino.local_scale_min", c.dino.crops.local_scale.min);
  c.dino.crops.local_scale.max = kv.get_double("dino.local_scale_max", c.dino.crops.local_scale.max);
  c.dino.crops.flip_probability = kv.get_double("dino.flip_probability", c.dino.crops.flip_probability);
  c.dino.crops.channel_jitter = kv.get_double("dino.channel_jitter", c.dino.crops.channel_jitter);
  c.dino.crops.global_size = c.vit.image_size;

  c.optim.lr = kv.get_double("optim.lr", c.optim.lr);
  c.optim.min_lr = kv.get_double("optim.min_lr", c.optim.min_lr);
  c.optim.weight_decay = kv.get_double("optim.weight_decay", c.optim.weight_decay);
  c.optim.beta1 = kv.get_double("optim.beta1", c.optim.beta1);
  c.optim.beta2 = kv.get_double("optim.beta2", c.optim.beta2);
  c.optim.eps = kv.get_double("optim.eps", c.optim.eps);
  c.optim.warmup_steps = sz("optim.warmup_steps", c.optim.warmup_steps);
  c.optim.clip_grad = kv.get_double("optim.clip_grad", c.optim.clip_grad);

  c.batch_size = sz("train.batch_size", c.batch_size);
  c.max_steps = sz("train.max_steps", c.max_steps);
  c.checkpoint_every = sz("train.checkpoint_every", c.checkpoint_every);
  c.threads = sz("train.threads", c.threads);
  c.validate();
  return c;
}

/// Stable identifier of the architecture (only vit.* keys contribute).
inline std::uint64_t vit_config_hash(const ViTConfig& vit) {
  TrainConfig c;
  c.vit = vit;
  const KeyValues kv = to_key_values(c);
  std::string text;
  for (const auto& [k, v] : kv.entries()) {
    if (k.rfind("vit.", 0) == 0) {
      text += k + "=" + v + "\n";
    }
  }
  return mix64(fnv1a(text));
}

} // namespace eedvit
