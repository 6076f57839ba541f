#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include "eedvit/parameters.hpp"

namespace eedvit {

struct AdamWConfig {
  double lr = 5e-4;
  double min_lr = 1e-6;
  double weight_decay = 0.04;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t warmup_steps = 100;
  /// Global gradient-norm clip; 0 disables.
  double clip_grad = 3.0;
};

/// Linear warmup to `lr`, then cosine decay to `min_lr` at `total_steps`.
inline double cosine_lr(const AdamWConfig& c, std::size_t step, std::size_t total_steps) {
  if (c.warmup_steps > 0 && step < c.warmup_steps) {
    return c.lr * static_cast<double>(step + 1) / static_cast<double>(c.warmup_steps);
  }
  if (total_steps <= c.warmup_steps) {
    return c.lr;
  }
  const double progress = std::min(
      1.0, static_cast<double>(step - c.warmup_steps) / static_cast<double>(total_steps - c.warmup_steps));
  return c.min_lr + 0.5 * (c.lr - c.min_lr) * (1.0 + std::cos(std::numbers::pi * progress));
}

/// Biases, norms, positional and CLS embeddings are exempt from decay.
inline bool decays(const std::string& name) {
  auto ends_with = [&](std::string_view s) {
    return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
  };
  if (ends_with(".bias") || name == "pos_embed" || name == "cls_token") {
    return false;
  }
  return name.find("norm") == std::string::npos;
}

template <typename T> double global_grad_norm(const Gradients<T>& grads) {
  double total = 0.0;
  for (const auto& g : grads) {
    total += g.template cast<double>().squaredNorm();
  }
  return std::sqrt(total);
}

template <typename T> class AdamW {
public:
  AdamW() = default;
  AdamW(const ParameterSet<T>& params, AdamWConfig config) : config_(config) {
    first_ = params.zero_gradients();
    second_ = params.zero_gradients();
    for (const auto& p : params) {
      decay_.push_back(decays(p.name));
    }
  }

  const AdamWConfig& config() const noexcept { return config_; }
  std::size_t steps_taken() const noexcept { return t_; }
  void set_steps_taken(std::size_t t) noexcept { t_ = t; }
  Gradients<T>& first_moment() noexcept { return first_; }
  Gradients<T>& second_moment() noexcept { return second_; }
  const Gradients<T>& first_moment() const noexcept { return first_; }
  const Gradients<T>& second_moment() const noexcept { return second_; }

  /// Applies one update with learning rate `lr`. Clips `grads` in place.
  void step(ParameterSet<T>& params, Gradients<T>& grads, double lr) {
    if (config_.clip_grad > 0.0) {
      const double norm = global_grad_norm(grads);
      if (norm > config_.clip_grad) {
        const T factor = static_cast<T>(config_.clip_grad / (norm + 1e-6));
        for (auto& g : grads) {
          g *= factor;
        }
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    const T b1 = static_cast<T>(config_.beta1);
    const T b2 = static_cast<T>(config_.beta2);
    const T step_size = static_cast<T>(lr / bc1);
    const T inv_bc2 = static_cast<T>(1.0 / bc2);
    const T eps = static_cast<T>(config_.eps);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& w = params[i].value;
      const auto& g = grads[i];
      if (g.size() == 0) {
        continue;
      }
      if (decay_[i] && config_.weight_decay > 0.0) {
        w *= static_cast<T>(1.0 - lr * config_.weight_decay);
      }
      first_[i] = b1 * first_[i] + (T(1) - b1) * g;
      second_[i] = b2 * second_[i] + (T(1) - b2) * g.cwiseProduct(g);
      w.array() -= step_size * first_[i].array() / ((second_[i].array() * inv_bc2).sqrt() + eps);
    }
  }

private:
  AdamWConfig config_;
  Gradients<T> first_;
  Gradients<T> second_;
  std::vector<bool> decay_;
  std::size_t t_ = 0;
};

} // namespace eedvit
