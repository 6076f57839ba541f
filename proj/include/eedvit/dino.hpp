#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "eedvit/augment.hpp"
#include "eedvit/autodiff.hpp"
#include "eedvit/errors.hpp"
#include "eedvit/parameters.hpp"
#include "eedvit/rng.hpp"
#include "eedvit/vit.hpp"

namespace eedvit {

struct DinoConfig {
  std::size_t out_dim = 256;
  std::size_t head_hidden = 256;
  std::size_t head_bottleneck = 64;
  double student_temp = 0.1;
  double teacher_temp = 0.04;
  double teacher_momentum = 0.996;
  double center_momentum = 0.9;
  /// Subtract the running center from teacher logits (ablation switch).
  bool centering = true;
  MultiCropConfig crops;

  void validate() const {
    if (!(teacher_temp > 0.0 && teacher_temp < student_temp)) {
      throw ConfigError("DINO temperatures need 0 < teacher_temp < student_temp");
    }
    if (!(teacher_momentum > 0.0 && teacher_momentum < 1.0) ||
        !(center_momentum > 0.0 && center_momentum < 1.0)) {
      throw ConfigError("DINO momenta must lie in (0, 1)");
    }
    if (out_dim < 2 || head_hidden == 0 || head_bottleneck == 0) {
      throw ConfigError("DINO head dimensions must be positive (out_dim >= 2)");
    }
    if (crops.local_size == 0 || crops.global_size == 0) {
      throw ConfigError("crop sizes must be positive");
    }
  }

  friend bool operator==(const DinoConfig& a, const DinoConfig& b) {
    return a.out_dim == b.out_dim && a.head_hidden == b.head_hidden &&
           a.head_bottleneck == b.head_bottleneck && a.student_temp == b.student_temp &&
           a.teacher_temp == b.teacher_temp && a.teacher_momentum == b.teacher_momentum &&
           a.center_momentum == b.center_momentum && a.centering == b.centering;
  }
};

/// Projection head: Linear-GELU-Linear-GELU-Linear, L2 normalization, then a
/// bias-free weight-normalized linear layer to out_dim logits (each output
/// column has unit norm, so logits are cosine similarities in [-1, 1]).
template <typename T>
void add_head_parameters(ParameterSet<T>& params, std::size_t embed_dim, const DinoConfig& cfg,
                         Rng& rng, double init_std = 0.02) {
  auto normal = [&](std::size_t r, std::size_t c) {
    Matrix<T> m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      m.data()[i] = static_cast<T>(truncated_normal(rng, init_std));
    }
    return m;
  };
  auto zeros = [](std::size_t c) { return Matrix<T>::Zero(1, static_cast<Eigen::Index>(c)); };
  params.add("head.fc1.weight", normal(embed_dim, cfg.head_hidden));
  params.add("head.fc1.bias", zeros(cfg.head_hidden));
  params.add("head.fc2.weight", normal(cfg.head_hidden, cfg.head_hidden));
  params.add("head.fc2.bias", zeros(cfg.head_hidden));
  params.add("head.fc3.weight", normal(cfg.head_hidden, cfg.head_bottleneck));
  params.add("head.fc3.bias", zeros(cfg.head_bottleneck));
  params.add("head.last.weight", normal(cfg.head_bottleneck, cfg.out_dim));
}

template <typename T>
ParameterSet<T> init_dino_parameters(const ViTConfig& vit, const DinoConfig& dino, std::uint64_t seed) {
  ParameterSet<T> params;
  Rng rng = make_rng(seed, "vit.init");
  add_vit_parameters(params, vit, rng);
  Rng head_rng = make_rng(seed, "head.init");
  add_head_parameters(params, vit.embed_dim, dino, head_rng, vit.init_std);
  return params;
}

template <typename T> class DinoHead {
public:
  explicit DinoHead(const ParameterSet<T>& params)
      : fc1_w_(params.index_of("head.fc1.weight")), fc1_b_(params.index_of("head.fc1.bias")),
        fc2_w_(params.index_of("head.fc2.weight")), fc2_b_(params.index_of("head.fc2.bias")),
        fc3_w_(params.index_of("head.fc3.weight")), fc3_b_(params.index_of("head.fc3.bias")),
        last_w_(params.index_of("head.last.weight")) {}

  Var forward(Tape<T>& tape, const BoundParameters<T>& p, Var pooled) const {
    Var h = ops::gelu(tape, ops::linear(tape, pooled, p[fc1_w_], p[fc1_b_]));
    h = ops::gelu(tape, ops::linear(tape, h, p[fc2_w_], p[fc2_b_]));
    h = ops::linear(tape, h, p[fc3_w_], p[fc3_b_]);
    h = ops::l2_normalize_rows(tape, h);
    return ops::matmul(tape, h, ops::l2_normalize_cols(tape, p[last_w_]));
  }

private:
  int fc1_w_, fc1_b_, fc2_w_, fc2_b_, fc3_w_, fc3_b_, last_w_;
};

/// Backbone + projection head sharing one ParameterSet.
template <typename T> class DinoNetwork {
public:
  DinoNetwork(const ViTConfig& vit, const ParameterSet<T>& params) : backbone_(vit, params), head_(params) {}

  Var logits(Tape<T>& tape, const BoundParameters<T>& p, const Image& view) const {
    auto out = backbone_.forward(tape, p, view);
    return head_.forward(tape, p, out.pooled);
  }

  const VisionTransformer<T>& backbone() const noexcept { return backbone_; }

private:
  VisionTransformer<T> backbone_;
  DinoHead<T> head_;
};

/// (teacher view, student view) index pairs entering the loss: the teacher
/// sees the two global views; every student view except the same one pairs
/// with it.
inline std::vector<std::pair<std::size_t, std::size_t>> dino_pairs(std::size_t student_views,
                                                                   std::size_t teacher_views = 2) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t t = 0; t < teacher_views; ++t) {
    for (std::size_t s = 0; s < student_views; ++s) {
      if (s != t) {
        pairs.emplace_back(t, s);
      }
    }
  }
  return pairs;
}

/// Sharpened, centered teacher distribution softmax((logits - center) / tau_t).
template <typename T>
Matrix<T> teacher_probabilities(const Matrix<T>& logits, const Matrix<T>& center, double teacher_temp) {
  if (center.size() != 0 && center.cols() != logits.cols()) {
    throw ShapeMismatch("center width differs from teacher logits");
  }
  Matrix<T> shifted = logits;
  if (center.size() != 0) {
    shifted.rowwise() -= center.row(0);
  }
  shifted /= static_cast<T>(teacher_temp);
  return ops::softmax_rows_value(shifted);
}

/// Mean over pairs of -sum_k P_t[k] log P_s[k], recorded on the tape so the
/// gradient reaches the student only (teacher probabilities are constants).
template <typename T>
Var dino_loss(Tape<T>& tape, const std::vector<Var>& student_logits,
              const std::vector<Matrix<T>>& teacher_probs, double student_temp) {
  if (teacher_probs.size() > student_logits.size()) {
    throw ShapeMismatch("more teacher views than student views");
  }
  const auto pairs = dino_pairs(student_logits.size(), teacher_probs.size());
  if (pairs.empty()) {
    throw ShapeMismatch("DINO loss needs at least one (teacher, student) pair");
  }
  std::vector<Var> log_ps;
  log_ps.reserve(student_logits.size());
  for (Var s : student_logits) {
    if (tape.value(s).cols() != teacher_probs.front().cols()) {
      throw ShapeMismatch("student and teacher heads differ in width");
    }
    log_ps.push_back(ops::log_softmax_rows(tape, ops::scale(tape, s, static_cast<T>(1.0 / student_temp))));
  }
  std::vector<Matrix<T>> weights(student_logits.size(),
                                 Matrix<T>::Zero(tape.value(student_logits.front()).rows(),
                                                 tape.value(student_logits.front()).cols()));
  for (auto [t, s] : pairs) {
    weights[s] -= teacher_probs[t];
  }
  const T inv_pairs = T(1) / static_cast<T>(pairs.size());
  Var total{};
  bool first = true;
  for (std::size_t s = 0; s < student_logits.size(); ++s) {
    Var term = ops::weighted_sum(tape, log_ps[s], Matrix<T>(weights[s] * inv_pairs));
    total = first ? term : ops::add(tape, total, term);
    first = false;
  }
  return total;
}

/// Value-only form of the loss over raw logits.
template <typename T>
double dino_loss_value(const std::vector<Matrix<T>>& student_logits, const std::vector<Matrix<T>>& teacher_logits,
                       const Matrix<T>& center, const DinoConfig& cfg) {
  std::vector<Matrix<T>> probs;
  for (const auto& t : teacher_logits) {
    probs.push_back(teacher_probabilities(t, cfg.centering ? center : Matrix<T>(), cfg.teacher_temp));
  }
  const auto pairs = dino_pairs(student_logits.size(), teacher_logits.size());
  double total = 0.0;
  for (auto [t, s] : pairs) {
    if (student_logits[s].cols() != probs[t].cols()) {
      throw ShapeMismatch("student and teacher heads differ in width");
    }
    Matrix<T> scaled = student_logits[s] / static_cast<T>(cfg.student_temp);
    const Matrix<T> log_ps = ops::log_softmax_rows_value(scaled);
    total -= (probs[t].array() * log_ps.array()).template cast<double>().sum();
  }
  return total / static_cast<double>(pairs.size());
}

/// teacher <- m * teacher + (1 - m) * student, elementwise.
template <typename T>
void teacher_ema_update(ParameterSet<T>& teacher, const ParameterSet<T>& student, double momentum) {
  if (!teacher.same_layout(student)) {
    throw ShapeMismatch("teacher and student parameter layouts differ");
  }
  const T m = static_cast<T>(momentum);
  for (std::size_t i = 0; i < teacher.size(); ++i) {
    teacher[i].value = m * teacher[i].value + (T(1) - m) * student[i].value;
  }
}

/// center <- m * center + (1 - m) * mean over rows of the teacher logits.
template <typename T>
Matrix<T> center_update(const Matrix<T>& center, const Matrix<T>& teacher_logits, double momentum) {
  if (teacher_logits.rows() == 0) {
    throw DegenerateInput("center update needs a nonempty batch");
  }
  if (center.cols() != teacher_logits.cols()) {
    throw ShapeMismatch("center width differs from teacher logits");
  }
  const T m = static_cast<T>(momentum);
  Matrix<T> batch_mean = teacher_logits.colwise().mean();
  return m * center + (T(1) - m) * batch_mean;
}

/// Mean Shannon entropy (nats) of the rows of a probability matrix.
template <typename T> double mean_row_entropy(const Matrix<T>& probs) {
  double total = 0.0;
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    for (Eigen::Index c = 0; c < probs.cols(); ++c) {
      const double p = probs(r, c);
      if (p > 0.0) {
        total -= p * std::log(p);
      }
    }
  }
  return probs.rows() ? total / static_cast<double>(probs.rows()) : 0.0;
}

} // namespace eedvit
