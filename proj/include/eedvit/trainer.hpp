#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "eedvit/augment.hpp"
#include "eedvit/config.hpp"
#include "eedvit/data.hpp"
#include "eedvit/dino.hpp"
#include "eedvit/errors.hpp"
#include "eedvit/optim.hpp"
#include "eedvit/rng.hpp"

namespace eedvit {

/// Student and teacher share one layout; the teacher is only ever written by
/// the EMA update, never by gradients.
struct DinoState {
  ParameterSet<float> student;
  ParameterSet<float> teacher;
  MatrixF center; // 1 x out_dim
  std::size_t step = 0;
  AdamW<float> optimizer;
};

struct MetricsRow {
  std::size_t step = 0;
  double loss = 0.0;
  double teacher_entropy = 0.0;
  double lr = 0.0;
};

inline DinoState init_dino_state(const TrainConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  DinoState s;
  s.student = init_dino_parameters<float>(cfg.vit, cfg.dino, seed);
  s.teacher = s.student;
  s.center = MatrixF::Zero(1, static_cast<Eigen::Index>(cfg.dino.out_dim));
  s.optimizer = AdamW<float>(s.student, cfg.optim);
  return s;
}

inline std::size_t steps_per_epoch(std::size_t dataset_size, std::size_t batch_size) {
  return std::max<std::size_t>(1, dataset_size / batch_size);
}

/// Dataset indices of the batch consumed at global step `step`: each epoch is
/// a fresh permutation keyed by (seed, epoch), so batches depend only on the
/// step number and resuming reproduces them.
inline std::vector<std::size_t> batch_indices(std::uint64_t seed, std::size_t step, std::size_t dataset_size,
                                              std::size_t batch_size) {
  const std::size_t per_epoch = steps_per_epoch(dataset_size, batch_size);
  const std::size_t epoch = step / per_epoch;
  const std::size_t pos = step % per_epoch;
  std::vector<std::size_t> perm(dataset_size);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng = make_rng(seed, "shuffle", {epoch});
  for (std::size_t i = dataset_size; i > 1; --i) {
    std::swap(perm[i - 1], perm[uniform_index(rng, i)]);
  }
  const std::size_t take = std::min(batch_size, dataset_size);
  const std::size_t begin = pos * take;
  return {perm.begin() + static_cast<std::ptrdiff_t>(begin),
          perm.begin() + static_cast<std::ptrdiff_t>(begin + take)};
}

/// One DINO optimization step at a time over an in-memory dataset.
class DinoTrainer {
public:
  DinoTrainer(TrainConfig cfg, const ImageDataset& data, DinoState state, std::uint64_t seed,
              std::size_t total_steps)
      : cfg_(std::move(cfg)), data_(&data), state_(std::move(state)), seed_(seed), total_steps_(total_steps),
        network_(cfg_.vit, state_.student) {
    cfg_.validate();
    if (data.size() == 0) {
      throw DegenerateInput("training dataset is empty");
    }
    if (data.image_size() != cfg_.vit.image_size) {
      throw ShapeMismatch("dataset images are " + std::to_string(data.image_size()) + "px but the model expects " +
                          std::to_string(cfg_.vit.image_size) + "px");
    }
    if (!state_.student.same_layout(state_.teacher)) {
      throw ShapeMismatch("student and teacher layouts differ");
    }
  }

  const DinoState& state() const noexcept { return state_; }
  DinoState& state() noexcept { return state_; }
  const TrainConfig& config() const noexcept { return cfg_; }

  MetricsRow step() {
    const auto idx = batch_indices(seed_, state_.step, data_->size(), cfg_.batch_size);
    const std::size_t batch = idx.size();
    const auto out_dim = static_cast<Eigen::Index>(cfg_.dino.out_dim);

    std::vector<PerImage> results(batch);
    const std::size_t workers = std::min(cfg_.threads, batch);
    std::vector<Gradients<float>> grads(workers);
    if (workers <= 1) {
      grads[0] = state_.student.zero_gradients();
      for (std::size_t b = 0; b < batch; ++b) {
        results[b] = process(idx[b], b, batch, grads[0]);
      }
    } else {
      std::vector<std::thread> pool;
      const std::size_t chunk = (batch + workers - 1) / workers;
      for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
          grads[w] = state_.student.zero_gradients();
          for (std::size_t b = w * chunk; b < std::min(batch, (w + 1) * chunk); ++b) {
            results[b] = process(idx[b], b, batch, grads[w]);
          }
        });
      }
      for (auto& t : pool) {
        t.join();
      }
      for (std::size_t w = 1; w < workers; ++w) {
        for (std::size_t i = 0; i < grads[0].size(); ++i) {
          grads[0][i] += grads[w][i];
        }
      }
    }

    MetricsRow row;
    row.step = state_.step;
    MatrixF teacher_logits(static_cast<Eigen::Index>(2 * batch), out_dim);
    for (std::size_t b = 0; b < batch; ++b) {
      row.loss += results[b].loss;
      row.teacher_entropy += results[b].teacher_entropy;
      teacher_logits.middleRows(static_cast<Eigen::Index>(2 * b), 2) = results[b].teacher_logits;
    }
    row.loss /= static_cast<double>(batch);
    row.teacher_entropy /= static_cast<double>(batch);
    if (!std::isfinite(row.loss)) {
      std::ostringstream os;
      os << "non-finite DINO loss at step " << state_.step << " (batch of " << batch
         << ", last finite loss " << last_loss_ << ")";
      throw NonFiniteLoss(os.str());
    }
    last_loss_ = row.loss;

    row.lr = cosine_lr(cfg_.optim, state_.step, total_steps_);
    state_.optimizer.step(state_.student, grads[0], row.lr);
    teacher_ema_update(state_.teacher, state_.student, cfg_.dino.teacher_momentum);
    state_.center = center_update(state_.center, teacher_logits, cfg_.dino.center_momentum);
    ++state_.step;
    return row;
  }

  /// Diagnostic: the student tape's parameter leaves for one image. Used to
  /// confirm no teacher tensor is ever differentiated.
  std::vector<int> student_tape_leaves(std::size_t image_index) {
    Tape<float> tape(true);
    BoundParameters<float> bound(tape, state_.student);
    (void)network_.logits(tape, bound, data_->images.at(image_index));
    return tape.parameter_leaves();
  }

private:
  struct PerImage {
    double loss = 0.0;
    double teacher_entropy = 0.0;
    MatrixF teacher_logits; // 2 x out_dim
  };

  PerImage process(std::size_t image_index, std::size_t batch_pos, std::size_t batch, Gradients<float>& grads) const {
    Rng rng = make_rng(seed_, "augment", {state_.step, batch_pos});
    const auto views = multi_crop(data_->images[image_index], rng, cfg_.dino.crops);

    PerImage out;
    out.teacher_logits.resize(2, static_cast<Eigen::Index>(cfg_.dino.out_dim));
    std::vector<MatrixF> teacher_probs;
    {
      Tape<float> tape(false);
      BoundParameters<float> bound(tape, state_.teacher);
      for (int g = 0; g < 2; ++g) {
        const MatrixF logits = tape.value(network_.logits(tape, bound, views[static_cast<std::size_t>(g)].image));
        out.teacher_logits.row(g) = logits.row(0);
        teacher_probs.push_back(
            teacher_probabilities(logits, cfg_.dino.centering ? state_.center : MatrixF(), cfg_.dino.teacher_temp));
        out.teacher_entropy += 0.5 * mean_row_entropy(teacher_probs.back());
      }
    }

    Tape<float> tape(true);
    BoundParameters<float> bound(tape, state_.student);
    std::vector<Var> student_logits;
    for (const auto& v : views) {
      student_logits.push_back(network_.logits(tape, bound, v.image));
    }
    Var loss = dino_loss(tape, student_logits, teacher_probs, cfg_.dino.student_temp);
    out.loss = tape.value(loss)(0, 0);
    Var scaled = ops::scale(tape, loss, 1.0f / static_cast<float>(batch));
    tape.backward(scaled, grads);
    return out;
  }

  TrainConfig cfg_;
  const ImageDataset* data_;
  DinoState state_;
  std::uint64_t seed_;
  std::size_t total_steps_;
  DinoNetwork<float> network_;
  double last_loss_ = 0.0;
};

struct TrainResult {
  DinoState state;
  std::vector<MetricsRow> metrics;
};

/// Trains for `epochs` epochs (exactly cfg.max_steps steps when that is set;
/// zero epochs returns the initial state untouched), starting from
/// `initial` when given. `on_step` sees every metrics row and the state after
/// the update (checkpointing, progress).
inline TrainResult train(const ImageDataset& data, const TrainConfig& cfg, std::size_t epochs, std::uint64_t seed,
                         std::optional<DinoState> initial = std::nullopt,
                         const std::function<void(const MetricsRow&, const DinoState&)>& on_step = {}) {
  if (data.size() == 0) {
    throw DegenerateInput("training dataset is empty");
  }
  const std::size_t total =
      cfg.max_steps > 0 ? cfg.max_steps : epochs * steps_per_epoch(data.size(), cfg.batch_size);
  DinoState state = initial ? std::move(*initial) : init_dino_state(cfg, seed);
  TrainResult result;
  if (epochs == 0) {
    result.state = std::move(state);
    return result;
  }
  const std::size_t start = state.step;
  DinoTrainer trainer(cfg, data, std::move(state), seed, std::max(total, start));
  for (std::size_t s = start; s < total; ++s) {
    result.metrics.push_back(trainer.step());
    if (on_step) {
      on_step(result.metrics.back(), trainer.state());
    }
  }
  result.state = std::move(trainer.state());
  return result;
}

} // namespace eedvit
