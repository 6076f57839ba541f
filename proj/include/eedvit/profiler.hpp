#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "eedvit/config.hpp"
#include "eedvit/covariance.hpp"
#include "eedvit/data.hpp"
#include "eedvit/dump.hpp"
#include "eedvit/errors.hpp"
#include "eedvit/rng.hpp"
#include "eedvit/spectral.hpp"
#include "eedvit/vit.hpp"

namespace eedvit {

inline constexpr const char* layer_convention = "L0 = output of the first encoder block";

struct ProfileOptions {
  std::size_t probe_images = 256;
  std::uint64_t seed = 0;
  Centering centering = Centering::centered;
  bool include_cls = true;
  CapturePoint capture = CapturePoint::residual;
  double phantom_threshold = default_phantom_threshold;
  /// Per-layer eigendecompositions may run concurrently.
  std::size_t threads = 1;
};

/// Layer-wise EED of one model on one dataset.
struct EEDProfile {
  std::vector<SpectrumReport> layers; // index l = 0..L-1
  std::size_t dim = 0;
  std::size_t probe_images = 0;
  std::size_t token_rows = 0; // rows of each H^(l)
  std::uint64_t config_hash = 0;
  std::string dataset_tag;
  Centering centering = Centering::centered;
  bool include_cls = true;

  std::vector<double> eed_percents() const {
    std::vector<double> out;
    out.reserve(layers.size());
    for (const auto& r : layers) {
      out.push_back(r.eed_percent);
    }
    return out;
  }
};

struct BottleneckSummary {
  std::size_t argmin_layer = 0;
  double min_eed_percent = 0.0;
  double first_eed_percent = 0.0;
  double last_eed_percent = 0.0;
  /// min(first, last) - interior minimum, floored at 0; > 0 means U-shape.
  double u_shape_score = 0.0;
};

/// Distinct probe image indices, sampled without replacement by `seed`.
inline std::vector<std::size_t> probe_indices(std::size_t dataset_size, std::size_t count, std::uint64_t seed) {
  count = std::min(count, dataset_size);
  std::vector<std::size_t> perm(dataset_size);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng = make_rng(seed, "probe");
  for (std::size_t i = 0; i < count; ++i) {
    std::swap(perm[i], perm[i + uniform_index(rng, dataset_size - i)]);
  }
  perm.resize(count);
  return perm;
}

namespace detail {

template <typename T>
MatrixD pooled_tokens(const LayerActivations<T>& layer, bool include_cls, bool has_cls) {
  const auto per = static_cast<Eigen::Index>(layer.tokens_per_image);
  if (per == 0 || layer.tokens.rows() % per != 0) {
    throw ShapeMismatch("token rows are not a whole number of images");
  }
  if (include_cls || !has_cls) {
    return layer.tokens.template cast<double>();
  }
  const Eigen::Index images = layer.tokens.rows() / per;
  MatrixD out(images * (per - 1), layer.tokens.cols());
  for (Eigen::Index i = 0; i < images; ++i) {
    out.middleRows(i * (per - 1), per - 1) = layer.tokens.middleRows(i * per + 1, per - 1).template cast<double>();
  }
  return out;
}

} // namespace detail

/// Spectral reports for captured activations. Tokens are upcast to double and
/// pooled across images into one H^(l) per layer.
template <typename T>
EEDProfile profile_from_activations(const std::vector<LayerActivations<T>>& layers, bool has_cls,
                                    const ProfileOptions& opts) {
  if (layers.empty()) {
    throw DegenerateInput("no layer activations to profile");
  }
  EEDProfile prof;
  prof.dim = static_cast<std::size_t>(layers.front().tokens.cols());
  prof.centering = opts.centering;
  prof.include_cls = opts.include_cls && has_cls;
  prof.probe_images = static_cast<std::size_t>(layers.front().tokens.rows()) / layers.front().tokens_per_image;
  prof.layers.resize(layers.size());

  std::vector<std::exception_ptr> errors(layers.size());
  auto work = [&](std::size_t k) {
    try {
      const MatrixD h = detail::pooled_tokens(layers[k], opts.include_cls, has_cls);
      const auto cov = covariance(h, opts.centering);
      try {
        prof.layers[k] = spectrum_report(cov, opts.phantom_threshold);
      } catch (const DegenerateSpectrum& e) {
        throw DegenerateSpectrum("layer " + std::to_string(layers[k].layer_index) + ": " + e.what());
      }
      if (k == 0) {
        prof.token_rows = static_cast<std::size_t>(h.rows());
      }
    } catch (...) {
      errors[k] = std::current_exception();
    }
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min(opts.threads, layers.size()));
  if (workers == 1) {
    for (std::size_t k = 0; k < layers.size(); ++k) {
      work(k);
    }
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t k = w; k < layers.size(); k += workers) {
          work(k);
        }
      });
    }
    for (auto& t : pool) {
      t.join();
    }
  }
  for (auto& e : errors) {
    if (e) {
      std::rethrow_exception(e);
    }
  }
  return prof;
}

/// Captured activations of every block for the seeded probe subset.
template <typename T>
std::vector<LayerActivations<T>> capture_probe(const ViTConfig& config, const ParameterSet<T>& params,
                                               const ImageDataset& data, const ProfileOptions& opts) {
  if (data.size() == 0 || opts.probe_images == 0) {
    throw DegenerateInput("profiling needs at least one probe image");
  }
  const auto idx = probe_indices(data.size(), opts.probe_images, opts.seed);
  std::vector<Image> probe;
  probe.reserve(idx.size());
  for (std::size_t i : idx) {
    probe.push_back(data.images[i]);
  }
  std::vector<std::size_t> all(config.num_layers);
  std::iota(all.begin(), all.end(), std::size_t{0});
  return forward_with_capture<T>(probe, config, params, all, opts.capture).layers;
}

/// Live measurement: forward the probe images, capture every block output,
/// and compute per-layer spectra.
template <typename T>
EEDProfile profile(const ViTConfig& config, const ParameterSet<T>& params, const ImageDataset& data,
                   const ProfileOptions& opts) {
  auto layers = capture_probe(config, params, data, opts);
  EEDProfile prof = profile_from_activations(layers, config.include_cls_token, opts);
  prof.config_hash = vit_config_hash(config);
  prof.dataset_tag = data.source;
  return prof;
}

inline EEDProfile profile_from_dump(const ActivationDump& dump, bool has_cls, const ProfileOptions& opts) {
  EEDProfile prof = profile_from_activations(dump.layers, has_cls, opts);
  prof.config_hash = dump.config_hash;
  return prof;
}

/// Interior-only minimum (layers 1..L-2, ties to the smaller index) against
/// the endpoint EED%s.
inline BottleneckSummary bottleneck(std::span<const double> eed_percent) {
  if (eed_percent.size() < 3) {
    throw DegenerateInput("bottleneck needs at least 3 layers");
  }
  BottleneckSummary s;
  s.first_eed_percent = eed_percent.front();
  s.last_eed_percent = eed_percent.back();
  s.argmin_layer = 1;
  s.min_eed_percent = eed_percent[1];
  for (std::size_t l = 2; l + 1 < eed_percent.size(); ++l) {
    if (eed_percent[l] < s.min_eed_percent) {
      s.min_eed_percent = eed_percent[l];
      s.argmin_layer = l;
    }
  }
  s.u_shape_score = std::max(0.0, std::min(s.first_eed_percent, s.last_eed_percent) - s.min_eed_percent);
  return s;
}

inline BottleneckSummary bottleneck(const EEDProfile& prof) {
  const auto e = prof.eed_percents();
  return bottleneck(e);
}

struct NamedProfile {
  std::string name;
  EEDProfile profile;
};

struct ComparisonRow {
  std::string name;
  BottleneckSummary summary;
  bool tied_with_previous = false;
};

struct ComparisonReport {
  std::vector<ComparisonRow> rows; // deepest bottleneck (lowest min EED%) first
  bool has_ties = false;
};

/// Orders datasets by their interior minimum EED%, deepest bottleneck first.
/// Equal minima (within 1e-9) are kept in input order and flagged as ties.
inline ComparisonReport compare_profiles(const std::vector<NamedProfile>& profiles) {
  if (profiles.size() < 2) {
    throw DegenerateInput("comparison needs at least two profiles");
  }
  const std::size_t layers = profiles.front().profile.layers.size();
  for (const auto& p : profiles) {
    if (p.profile.layers.size() != layers) {
      throw LayerCountMismatch("profile '" + p.name + "' has " + std::to_string(p.profile.layers.size()) +
                               " layers but '" + profiles.front().name + "' has " + std::to_string(layers));
    }
  }
  ComparisonReport report;
  for (const auto& p : profiles) {
    report.rows.push_back({p.name, bottleneck(p.profile), false});
  }
  std::stable_sort(report.rows.begin(), report.rows.end(), [](const ComparisonRow& a, const ComparisonRow& b) {
    return a.summary.min_eed_percent < b.summary.min_eed_percent - 1e-9;
  });
  for (std::size_t i = 1; i < report.rows.size(); ++i) {
    if (std::abs(report.rows[i].summary.min_eed_percent - report.rows[i - 1].summary.min_eed_percent) <= 1e-9) {
      report.rows[i].tied_with_previous = true;
      report.has_ties = true;
    }
  }
  return report;
}

} // namespace eedvit
