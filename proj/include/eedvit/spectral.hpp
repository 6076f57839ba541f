#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "eedvit/covariance.hpp"
#include "eedvit/eigensolver.hpp"
#include "eedvit/errors.hpp"

// Scalar rank diagnostics computed from a covariance spectrum. All
// logarithms are natural, so entropies are in nats.

namespace eedvit {

inline constexpr double default_phantom_threshold = 1e-6;

struct SpectrumReport {
  std::vector<double> eigenvalues; // descending
  std::size_t dim = 0;
  double entropy_nats = 0.0;
  double n_eff = 1.0;
  double eed_percent = 0.0;
  std::size_t phantom_count = 0;
  double total_variance = 0.0;
  double mi_proxy_nats = 0.0;
};

/// Both values are reported in arbitrary units: the bound's constant is 1.
struct GeneralizationProxy {
  double mi_proxy_nats = 0.0;
  double bound_value = 0.0;
  std::size_t sample_count = 0;
};

/// p_k = lambda_k / sum_j lambda_j.
inline std::vector<double> normalize_spectrum(std::span<const double> eigenvalues) {
  double total = 0.0;
  for (double lambda : eigenvalues) {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
      throw DegenerateInput("spectrum must be finite and nonnegative");
    }
    total += lambda;
  }
  if (total <= 0.0) {
    throw DegenerateSpectrum("spectrum is identically zero");
  }
  std::vector<double> p;
  p.reserve(eigenvalues.size());
  for (double lambda : eigenvalues) {
    p.push_back(lambda / total);
  }
  return p;
}

/// -sum p ln p with 0 ln 0 = 0.
inline double spectral_entropy(std::span<const double> p) {
  double s = 0.0;
  for (double pk : p) {
    if (pk > 0.0) {
      s -= pk * std::log(pk);
    }
  }
  return std::max(s, 0.0);
}

inline double eed(std::span<const double> p) {
  return std::exp(spectral_entropy(p));
}

inline double eed_percent(double n_eff, std::size_t dim) {
  return 100.0 * n_eff / static_cast<double>(dim);
}

/// Eigenvalues that are nonzero yet below rel_threshold * lambda_1.
inline std::size_t phantom_count(std::span<const double> eigenvalues,
                                 double rel_threshold = default_phantom_threshold) {
  if (eigenvalues.empty()) {
    return 0;
  }
  const double cutoff = rel_threshold * eigenvalues.front();
  std::size_t count = 0;
  for (double lambda : eigenvalues) {
    if (lambda > 0.0 && lambda < cutoff) {
      ++count;
    }
  }
  return count;
}

/// 1/2 log det(I + Sigma) evaluated as 1/2 sum ln(1 + lambda_k).
inline double gaussian_mi_proxy(std::span<const double> eigenvalues) {
  double acc = 0.0;
  for (double lambda : eigenvalues) {
    acc += std::log1p(std::max(lambda, 0.0));
  }
  return 0.5 * acc;
}

inline double gaussian_mi_proxy(const CovarianceMatrix& cov) {
  const auto values = sym_eig(cov);
  return gaussian_mi_proxy(values);
}

inline double generalization_bound(double n_eff, double sample_count) {
  if (n_eff < 1.0 || sample_count < 1.0) {
    throw DegenerateInput("generalization bound needs n_eff >= 1 and M >= 1");
  }
  return std::sqrt(n_eff / sample_count);
}

inline GeneralizationProxy generalization_proxy(const SpectrumReport& report,
                                                std::size_t sample_count) {
  return {report.mi_proxy_nats,
          generalization_bound(report.n_eff, static_cast<double>(sample_count)),
          sample_count};
}

inline SpectrumReport spectrum_report(std::vector<double> eigenvalues,
                                      double phantom_threshold = default_phantom_threshold) {
  SpectrumReport r;
  r.dim = eigenvalues.size();
  const auto p = normalize_spectrum(eigenvalues);
  r.entropy_nats = spectral_entropy(p);
  r.n_eff = std::exp(r.entropy_nats);
  r.eed_percent = eed_percent(r.n_eff, r.dim);
  r.phantom_count = phantom_count(eigenvalues, phantom_threshold);
  for (double lambda : eigenvalues) {
    r.total_variance += lambda;
  }
  r.mi_proxy_nats = gaussian_mi_proxy(eigenvalues);
  r.eigenvalues = std::move(eigenvalues);
  return r;
}

inline SpectrumReport spectrum_report(const CovarianceMatrix& cov,
                                      double phantom_threshold = default_phantom_threshold) {
  return spectrum_report(sym_eig(cov), phantom_threshold);
}

} // namespace eedvit
