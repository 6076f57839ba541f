#pragma once

#include <cstddef>
#include <string>

#include "eedvit/errors.hpp"
#include "eedvit/tensor.hpp"

namespace eedvit {

enum class Centering { centered, uncentered };

inline const char* to_string(Centering c) {
  return c == Centering::centered ? "centered" : "uncentered";
}

inline Centering parse_centering(const std::string& s) {
  if (s == "centered") {
    return Centering::centered;
  }
  if (s == "uncentered") {
    return Centering::uncentered;
  }
  throw ConfigError("unknown covariance variant '" + s +
                    "' (expected centered|uncentered)");
}

/// Second-moment matrix of a token matrix H (rows are samples).
struct CovarianceMatrix {
  std::size_t dim = 0;
  MatrixD entries;
  Centering centering = Centering::centered;
  std::size_t sample_count = 0;

  bool centered() const noexcept { return centering == Centering::centered; }
};

/// (1/N) (H - mean)^T (H - mean), or (1/N) H^T H for the uncentered variant.
/// The result is symmetrized after accumulation so it is exactly symmetric.
template <typename Derived>
CovarianceMatrix covariance(const Eigen::MatrixBase<Derived>& tokens,
                            Centering centering = Centering::centered) {
  const Eigen::Index n = tokens.rows();
  const Eigen::Index d = tokens.cols();
  if (n < 2) {
    throw DegenerateInput("covariance needs at least 2 samples, got " +
                          std::to_string(n));
  }
  if (d < 1) {
    throw DegenerateInput("covariance needs at least 1 feature column");
  }
  MatrixD h = tokens.template cast<double>();
  if (!h.allFinite()) {
    throw DegenerateInput("covariance input contains non-finite values");
  }
  if (centering == Centering::centered) {
    const RowVector<double> mean = h.colwise().mean();
    h.rowwise() -= mean;
  }
  MatrixD gram = MatrixD::Zero(d, d);
  gram.template selfadjointView<Eigen::Lower>().rankUpdate(h.transpose());
  gram = gram.template selfadjointView<Eigen::Lower>();
  gram /= static_cast<double>(n);
  MatrixD sym = 0.5 * (gram + gram.transpose());

  CovarianceMatrix out;
  out.dim = static_cast<std::size_t>(d);
  out.entries = std::move(sym);
  out.centering = centering;
  out.sample_count = static_cast<std::size_t>(n);
  return out;
}

template <typename T>
CovarianceMatrix covariance(const Tensor<T>& tokens,
                            Centering centering = Centering::centered) {
  return covariance(tokens.as_matrix(), centering);
}

} // namespace eedvit
