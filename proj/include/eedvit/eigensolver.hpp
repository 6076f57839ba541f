#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "eedvit/covariance.hpp"
#include "eedvit/errors.hpp"
#include "eedvit/tensor.hpp"

namespace eedvit {

struct EigenDecomposition {
  std::vector<double> values; // descending
  MatrixD vectors;            // column k pairs with values[k]; empty if not requested
};

struct JacobiOptions {
  int max_sweeps = 64;
  /// Negative eigenvalues with |lambda| <= clamp_rel * max|lambda| become 0.
  double clamp_rel = 1e-8;
  bool want_vectors = false;
};

namespace detail {

inline double off_diagonal_norm2(const MatrixD& a) {
  double off = 0.0;
  const Eigen::Index n = a.rows();
  for (Eigen::Index p = 0; p < n; ++p) {
    for (Eigen::Index q = p + 1; q < n; ++q) {
      off += a(p, q) * a(p, q);
    }
  }
  return 2.0 * off;
}

} // namespace detail

/// Cyclic Jacobi eigensolver for a dense symmetric matrix.
///
/// Each sweep visits every (p, q) pair once and applies the rotation that
/// annihilates a(p, q). Convergence is declared when the off-diagonal
/// Frobenius mass drops below 1e-30 of the total; exceeding the sweep budget
/// raises ConvergenceFailure.
inline EigenDecomposition jacobi_eigen(const MatrixD& input,
                                       const JacobiOptions& opts = {}) {
  if (input.rows() != input.cols()) {
    throw ShapeMismatch("eigensolver needs a square matrix");
  }
  if (!input.allFinite()) {
    throw DegenerateInput("eigensolver input contains non-finite values");
  }
  const Eigen::Index n = input.rows();
  MatrixD a = 0.5 * (input + input.transpose());
  MatrixD v;
  if (opts.want_vectors) {
    v = MatrixD::Identity(n, n);
  }

  const double total = a.squaredNorm();
  bool converged = total == 0.0 || n < 2;
  for (int sweep = 0; sweep < opts.max_sweeps && !converged; ++sweep) {
    if (detail::off_diagonal_norm2(a) <= 1e-30 * total) {
      converged = true;
      break;
    }
    for (Eigen::Index p = 0; p < n - 1; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) {
          continue;
        }
        const double app = a(p, p);
        const double aqq = a(q, q);
        // Rotation is numerically a no-op once a(p,q) is below the diagonal's ulp.
        if (sweep > 3 && std::abs(apq) < 1e-18 * (std::abs(app) + std::abs(aqq))) {
          a(p, q) = 0.0;
          a(q, p) = 0.0;
          continue;
        }
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;

        for (Eigen::Index k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        a(p, q) = 0.0;
        a(q, p) = 0.0;
        if (opts.want_vectors) {
          for (Eigen::Index k = 0; k < n; ++k) {
            const double vkp = v(k, p);
            const double vkq = v(k, q);
            v(k, p) = c * vkp - s * vkq;
            v(k, q) = s * vkp + c * vkq;
          }
        }
      }
    }
  }
  if (!converged && detail::off_diagonal_norm2(a) > 1e-30 * total) {
    throw ConvergenceFailure("Jacobi eigensolver exceeded " +
                             std::to_string(opts.max_sweeps) + " sweeps");
  }

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index i, Eigen::Index j) {
    return a(i, i) > a(j, j);
  });

  EigenDecomposition out;
  out.values.reserve(order.size());
  double scale = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    scale = std::max(scale, std::abs(a(i, i)));
  }
  for (Eigen::Index i : order) {
    double lambda = a(i, i);
    if (lambda < 0.0 && -lambda <= opts.clamp_rel * scale) {
      lambda = 0.0;
    }
    out.values.push_back(lambda);
  }
  if (opts.want_vectors) {
    out.vectors.resize(n, n);
    for (Eigen::Index k = 0; k < n; ++k) {
      out.vectors.col(k) = v.col(order[static_cast<std::size_t>(k)]);
    }
  }
  return out;
}

/// Eigenvalues of a symmetric matrix, descending.
inline std::vector<double> sym_eig(const MatrixD& sym) {
  return jacobi_eigen(sym).values;
}

inline std::vector<double> sym_eig(const CovarianceMatrix& cov) {
  return jacobi_eigen(cov.entries).values;
}

} // namespace eedvit
