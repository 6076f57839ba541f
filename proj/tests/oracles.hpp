#pragma once

// Independent reference computations used only by the tests. None of these
// call into the library code paths they are used to check.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Two-pass covariance: column means first, then explicit outer products.
inline Mat two_pass_covariance(const Mat& h, bool centered) {
  const auto n = static_cast<std::size_t>(h.rows());
  const auto d = static_cast<std::size_t>(h.cols());
  std::vector<double> mean(d, 0.0);
  if (centered) {
    for (std::size_t j = 0; j < d; ++j) {
      for (std::size_t i = 0; i < n; ++i) {
        mean[j] += h(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      }
      mean[j] /= static_cast<double>(n);
    }
  }
  Mat out = Mat::Zero(h.cols(), h.cols());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t a = 0; a < d; ++a) {
      for (std::size_t b = 0; b < d; ++b) {
        out(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) +=
            (h(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(a)) - mean[a]) *
            (h(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(b)) - mean[b]);
      }
    }
  }
  return out / static_cast<double>(n);
}

/// Eigenvalues of a symmetric matrix via Householder reduction to tridiagonal
/// form (in long double) and bisection on the characteristic polynomial of
/// the tridiagonal, using the Sturm sequence sign count. Descending.
inline std::vector<double> bisection_eigenvalues(const Mat& input) {
  using LD = long double;
  const int n = static_cast<int>(input.rows());
  std::vector<std::vector<LD>> a(static_cast<std::size_t>(n), std::vector<LD>(static_cast<std::size_t>(n)));
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      a[i][j] = static_cast<LD>(0.5 * (input(i, j) + input(j, i)));
    }
  }
  // Householder tridiagonalization.
  for (int k = 0; k + 2 < n; ++k) {
    LD alpha = 0;
    for (int i = k + 1; i < n; ++i) {
      alpha += a[i][k] * a[i][k];
    }
    alpha = std::sqrt(alpha);
    if (alpha == 0) {
      continue;
    }
    if (a[k + 1][k] > 0) {
      alpha = -alpha;
    }
    std::vector<LD> v(static_cast<std::size_t>(n), 0);
    v[k + 1] = a[k + 1][k] - alpha;
    for (int i = k + 2; i < n; ++i) {
      v[i] = a[i][k];
    }
    LD vnorm2 = 0;
    for (int i = k + 1; i < n; ++i) {
      vnorm2 += v[i] * v[i];
    }
    if (vnorm2 == 0) {
      continue;
    }
    // A <- P A P with P = I - 2 v v^T / (v^T v)
    std::vector<LD> p(static_cast<std::size_t>(n), 0);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        p[i] += a[i][j] * v[j];
      }
      p[i] *= 2 / vnorm2;
    }
    LD vp = 0;
    for (int i = 0; i < n; ++i) {
      vp += v[i] * p[i];
    }
    const LD kcoef = vp / vnorm2;
    std::vector<LD> q(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      q[i] = p[i] - kcoef * v[i];
    }
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        a[i][j] -= v[i] * q[j] + q[i] * v[j];
      }
    }
  }
  std::vector<LD> diag(static_cast<std::size_t>(n)), off(static_cast<std::size_t>(n), 0);
  for (int i = 0; i < n; ++i) {
    diag[i] = a[i][i];
    if (i + 1 < n) {
      off[i + 1] = a[i + 1][i];
    }
  }
  // Number of eigenvalues strictly less than x (Sturm sequence of the
  // characteristic polynomial's leading minors).
  auto count_below = [&](LD x) {
    int count = 0;
    LD q = 1;
    for (int i = 0; i < n; ++i) {
      const LD prev = (i == 0) ? 0 : off[i] * off[i] / q;
      q = diag[i] - x - prev;
      if (q == 0) {
        q = -1e-30L;
      }
      if (q < 0) {
        ++count;
      }
    }
    return count;
  };
  LD lo = 0, hi = 0;
  for (int i = 0; i < n; ++i) {
    const LD r = std::abs(off[i]) + (i + 1 < n ? std::abs(off[i + 1]) : 0);
    lo = std::min(lo, diag[i] - r);
    hi = std::max(hi, diag[i] + r);
  }
  lo -= 1;
  hi += 1;
  std::vector<double> values;
  for (int k = 0; k < n; ++k) {
    // k-th smallest eigenvalue: smallest x with count_below(x) > k.
    LD a0 = lo, b0 = hi;
    for (int it = 0; it < 200; ++it) {
      const LD mid = 0.5L * (a0 + b0);
      if (count_below(mid) > k) {
        b0 = mid;
      } else {
        a0 = mid;
      }
    }
    values.push_back(static_cast<double>(0.5L * (a0 + b0)));
  }
  std::sort(values.begin(), values.end(), std::greater<>());
  return values;
}

/// det of a 3x3 matrix by cofactor expansion.
inline double det3(const Mat& m) {
  return m(0, 0) * (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1)) - m(0, 1) * (m(1, 0) * m(2, 2) - m(1, 2) * m(2, 0)) +
         m(0, 2) * (m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0));
}

/// Product of `reflections` random Householder reflectors: an orthogonal matrix.
inline Mat random_orthogonal(std::size_t d, std::mt19937_64& rng, int reflections = 4) {
  std::normal_distribution<double> normal;
  Mat q = Mat::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  for (int r = 0; r < reflections; ++r) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(d));
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      v(i) = normal(rng);
    }
    v.normalize();
    Mat h = Mat::Identity(v.size(), v.size()) - 2.0 * v * v.transpose();
    q = q * h;
  }
  return q;
}

inline Mat random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = normal(rng);
  }
  return m;
}

inline Mat random_symmetric(Eigen::Index d, std::mt19937_64& rng) {
  Mat a = random_matrix(d, d, rng);
  return 0.5 * (a + a.transpose());
}

/// Central finite-difference gradient of a scalar function of a matrix.
template <typename T, typename F>
Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>
finite_difference(const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& x, F&& f, T eps) {
  Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> g(x.rows(), x.cols());
  auto xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const T orig = xp.data()[i];
    xp.data()[i] = orig + eps;
    const T fp = f(xp);
    xp.data()[i] = orig - eps;
    const T fm = f(xp);
    xp.data()[i] = orig;
    g.data()[i] = (fp - fm) / (2 * eps);
  }
  return g;
}

/// Max-norm relative error with an absolute floor.
template <typename A, typename B> double relative_error(const A& analytic, const B& numeric, double floor = 1e-8) {
  const double diff = (analytic - numeric).cwiseAbs().maxCoeff();
  const double scale = std::max({analytic.cwiseAbs().maxCoeff(), numeric.cwiseAbs().maxCoeff(), floor});
  return diff / scale;
}

} // namespace oracle
