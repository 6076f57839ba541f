#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include "eedvit/errors.hpp"
#include "eedvit/tensor.hpp"

// Minimal reverse-mode differentiation over 2-D matrices.
//
// A Tape is an append-only list of nodes; creation order is a valid
// topological order, so backward() simply walks the list in reverse. A tape
// built with recording disabled keeps values only and can be used for
// inference (teacher network, profiling) at no bookkeeping cost.

namespace eedvit {

struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

/// Per-parameter gradient buffers, aligned with a ParameterSet.
template <typename T> using Gradients = std::vector<Matrix<T>>;

template <typename T> class Tape {
public:
  using Mat = Matrix<T>;
  using BackwardFn = std::function<void(Tape&, const Mat& grad_out)>;

  explicit Tape(bool recording = true) : recording_(recording) {}

  bool recording() const noexcept { return recording_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  const Mat& value(Var v) const { return nodes_.at(v.id).value; }

  /// Parameter indices that appear as leaves on this tape.
  std::vector<int> parameter_leaves() const {
    std::vector<int> out;
    for (const auto& n : nodes_) {
      if (n.param_index >= 0) {
        out.push_back(n.param_index);
      }
    }
    return out;
  }

  Var constant(Mat value) { return push(std::move(value), nullptr); }

  Var parameter(const Mat& value, int index) {
    Var v = push(value, nullptr);
    if (recording_) {
      nodes_[v.id].param_index = index;
    }
    return v;
  }

  Var push(Mat value, BackwardFn fn) {
    Node n;
    n.value = std::move(value);
    if (recording_) {
      n.backward = std::move(fn);
    }
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  /// Add `g` to the gradient of `v`.
  template <typename Expr> void accumulate(Var v, const Expr& g) {
    Node& n = nodes_[v.id];
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  /// Propagates d(loss)/d(node) for every node and adds parameter gradients
  /// into `grads` (indexed like the ParameterSet the leaves came from).
  void backward(Var loss, Gradients<T>& grads) {
    if (!recording_) {
      throw GraphNotRecorded("backward called on a tape that does not record");
    }
    if (loss.id >= nodes_.size()) {
      throw GraphNotRecorded("loss variable is not on this tape");
    }
    if (nodes_[loss.id].value.size() != 1) {
      throw ShapeMismatch("backward needs a scalar (1x1) loss");
    }
    for (auto& n : nodes_) {
      n.grad.resize(0, 0);
    }
    nodes_[loss.id].grad = Mat::Ones(1, 1);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.size() == 0) {
        continue;
      }
      if (n.param_index >= 0) {
        auto& dst = grads.at(static_cast<std::size_t>(n.param_index));
        if (dst.size() == 0) {
          dst = Mat::Zero(n.value.rows(), n.value.cols());
        }
        dst += n.grad;
      }
      if (n.backward) {
        // Move out so the callback may safely grow nodes_ storage of inputs.
        Mat g = std::move(n.grad);
        n.backward(*this, g);
      }
    }
  }

  /// Gradient of the last backward() pass at `v` (empty if unreached).
  const Mat& grad(Var v) const { return nodes_.at(v.id).grad; }

private:
  struct Node {
    Mat value;
    Mat grad;
    BackwardFn backward;
    int param_index = -1;
  };

  bool recording_;
  std::vector<Node> nodes_;
};

namespace ops {

template <typename T> void require_same_shape(const Matrix<T>& a, const Matrix<T>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeMismatch(std::string(op) + ": operand shapes differ (" +
                        std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " vs " +
                        std::to_string(b.rows()) + "x" + std::to_string(b.cols()) + ")");
  }
}

template <typename T> Var matmul(Tape<T>& t, Var a, Var b) {
  const auto& av = t.value(a);
  const auto& bv = t.value(b);
  if (av.cols() != bv.rows()) {
    throw ShapeMismatch("matmul: inner dimensions differ");
  }
  Matrix<T> out = av * bv;
  return t.push(std::move(out), [a, b](Tape<T>& tp, const Matrix<T>& g) {
    tp.accumulate(a, g * tp.value(b).transpose());
    tp.accumulate(b, tp.value(a).transpose() * g);
  });
}

template <typename T> Var add(Tape<T>& t, Var a, Var b) {
  require_same_shape(t.value(a), t.value(b), "add");
  Matrix<T> out = t.value(a) + t.value(b);
  return t.push(std::move(out), [a, b](Tape<T>& tp, const Matrix<T>& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, g);
  });
}

/// a (N x C) + row (1 x C) broadcast over rows.
template <typename T> Var add_row(Tape<T>& t, Var a, Var row) {
  const auto& av = t.value(a);
  const auto& rv = t.value(row);
  if (rv.rows() != 1 || rv.cols() != av.cols()) {
    throw ShapeMismatch("add_row: broadcast row has the wrong shape");
  }
  Matrix<T> out = av.rowwise() + rv.row(0);
  return t.push(std::move(out), [a, row](Tape<T>& tp, const Matrix<T>& g) {
    tp.accumulate(a, g);
    tp.accumulate(row, g.colwise().sum());
  });
}

template <typename T> Var scale(Tape<T>& t, Var a, T factor) {
  Matrix<T> out = t.value(a) * factor;
  return t.push(std::move(out), [a, factor](Tape<T>& tp, const Matrix<T>& g) {
    tp.accumulate(a, g * factor);
  });
}

template <typename T> Var linear(Tape<T>& t, Var x, Var weight, Var bias) {
  return add_row(t, matmul(t, x, weight), bias);
}

/// Exact GELU: x * Phi(x).
template <typename T> Var gelu(Tape<T>& t, Var a) {
  const auto& av = t.value(a);
  Matrix<T> out(av.rows(), av.cols());
  const T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  for (Eigen::Index i = 0; i < av.size(); ++i) {
    const T x = av.data()[i];
    out.data()[i] = T(0.5) * x * (T(1) + std::erf(x * inv_sqrt2));
  }
  return t.push(std::move(out), [a, inv_sqrt2](Tape<T>& tp, const Matrix<T>& g) {
    const auto& x = tp.value(a);
    const T inv_sqrt_2pi = std::numbers::inv_sqrtpi_v<T> * inv_sqrt2;
    Matrix<T> dx(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const T v = x.data()[i];
      const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
      const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
      dx.data()[i] = g.data()[i] * (cdf + v * pdf);
    }
    tp.accumulate(a, dx);
  });
}

/// Row-wise LayerNorm with affine gamma/beta (both 1 x C).
template <typename T>
Var layer_norm(Tape<T>& t, Var x, Var gamma, Var beta, T eps = T(1e-6)) {
  const auto& xv = t.value(x);
  const auto& gv = t.value(gamma);
  const auto& bv = t.value(beta);
  if (gv.cols() != xv.cols() || bv.cols() != xv.cols()) {
    throw ShapeMismatch("layer_norm: affine parameters do not match width");
  }
  const Eigen::Index rows = xv.rows();
  const Eigen::Index cols = xv.cols();
  auto xhat = std::make_shared<Matrix<T>>(rows, cols);
  auto inv_std = std::make_shared<std::vector<T>>(static_cast<std::size_t>(rows));
  for (Eigen::Index r = 0; r < rows; ++r) {
    const T mean = xv.row(r).mean();
    const T var = (xv.row(r).array() - mean).square().mean();
    const T is = T(1) / std::sqrt(var + eps);
    (*inv_std)[static_cast<std::size_t>(r)] = is;
    xhat->row(r) = (xv.row(r).array() - mean) * is;
  }
  Matrix<T> out = (xhat->array().rowwise() * gv.row(0).array()).rowwise() + bv.row(0).array();
  const bool keep = t.recording();
  if (!keep) {
    xhat.reset();
    inv_std.reset();
  }
  return t.push(std::move(out), [x, gamma, beta, xhat, inv_std](Tape<T>& tp, const Matrix<T>& g) {
    const auto& gv2 = tp.value(gamma);
    const Eigen::Index n = g.cols();
    Matrix<T> dxhat = g.array().rowwise() * gv2.row(0).array();
    Matrix<T> dx(g.rows(), n);
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      const T mean_d = dxhat.row(r).mean();
      const T mean_dx = (dxhat.row(r).array() * xhat->row(r).array()).mean();
      dx.row(r) = (*inv_std)[static_cast<std::size_t>(r)] *
                  (dxhat.row(r).array() - mean_d - xhat->row(r).array() * mean_dx);
    }
    tp.accumulate(x, dx);
    tp.accumulate(gamma, (g.array() * xhat->array()).colwise().sum().matrix());
    tp.accumulate(beta, g.colwise().sum());
  });
}

template <typename T> Matrix<T> softmax_rows_value(const Matrix<T>& a) {
  Matrix<T> out(a.rows(), a.cols());
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    const T m = a.row(r).maxCoeff();
    out.row(r) = (a.row(r).array() - m).exp();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

template <typename T> Matrix<T> log_softmax_rows_value(const Matrix<T>& a) {
  Matrix<T> out(a.rows(), a.cols());
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    const T m = a.row(r).maxCoeff();
    const T lse = m + std::log((a.row(r).array() - m).exp().sum());
    out.row(r) = a.row(r).array() - lse;
  }
  return out;
}

template <typename T> Var softmax_rows(Tape<T>& t, Var a) {
  Matrix<T> out = softmax_rows_value(t.value(a));
  const std::size_t self = t.size();
  return t.push(std::move(out), [a, self](Tape<T>& tp, const Matrix<T>& g) {
    const auto& s = tp.value(Var{self});
    Matrix<T> dot = (g.array() * s.array()).rowwise().sum();
    Matrix<T> dx = s.array() * (g.array().colwise() - dot.col(0).array());
    tp.accumulate(a, dx);
  });
}

template <typename T> Var log_softmax_rows(Tape<T>& t, Var a) {
  Matrix<T> out = log_softmax_rows_value(t.value(a));
  const std::size_t self = t.size();
  return t.push(std::move(out), [a, self](Tape<T>& tp, const Matrix<T>& g) {
    Matrix<T> s = tp.value(Var{self}).array().exp();
    Matrix<T> gsum = g.rowwise().sum();
    Matrix<T> dx = g.array() - s.array().colwise() * gsum.col(0).array();
    tp.accumulate(a, dx);
  });
}

/// sum(a .* weights) for a constant weight matrix; returns 1 x 1.
template <typename T> Var weighted_sum(Tape<T>& t, Var a, Matrix<T> weights) {
  require_same_shape(t.value(a), weights, "weighted_sum");
  Matrix<T> out(1, 1);
  out(0, 0) = (t.value(a).array() * weights.array()).sum();
  auto w = std::make_shared<Matrix<T>>(std::move(weights));
  return t.push(std::move(out), [a, w](Tape<T>& tp, const Matrix<T>& g) {
    tp.accumulate(a, *w * g(0, 0));
  });
}

template <typename T> Var sum(Tape<T>& t, Var a) {
  const auto& av = t.value(a);
  Matrix<T> out(1, 1);
  out(0, 0) = av.sum();
  const Eigen::Index rows = av.rows();
  const Eigen::Index cols = av.cols();
  return t.push(std::move(out), [a, rows, cols](Tape<T>& tp, const Matrix<T>& g) {
    tp.accumulate(a, Matrix<T>::Constant(rows, cols, g(0, 0)));
  });
}

/// Rows [start, start + count) of a.
template <typename T> Var slice_rows(Tape<T>& t, Var a, Eigen::Index start, Eigen::Index count) {
  const auto& av = t.value(a);
  if (start < 0 || count < 0 || start + count > av.rows()) {
    throw ShapeMismatch("slice_rows: range outside the matrix");
  }
  Matrix<T> out = av.middleRows(start, count);
  const Eigen::Index rows = av.rows();
  return t.push(std::move(out), [a, start, count, rows](Tape<T>& tp, const Matrix<T>& g) {
    Matrix<T> dx = Matrix<T>::Zero(rows, g.cols());
    dx.middleRows(start, count) = g;
    tp.accumulate(a, dx);
  });
}

/// Stack a on top of b.
template <typename T> Var concat_rows(Tape<T>& t, Var a, Var b) {
  const auto& av = t.value(a);
  const auto& bv = t.value(b);
  if (av.cols() != bv.cols()) {
    throw ShapeMismatch("concat_rows: column counts differ");
  }
  Matrix<T> out(av.rows() + bv.rows(), av.cols());
  out.topRows(av.rows()) = av;
  out.bottomRows(bv.rows()) = bv;
  const Eigen::Index ra = av.rows();
  const Eigen::Index rb = bv.rows();
  return t.push(std::move(out), [a, b, ra, rb](Tape<T>& tp, const Matrix<T>& g) {
    tp.accumulate(a, g.topRows(ra));
    tp.accumulate(b, g.bottomRows(rb));
  });
}

template <typename T> Var mean_rows(Tape<T>& t, Var a) {
  const auto& av = t.value(a);
  Matrix<T> out = av.colwise().mean();
  const Eigen::Index rows = av.rows();
  return t.push(std::move(out), [a, rows](Tape<T>& tp, const Matrix<T>& g) {
    Matrix<T> dx = g.replicate(rows, 1) / static_cast<T>(rows);
    tp.accumulate(a, dx);
  });
}

/// x / max(||x||, eps) per row.
template <typename T> Var l2_normalize_rows(Tape<T>& t, Var a, T eps = T(1e-12)) {
  const auto& av = t.value(a);
  Matrix<T> out(av.rows(), av.cols());
  auto norms = std::make_shared<std::vector<T>>(static_cast<std::size_t>(av.rows()));
  for (Eigen::Index r = 0; r < av.rows(); ++r) {
    const T n = std::max(av.row(r).norm(), eps);
    (*norms)[static_cast<std::size_t>(r)] = n;
    out.row(r) = av.row(r) / n;
  }
  const std::size_t self = t.size();
  return t.push(std::move(out), [a, norms, self, eps](Tape<T>& tp, const Matrix<T>& g) {
    const auto& y = tp.value(Var{self});
    Matrix<T> dx(g.rows(), g.cols());
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      const T n = (*norms)[static_cast<std::size_t>(r)];
      if (n <= eps) {
        dx.row(r) = g.row(r) / n;
      } else {
        const T proj = g.row(r).dot(y.row(r));
        dx.row(r) = (g.row(r) - proj * y.row(r)) / n;
      }
    }
    tp.accumulate(a, dx);
  });
}

/// x / max(||x||, eps) per column (weight normalization of a linear layer
/// whose output units are columns).
template <typename T> Var l2_normalize_cols(Tape<T>& t, Var a, T eps = T(1e-12)) {
  const auto& av = t.value(a);
  Matrix<T> out(av.rows(), av.cols());
  auto norms = std::make_shared<std::vector<T>>(static_cast<std::size_t>(av.cols()));
  for (Eigen::Index c = 0; c < av.cols(); ++c) {
    const T n = std::max(av.col(c).norm(), eps);
    (*norms)[static_cast<std::size_t>(c)] = n;
    out.col(c) = av.col(c) / n;
  }
  const std::size_t self = t.size();
  return t.push(std::move(out), [a, norms, self, eps](Tape<T>& tp, const Matrix<T>& g) {
    const auto& y = tp.value(Var{self});
    Matrix<T> dx(g.rows(), g.cols());
    for (Eigen::Index c = 0; c < g.cols(); ++c) {
      const T n = (*norms)[static_cast<std::size_t>(c)];
      if (n <= eps) {
        dx.col(c) = g.col(c) / n;
      } else {
        const T proj = g.col(c).dot(y.col(c));
        dx.col(c) = (g.col(c) - proj * y.col(c)) / n;
      }
    }
    tp.accumulate(a, dx);
  });
}

/// Per-head attention probabilities softmax(Q_h K_h^T / sqrt(d_h)) for a fused
/// N x 3D qkv matrix laid out as [Q | K | V].
template <typename T>
std::vector<Matrix<T>> attention_probabilities(const Matrix<T>& qkv, int heads) {
  const Eigen::Index d = qkv.cols() / 3;
  const Eigen::Index dh = d / heads;
  const T inv_scale = T(1) / std::sqrt(static_cast<T>(dh));
  std::vector<Matrix<T>> probs;
  probs.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    const auto q = qkv.middleCols(h * dh, dh);
    const auto k = qkv.middleCols(d + h * dh, dh);
    Matrix<T> scores = (q * k.transpose()) * inv_scale;
    probs.push_back(softmax_rows_value(scores));
  }
  return probs;
}

/// Multi-head self-attention core: concat_h softmax(Q_h K_h^T/sqrt(d_h)) V_h.
template <typename T> Var attention(Tape<T>& t, Var qkv, int heads) {
  const auto& x = t.value(qkv);
  if (heads <= 0 || x.cols() % (3 * heads) != 0) {
    throw ShapeMismatch("attention: qkv width must be 3 * heads * head_dim");
  }
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols() / 3;
  const Eigen::Index dh = d / heads;
  auto probs = std::make_shared<std::vector<Matrix<T>>>(attention_probabilities(x, heads));
  Matrix<T> out(n, d);
  for (int h = 0; h < heads; ++h) {
    out.middleCols(h * dh, dh).noalias() = (*probs)[static_cast<std::size_t>(h)] *
                                           x.middleCols(2 * d + h * dh, dh);
  }
  if (!t.recording()) {
    probs.reset();
  }
  return t.push(std::move(out), [qkv, heads, probs, n, d, dh](Tape<T>& tp, const Matrix<T>& g) {
    const auto& xv = tp.value(qkv);
    const T inv_scale = T(1) / std::sqrt(static_cast<T>(dh));
    Matrix<T> dx(n, 3 * d);
    for (int h = 0; h < heads; ++h) {
      const auto& p = (*probs)[static_cast<std::size_t>(h)];
      const auto q = xv.middleCols(h * dh, dh);
      const auto k = xv.middleCols(d + h * dh, dh);
      const auto v = xv.middleCols(2 * d + h * dh, dh);
      const auto gh = g.middleCols(h * dh, dh);
      Matrix<T> dp = gh * v.transpose();
      Matrix<T> rowdot = (dp.array() * p.array()).rowwise().sum();
      Matrix<T> ds = p.array() * (dp.array().colwise() - rowdot.col(0).array());
      ds *= inv_scale;
      dx.middleCols(h * dh, dh).noalias() = ds * k;
      dx.middleCols(d + h * dh, dh).noalias() = ds.transpose() * q;
      dx.middleCols(2 * d + h * dh, dh).noalias() = p.transpose() * gh;
    }
    tp.accumulate(qkv, dx);
  });
}

} // namespace ops
} // namespace eedvit
