#pragma once

// Reverse-mode automatic differentiation over dense double matrices.
//
// A Tape records every operation in creation order; since an operation can
// only consume values that already exist, creation order is a topological
// order and backward() simply walks the tape in reverse.

#include <Eigen/Dense>

#include <cassert>
#include <cmath>
#include <functional>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace eventbind::ad {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

/// A trainable tensor: value plus accumulated gradient.
struct Param {
  Mat value;
  Mat grad;
  bool trainable = true;

  Param() = default;
  explicit Param(Mat v) : value(std::move(v)), grad(Mat::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class Tape;

/// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  [[nodiscard]] const Mat& value() const;
  [[nodiscard]] Eigen::Index rows() const { return value().rows(); }
  [[nodiscard]] Eigen::Index cols() const { return value().cols(); }
  [[nodiscard]] double scalar() const { return value()(0, 0); }
};

class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) { nodes_.reserve(1024); }

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  [[nodiscard]] bool grad_enabled() const { return grad_enabled_; }
  [[nodiscard]] std::size_t size() const { return nodes_.size(); }

  /// Non-differentiable input.
  Var constant(Mat value) { return push(std::move(value), false); }

  /// Differentiable input whose gradient is read back through grad().
  Var input(Mat value) { return push(std::move(value), grad_enabled_); }

  /// Binds a parameter; backward() accumulates into param.grad.
  Var param(Param& p) {
    const bool track = grad_enabled_ && p.trainable;
    Var v = push_ref(&p.value, track);
    if (track) {
      Param* target = &p;
      nodes_[v.id].backward = [target, id = v.id](Tape& t) {
        if (target->grad.size() != target->value.size()) target->zero_grad();
        target->grad += t.nodes_[id].grad;
      };
    }
    return v;
  }

  [[nodiscard]] const Mat& value(Var v) const {
    const Node& n = nodes_[v.id];
    return n.ref ? *n.ref : n.value;
  }

  [[nodiscard]] const Mat& grad(Var v) const { return nodes_[v.id].grad; }
  [[nodiscard]] bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  /// Seeds d(root)/d(root) = 1 and propagates to every recorded node.
  void backward(Var root) {
    if (!grad_enabled_) throw std::logic_error("backward() on a tape without gradients");
    if (value(root).size() != 1) throw std::invalid_argument("backward() root must be a scalar");
    for (auto& n : nodes_) {
      if (n.requires_grad) {
        const Mat& v = n.ref ? *n.ref : n.value;
        n.grad.setZero(v.rows(), v.cols());
      }
    }
    nodes_[root.id].grad.setOnes(1, 1);
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
      if (nodes_[i].requires_grad && nodes_[i].backward) nodes_[i].backward(*this);
    }
  }

  // Used by op implementations.
  Var push(Mat value, bool requires_grad) {
    nodes_.push_back(Node{std::move(value), nullptr, {}, requires_grad && grad_enabled_, {}});
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  Var push_ref(const Mat* ref, bool requires_grad) {
    nodes_.push_back(Node{Mat{}, ref, {}, requires_grad && grad_enabled_, {}});
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  void set_backward(Var v, std::function<void(Tape&)> fn) { nodes_[v.id].backward = std::move(fn); }

  Mat& grad_mut(Var v) { return nodes_[v.id].grad; }

  /// Adds g into the gradient of v if v participates in differentiation.
  template <typename Derived>
  void accumulate(Var v, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[v.id];
    if (n.requires_grad) n.grad += g;
  }

 private:
  struct Node {
    Mat value;
    const Mat* ref;
    Mat grad;
    bool requires_grad;
    std::function<void(Tape&)> backward;
  };

  bool grad_enabled_;
  std::vector<Node> nodes_;
};

inline const Mat& Var::value() const { return tape->value(*this); }

namespace detail {

inline bool any_grad(std::initializer_list<Var> vs) {
  for (const Var& v : vs) {
    if (v.tape->requires_grad(v)) return true;
  }
  return false;
}

inline void check_same_tape(const Var& a, const Var& b) {
  if (a.tape != b.tape) throw std::invalid_argument("operands live on different tapes");
}

inline void check_shape(bool ok, const char* op) {
  if (!ok) throw std::invalid_argument(std::string("shape mismatch in ") + op);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and linear algebra

inline Var add(Var a, Var b) {
  detail::check_same_tape(a, b);
  detail::check_shape(a.rows() == b.rows() && a.cols() == b.cols(), "add");
  Tape& t = *a.tape;
  Var out = t.push(a.value() + b.value(), detail::any_grad({a, b}));
  if (t.requires_grad(out)) {
    t.set_backward(out, [a, b, out](Tape& tp) {
      const Mat& g = tp.grad(out);
      tp.accumulate(a, g);
      tp.accumulate(b, g);
    });
  }
  return out;
}

inline Var sub(Var a, Var b) {
  detail::check_same_tape(a, b);
  detail::check_shape(a.rows() == b.rows() && a.cols() == b.cols(), "sub");
  Tape& t = *a.tape;
  Var out = t.push(a.value() - b.value(), detail::any_grad({a, b}));
  if (t.requires_grad(out)) {
    t.set_backward(out, [a, b, out](Tape& tp) {
      const Mat& g = tp.grad(out);
      tp.accumulate(a, g);
      tp.accumulate(b, -g);
    });
  }
  return out;
}

/// Hadamard product.
inline Var mul(Var a, Var b) {
  detail::check_same_tape(a, b);
  detail::check_shape(a.rows() == b.rows() && a.cols() == b.cols(), "mul");
  Tape& t = *a.tape;
  Var out = t.push(a.value().cwiseProduct(b.value()), detail::any_grad({a, b}));
  if (t.requires_grad(out)) {
    t.set_backward(out, [a, b, out](Tape& tp) {
      const Mat& g = tp.grad(out);
      tp.accumulate(a, g.cwiseProduct(tp.value(b)));
      tp.accumulate(b, g.cwiseProduct(tp.value(a)));
    });
  }
  return out;
}

inline Var scale(Var a, double c) {
  Tape& t = *a.tape;
  Var out = t.push(a.value() * c, detail::any_grad({a}));
  if (t.requires_grad(out)) {
    t.set_backward(out, [a, c, out](Tape& tp) { tp.accumulate(a, tp.grad(out) * c); });
  }
  return out;
}

/// a * s where s is a 1x1 node.
inline Var scale_by(Var a, Var s) {
  detail::check_same_tape(a, s);
  detail::check_shape(s.rows() == 1 && s.cols() == 1, "scale_by");
  Tape& t = *a.tape;
  Var out = t.push(a.value() * s.scalar(), detail::any_grad({a, s}));
  if (t.requires_grad(out)) {
    t.set_backward(out, [a, s, out](Tape& tp) {
      const Mat& g = tp.grad(out);
      tp.accumulate(a, g * tp.value(s)(0, 0));
      if (tp.requires_grad(s)) tp.grad_mut(s)(0, 0) += g.cwiseProduct(tp.value(a)).sum();
    });
  }
  return out;
}

inline Var matmul(Var a, Var b) {
  detail::check_same_tape(a, b);
  detail::check_shape(a.cols() == b.rows(), "matmul");
  Tape& t = *a.tape;
  Var out = t.push(a.value() * b.value(), detail::any_grad({a, b}));
  if (t.requires_grad(out)) {
    t.set_backward(out, [a, b, out](Tape& tp) {
      const Mat& g = tp.grad(out);
      if (tp.requires_grad(a)) tp.grad_mut(a).noalias() += g * tp.value(b).transpose();
      if (tp.requires_grad(b)) tp.grad_mut(b).noalias() += tp.value(a).transpose() * g;
    });
  }
  return out;
}

/// a * b^T
inline Var matmul_nt(Var a, Var b) {
  detail::check_same_tape(a, b);
  detail::check_shape(a.cols() == b.cols(), "matmul_nt");
  Tape& t = *a.tape;
  Var out = t.push(a.value() * b.value().transpose(), detail::any_grad({a, b}));
  if (t.requires_grad(out)) {
    t.set_backward(out, [a, b, out](Tape& tp) {
      const Mat& g = tp.grad(out);
      if (tp.requires_grad(a)) tp.grad_mut(a).noalias() += g * tp.value(b);
      if (tp.requires_grad(b)) tp.grad_mut(b).noalias() += g.transpose() * tp.value(a);
    });
  }
  return out;
}

inline Var transpose(Var a) {
  Tape& t = *a.tape;
  Var out = t.push(a.value().transpose(), detail::any_grad({a}));
  if (t.requires_grad(out)) {
    t.set_backward(out, [a, out](Tape& tp) { tp.accumulate(a, tp.grad(out).transpose()); });
  }
  return out;
}

/// Adds a 1 x C row vector to every row of an R x C matrix.
inline Var add_row(Var a, Var row) {
  detail::check_same_tape(a, row);
  detail::check_shape(row.rows() == 1 && row.cols() == a.cols(), "add_row");
  Tape& t = *a.tape;
  Mat v = a.value();
  v.rowwise() += row.value().row(0);
  Var out = t.push(std::move(v), detail::any_grad({a, row}));
  if (t.requires_grad(out)) {
    t.set_backward(out, [a, row, out](Tape& tp) {
      const Mat& g = tp.grad(out);
      tp.accumulate(a, g);
      tp.accumulate(row, g.colwise().sum());
    });
  }
  return out;
}

/// x W + b, with W: in x out and b: 1 x out.
inline Var affine(Var x, Var w, Var b) { return add_row(matmul(x, w), b); }

// ---------------------------------------------------------------------------
// Nonlinearities

/// x * sigmoid(1.702 x)
inline Var quick_gelu(Var x) {
  Tape& t = *x.tape;
  const Mat& xv = x.value();
  Mat sig = (1.0 + (-1.702 * xv.array()).exp()).inverse().matrix();
  Var out = t.push(xv.cwiseProduct(sig), detail::any_grad({x}));
  if (t.requires_grad(out)) {
    t.set_backward(out, [x, out, sig = std::move(sig)](Tape& tp) {
      const auto xa = tp.value(x).array();
      const auto s = sig.array();
      Mat d = (s + 1.702 * xa * s * (1.0 - s)).matrix();
      tp.accumulate(x, tp.grad(out).cwiseProduct(d));
    });
  }
  return out;
}

inline Var exp(Var x) {
  Tape& t = *x.tape;
  Mat e = x.value().array().exp().matrix();
  Var out = t.push(e, detail::any_grad({x}));
  if (t.requires_grad(out)) {
    t.set_backward(out, [x, out](Tape& tp) { tp.accumulate(x, tp.grad(out).cwiseProduct(tp.value(out))); });
  }
  return out;
}

/// Elementwise 1/x.
inline Var reciprocal(Var x) {
  Tape& t = *x.tape;
  Var out = t.push(x.value().cwiseInverse(), detail::any_grad({x}));
  if (t.requires_grad(out)) {
    t.set_backward(out, [x, out](Tape& tp) {
      const Mat& y = tp.value(out);
      tp.accumulate(x, -tp.grad(out).cwiseProduct(y.cwiseProduct(y)));
    });
  }
  return out;
}

/// Elementwise clamp; gradient passes only where the input is strictly inside.
inline Var clamp(Var x, double lo, double hi) {
  Tape& t = *x.tape;
  Var out = t.push(x.value().cwiseMax(lo).cwiseMin(hi), detail::any_grad({x}));
  if (t.requires_grad(out)) {
    t.set_backward(out, [x, lo, hi, out](Tape& tp) {
      const Mat& xv = tp.value(x);
      Mat mask = ((xv.array() > lo) && (xv.array() < hi)).cast<double>().matrix();
      tp.accumulate(x, tp.grad(out).cwiseProduct(mask));
    });
  }
  return out;
}

/// Row-wise layer normalization with affine gamma/beta (1 x C each).
inline Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5) {
  detail::check_shape(gamma.cols() == x.cols() && beta.cols() == x.cols(), "layer_norm");
  Tape& t = *x.tape;
  const Mat& xv = x.value();
  const auto n = static_cast<double>(xv.cols());
  Vec mean = xv.rowwise().mean();
  Mat xc = xv.colwise() - mean;
  Vec inv_std = ((xc.array().square().rowwise().sum() / n) + eps).rsqrt().matrix();
  Mat xhat = xc.array().colwise() * inv_std.array();
  Mat y = (xhat.array().rowwise() * gamma.value().row(0).array()).matrix();
  y.rowwise() += beta.value().row(0);
  Var out = t.push(std::move(y), detail::any_grad({x, gamma, beta}));
  if (t.requires_grad(out)) {
    t.set_backward(out, [x, gamma, beta, out, xhat = std::move(xhat), inv_std = std::move(inv_std), n](Tape& tp) {
      const Mat& g = tp.grad(out);
      tp.accumulate(beta, g.colwise().sum());
      tp.accumulate(gamma, g.cwiseProduct(xhat).colwise().sum());
      if (tp.requires_grad(x)) {
        Mat gx = (g.array().rowwise() * tp.value(gamma).row(0).array()).matrix();
        Vec mean_gx = gx.rowwise().mean();
        Vec mean_gx_xhat = gx.cwiseProduct(xhat).rowwise().mean();
        Mat dx = gx;
        dx.colwise() -= mean_gx;
        dx -= (xhat.array().colwise() * mean_gx_xhat.array()).matrix();
        dx = (dx.array().colwise() * inv_std.array()).matrix();
        tp.grad_mut(x) += dx;
      }
      (void)n;
    });
  }
  return out;
}

/// Row-wise softmax. With causal=true, entry (i, j) for j > i is masked out.
inline Var softmax_rows(Var x, bool causal = false) {
  Tape& t = *x.tape;
  Mat y = x.value();
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    const Eigen::Index valid = causal ? std::min<Eigen::Index>(i + 1, y.cols()) : y.cols();
    const double m = y.row(i).head(valid).maxCoeff();
    double z = 0.0;
    for (Eigen::Index j = 0; j < y.cols(); ++j) {
      if (j < valid) {
        y(i, j) = std::exp(y(i, j) - m);
        z += y(i, j);
      } else {
        y(i, j) = 0.0;
      }
    }
    y.row(i) /= z;
  }
  Var out = t.push(std::move(y), detail::any_grad({x}));
  if (t.requires_grad(out)) {
    t.set_backward(out, [x, out](Tape& tp) {
      const Mat& g = tp.grad(out);
      const Mat& yv = tp.value(out);
      Vec dot = g.cwiseProduct(yv).rowwise().sum();
      Mat dx = g;
      dx.colwise() -= dot;
      tp.accumulate(x, yv.cwiseProduct(dx));
    });
  }
  return out;
}

/// log(sum(exp(row))) for every row; R x 1.
inline Var logsumexp_rows(Var x) {
  Tape& t = *x.tape;
  const Mat& xv = x.value();
  Vec m = xv.rowwise().maxCoeff();
  Mat e = (xv.colwise() - m).array().exp().matrix();
  Vec s = e.rowwise().sum();
  Mat lse = (m.array() + s.array().log()).matrix();
  Var out = t.push(std::move(lse), detail::any_grad({x}));
  if (t.requires_grad(out)) {
    Mat p = e.array().colwise() / s.array();
    t.set_backward(out, [x, out, p = std::move(p)](Tape& tp) {
      const Mat& g = tp.grad(out);
      tp.accumulate(x, (p.array().colwise() * g.col(0).array()).matrix());
    });
  }
  return out;
}

/// Diagonal of a square matrix as a column; R x 1.
inline Var diagonal(Var x) {
  detail::check_shape(x.rows() == x.cols(), "diagonal");
  Tape& t = *x.tape;
  Var out = t.push(x.value().diagonal(), detail::any_grad({x}));
  if (t.requires_grad(out)) {
    t.set_backward(out, [x, out](Tape& tp) {
      if (tp.requires_grad(x)) tp.grad_mut(x).diagonal() += tp.grad(out).col(0);
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions

inline Var sum(Var x) {
  Tape& t = *x.tape;
  Mat s(1, 1);
  s(0, 0) = x.value().sum();
  Var out = t.push(std::move(s), detail::any_grad({x}));
  if (t.requires_grad(out)) {
    t.set_backward(out, [x, out](Tape& tp) {
      const Mat& xv = tp.value(x);
      tp.accumulate(x, Mat::Constant(xv.rows(), xv.cols(), tp.grad(out)(0, 0)));
    });
  }
  return out;
}

inline Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

/// Mean over rows; 1 x C.
inline Var mean_rows(Var x) {
  Tape& t = *x.tape;
  const auto r = static_cast<double>(x.rows());
  Var out = t.push(x.value().colwise().mean(), detail::any_grad({x}));
  if (t.requires_grad(out)) {
    t.set_backward(out, [x, out, r](Tape& tp) {
      if (tp.requires_grad(x)) tp.grad_mut(x).rowwise() += tp.grad(out).row(0) / r;
    });
  }
  return out;
}

/// Mean of squared entries.
inline Var mean_square(Var x) {
  Tape& t = *x.tape;
  const auto n = static_cast<double>(x.value().size());
  Mat s(1, 1);
  s(0, 0) = x.value().squaredNorm() / n;
  Var out = t.push(std::move(s), detail::any_grad({x}));
  if (t.requires_grad(out)) {
    t.set_backward(out, [x, out, n](Tape& tp) { tp.accumulate(x, tp.value(x) * (2.0 * tp.grad(out)(0, 0) / n)); });
  }
  return out;
}

/// Divides each row by its Euclidean norm.
inline Var l2_normalize_rows(Var x, double eps = 1e-12) {
  Tape& t = *x.tape;
  const Mat& xv = x.value();
  Vec norms = xv.rowwise().norm().cwiseMax(eps);
  Mat y = xv.array().colwise() / norms.array();
  Var out = t.push(std::move(y), detail::any_grad({x}));
  if (t.requires_grad(out)) {
    t.set_backward(out, [x, out, norms = std::move(norms)](Tape& tp) {
      const Mat& g = tp.grad(out);
      const Mat& yv = tp.value(out);
      Vec dot = g.cwiseProduct(yv).rowwise().sum();
      Mat dx = g - (yv.array().colwise() * dot.array()).matrix();
      tp.accumulate(x, (dx.array().colwise() / norms.array()).matrix());
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Structural

inline Var rows(Var x, Eigen::Index start, Eigen::Index count) {
  detail::check_shape(start >= 0 && count >= 0 && start + count <= x.rows(), "rows");
  Tape& t = *x.tape;
  Var out = t.push(x.value().middleRows(start, count), detail::any_grad({x}));
  if (t.requires_grad(out)) {
    t.set_backward(out, [x, out, start, count](Tape& tp) {
      if (tp.requires_grad(x)) tp.grad_mut(x).middleRows(start, count) += tp.grad(out);
    });
  }
  return out;
}

inline Var cols(Var x, Eigen::Index start, Eigen::Index count) {
  detail::check_shape(start >= 0 && count >= 0 && start + count <= x.cols(), "cols");
  Tape& t = *x.tape;
  Var out = t.push(x.value().middleCols(start, count), detail::any_grad({x}));
  if (t.requires_grad(out)) {
    t.set_backward(out, [x, out, start, count](Tape& tp) {
      if (tp.requires_grad(x)) tp.grad_mut(x).middleCols(start, count) += tp.grad(out);
    });
  }
  return out;
}

/// Stacks matrices vertically.
inline Var vconcat(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("vconcat of nothing");
  Tape& t = *parts.front().tape;
  const Eigen::Index c = parts.front().cols();
  Eigen::Index r = 0;
  bool grad = false;
  for (const Var& p : parts) {
    detail::check_same_tape(parts.front(), p);
    detail::check_shape(p.cols() == c, "vconcat");
    r += p.rows();
    grad = grad || t.requires_grad(p);
  }
  Mat v(r, c);
  Eigen::Index off = 0;
  for (const Var& p : parts) {
    v.middleRows(off, p.rows()) = p.value();
    off += p.rows();
  }
  Var out = t.push(std::move(v), grad);
  if (t.requires_grad(out)) {
    t.set_backward(out, [parts, out](Tape& tp) {
      const Mat& g = tp.grad(out);
      Eigen::Index o = 0;
      for (const Var& p : parts) {
        const Eigen::Index pr = tp.value(p).rows();
        tp.accumulate(p, g.middleRows(o, pr));
        o += pr;
      }
    });
  }
  return out;
}

/// Places matrices side by side.
inline Var hconcat(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("hconcat of nothing");
  Tape& t = *parts.front().tape;
  const Eigen::Index r = parts.front().rows();
  Eigen::Index c = 0;
  bool grad = false;
  for (const Var& p : parts) {
    detail::check_same_tape(parts.front(), p);
    detail::check_shape(p.rows() == r, "hconcat");
    c += p.cols();
    grad = grad || t.requires_grad(p);
  }
  Mat v(r, c);
  Eigen::Index off = 0;
  for (const Var& p : parts) {
    v.middleCols(off, p.cols()) = p.value();
    off += p.cols();
  }
  Var out = t.push(std::move(v), grad);
  if (t.requires_grad(out)) {
    t.set_backward(out, [parts, out](Tape& tp) {
      const Mat& g = tp.grad(out);
      Eigen::Index o = 0;
      for (const Var& p : parts) {
        const Eigen::Index pc = tp.value(p).cols();
        tp.accumulate(p, g.middleCols(o, pc));
        o += pc;
      }
    });
  }
  return out;
}

/// Selects rows of a table by index (embedding lookup); gradient scatter-adds.
inline Var gather_rows(Var table, std::vector<int> index) {
  Tape& t = *table.tape;
  const Mat& tv = table.value();
  Mat v(static_cast<Eigen::Index>(index.size()), tv.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= tv.rows()) throw std::out_of_range("gather_rows index");
    v.row(static_cast<Eigen::Index>(i)) = tv.row(index[i]);
  }
  Var out = t.push(std::move(v), detail::any_grad({table}));
  if (t.requires_grad(out)) {
    t.set_backward(out, [table, out, index = std::move(index)](Tape& tp) {
      if (!tp.requires_grad(table)) return;
      const Mat& g = tp.grad(out);
      Mat& gt = tp.grad_mut(table);
      for (std::size_t i = 0; i < index.size(); ++i) gt.row(index[i]) += g.row(static_cast<Eigen::Index>(i));
    });
  }
  return out;
}

}  // namespace eventbind::ad
