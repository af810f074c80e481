#pragma once

// Reverse-mode differentiation over dense matrices.
//
// A Tape records every operation of one forward evaluation; backward() walks
// the record once in reverse. The tape is rebuilt for every training step.
// Constants never receive gradients, which is how frozen sub-models are
// expressed: their parameters enter the tape through Tape::constant.

#include <boost/math/special_functions/digamma.hpp>

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "eviadapt/errors.hpp"
#include "eviadapt/matrix.hpp"

namespace eviadapt::ad {

/// Trainable tensor living outside any tape.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  void zero_grad() { grad = Matrix(value.rows(), value.cols()); }
};

class Tape;

/// Handle to a node of a Tape. Cheap to copy; only valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  const Matrix& grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool requires_grad() const;
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  double item() const {
    if (value().size() != 1) throw ShapeError("item() on non-scalar " + value().shape_string());
    return value()[0];
  }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value) { return push(std::move(value), false, nullptr); }
  Var variable(Matrix value) { return push(std::move(value), true, nullptr); }
  /// Leaf bound to a parameter; backward() accumulates into p.grad.
  Var parameter(Parameter& p) {
    auto v = push(p.value, true, nullptr);
    nodes_[v.id_].param = &p;
    return v;
  }

  Var push(Matrix value, bool requires_grad, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), Matrix{}, std::move(fn), requires_grad, nullptr});
    return Var(this, nodes_.size() - 1);
  }

  /// Reverse sweep from a scalar output. Clears gradients of any earlier sweep.
  void backward(Var out) {
    check_owner(out);
    if (nodes_[out.id_].value.size() != 1) {
      throw ShapeError("backward() needs a scalar output, got " +
                       nodes_[out.id_].value.shape_string());
    }
    for (auto& n : nodes_) n.grad = Matrix{};
    if (!nodes_[out.id_].requires_grad) return;
    grad_of(out.id_)[0] = 1.0;
    for (std::size_t i = out.id_ + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.backward) n.backward(*this, i);
      Node& same = nodes_[i];
      if (same.param != nullptr) {
        Parameter& p = *same.param;
        if (!p.grad.same_shape(p.value)) p.zero_grad();
        for (std::size_t k = 0; k < p.grad.size(); ++k) p.grad[k] += same.grad[k];
      }
    }
  }

  const Matrix& value_of(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const Matrix& grad_view(std::size_t id) const { return nodes_[id].grad; }

  /// Gradient buffer of a node, allocated as zeros on first access.
  Matrix& grad_of(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
    return n.grad;
  }

  std::size_t size() const { return nodes_.size(); }

  void check_owner(const Var& v) const {
    if (v.tape_ != this) throw UsageError("value belongs to a different tape");
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    BackwardFn backward;
    bool requires_grad;
    Parameter* param;
  };
  std::vector<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape_->value_of(id_); }
inline const Matrix& Var::grad() const { return tape_->grad_view(id_); }
inline bool Var::requires_grad() const { return tape_->requires_grad(id_); }

namespace detail {

inline Tape& common_tape(const Var& a, const Var& b) {
  if (a.tape() == nullptr || a.tape() != b.tape()) {
    throw UsageError("operands belong to different tapes");
  }
  return *a.tape();
}

inline std::size_t broadcast_dim(std::size_t x, std::size_t y, const Matrix& a, const Matrix& b,
                                 const char* op) {
  if (x == y || y == 1) return x;
  if (x == 1) return y;
  throw ShapeError(std::string(op) + ": incompatible shapes " + a.shape_string() + " and " +
                   b.shape_string());
}

// Elementwise binary op with 2-D broadcasting of unit dimensions.
// df_da/df_db receive (x, y, out) and return the local partial derivative.
template <class F, class DA, class DB>
Var binary(const Var& a, const Var& b, const char* op, F f, DA df_da, DB df_db) {
  Tape& t = common_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  const std::size_t rows = broadcast_dim(av.rows(), bv.rows(), av, bv, op);
  const std::size_t cols = broadcast_dim(av.cols(), bv.cols(), av, bv, op);
  Matrix out(rows, cols);
  const bool ar = av.rows() == 1, ac = av.cols() == 1, br = bv.rows() == 1, bc = bv.cols() == 1;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      out(r, c) = f(av(ar ? 0 : r, ac ? 0 : c), bv(br ? 0 : r, bc ? 0 : c));
    }
  }
  const bool req = a.requires_grad() || b.requires_grad();
  const std::size_t ia = a.id(), ib = b.id();
  Tape::BackwardFn fn;
  if (req) {
    fn = [ia, ib, df_da, df_db](Tape& tp, std::size_t self) {
      const Matrix& x = tp.value_of(ia);
      const Matrix& y = tp.value_of(ib);
      const Matrix& o = tp.value_of(self);
      const Matrix& g = tp.grad_view(self);
      const bool xr = x.rows() == 1, xc = x.cols() == 1, yr = y.rows() == 1, yc = y.cols() == 1;
      const bool need_a = tp.requires_grad(ia), need_b = tp.requires_grad(ib);
      Matrix* ga = need_a ? &tp.grad_of(ia) : nullptr;
      Matrix* gb = need_b ? &tp.grad_of(ib) : nullptr;
      for (std::size_t r = 0; r < o.rows(); ++r) {
        for (std::size_t c = 0; c < o.cols(); ++c) {
          const std::size_t xr_i = xr ? 0 : r, xc_i = xc ? 0 : c;
          const std::size_t yr_i = yr ? 0 : r, yc_i = yc ? 0 : c;
          const double xv = x(xr_i, xc_i), yv = y(yr_i, yc_i), ov = o(r, c), gv = g(r, c);
          if (ga) (*ga)(xr_i, xc_i) += gv * df_da(xv, yv, ov);
          if (gb) (*gb)(yr_i, yc_i) += gv * df_db(xv, yv, ov);
        }
      }
    };
  }
  return t.push(std::move(out), req, std::move(fn));
}

// df receives (x, out).
template <class F, class DF>
Var unary(const Var& a, F f, DF df) {
  Tape& t = *a.tape();
  const Matrix& av = a.value();
  Matrix out(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  const bool req = a.requires_grad();
  const std::size_t ia = a.id();
  Tape::BackwardFn fn;
  if (req) {
    fn = [ia, df](Tape& tp, std::size_t self) {
      const Matrix& x = tp.value_of(ia);
      const Matrix& o = tp.value_of(self);
      const Matrix& g = tp.grad_view(self);
      Matrix& gx = tp.grad_of(ia);
      for (std::size_t i = 0; i < x.size(); ++i) gx[i] += g[i] * df(x[i], o[i]);
    };
  }
  return t.push(std::move(out), req, std::move(fn));
}

inline double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double stable_softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

}  // namespace detail

// ---- elementwise binary -------------------------------------------------

inline Var add(const Var& a, const Var& b) {
  return detail::binary(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

inline Var sub(const Var& a, const Var& b) {
  return detail::binary(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

inline Var mul(const Var& a, const Var& b) {
  return detail::binary(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

inline Var div(const Var& a, const Var& b) {
  return detail::binary(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double o) { return -o / y; });
}

/// Elementwise max. At ties the whole subgradient goes to the first argument.
inline Var maximum(const Var& a, const Var& b) {
  return detail::binary(
      a, b, "maximum", [](double x, double y) { return x >= y ? x : y; },
      [](double x, double y, double) { return x >= y ? 1.0 : 0.0; },
      [](double x, double y, double) { return x >= y ? 0.0 : 1.0; });
}

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }

// ---- scalar affine helpers ------------------------------------------------

inline Var scale(const Var& a, double k) {
  return detail::unary(
      a, [k](double x) { return k * x; }, [k](double, double) { return k; });
}

inline Var add_scalar(const Var& a, double k) {
  return detail::unary(
      a, [k](double x) { return x + k; }, [](double, double) { return 1.0; });
}

inline Var neg(const Var& a) { return scale(a, -1.0); }
inline Var operator-(const Var& a) { return neg(a); }
inline Var operator*(double k, const Var& a) { return scale(a, k); }
inline Var operator*(const Var& a, double k) { return scale(a, k); }
inline Var operator+(const Var& a, double k) { return add_scalar(a, k); }
inline Var operator+(double k, const Var& a) { return add_scalar(a, k); }
inline Var operator-(const Var& a, double k) { return add_scalar(a, -k); }

/// k / a
inline Var reciprocal(const Var& a, double k = 1.0) {
  return detail::unary(
      a, [k](double x) { return k / x; }, [](double x, double o) { return -o / x; });
}

// ---- elementwise unary ----------------------------------------------------

inline Var exp(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::exp(x); }, [](double, double o) { return o; });
}

inline Var log(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Var lgamma(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::lgamma(x); },
      [](double x, double) { return boost::math::digamma(x); });
}

inline Var square(const Var& a) {
  return detail::unary(
      a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

inline Var sqrt(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::sqrt(x); }, [](double, double o) { return 0.5 / o; });
}

inline Var sigmoid(const Var& a) {
  return detail::unary(
      a, [](double x) { return detail::stable_sigmoid(x); },
      [](double, double o) { return o * (1.0 - o); });
}

inline Var tanh(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::tanh(x); }, [](double, double o) { return 1.0 - o * o; });
}

inline Var softplus(const Var& a) {
  return detail::unary(
      a, [](double x) { return detail::stable_softplus(x); },
      [](double x, double) { return detail::stable_sigmoid(x); });
}

// ---- reductions -----------------------------------------------------------

inline Var sum(const Var& a) {
  Tape& t = *a.tape();
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const std::size_t ia = a.id();
  Tape::BackwardFn fn;
  if (a.requires_grad()) {
    fn = [ia](Tape& tp, std::size_t self) {
      const double g = tp.grad_view(self)[0];
      Matrix& gx = tp.grad_of(ia);
      for (auto& v : gx.data()) v += g;
    };
  }
  return t.push(Matrix::scalar(s), a.requires_grad(), std::move(fn));
}

inline Var mean(const Var& a) {
  if (a.value().size() == 0) throw ShapeError("mean of empty value");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

/// Sum over rows: (m x n) -> (1 x n).
inline Var sum_rows(const Var& a) {
  Tape& t = *a.tape();
  const Matrix& av = a.value();
  Matrix out(1, av.cols());
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (std::size_t c = 0; c < av.cols(); ++c) out(0, c) += av(r, c);
  const std::size_t ia = a.id();
  Tape::BackwardFn fn;
  if (a.requires_grad()) {
    fn = [ia](Tape& tp, std::size_t self) {
      const Matrix& g = tp.grad_view(self);
      Matrix& gx = tp.grad_of(ia);
      for (std::size_t r = 0; r < gx.rows(); ++r)
        for (std::size_t c = 0; c < gx.cols(); ++c) gx(r, c) += g(0, c);
    };
  }
  return t.push(std::move(out), a.requires_grad(), std::move(fn));
}

/// Sum over columns: (m x n) -> (m x 1).
inline Var sum_cols(const Var& a) {
  Tape& t = *a.tape();
  const Matrix& av = a.value();
  Matrix out(av.rows(), 1);
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (std::size_t c = 0; c < av.cols(); ++c) out(r, 0) += av(r, c);
  const std::size_t ia = a.id();
  Tape::BackwardFn fn;
  if (a.requires_grad()) {
    fn = [ia](Tape& tp, std::size_t self) {
      const Matrix& g = tp.grad_view(self);
      Matrix& gx = tp.grad_of(ia);
      for (std::size_t r = 0; r < gx.rows(); ++r)
        for (std::size_t c = 0; c < gx.cols(); ++c) gx(r, c) += g(r, 0);
    };
  }
  return t.push(std::move(out), a.requires_grad(), std::move(fn));
}

// ---- linear algebra -------------------------------------------------------

inline Var matmul(const Var& a, const Var& b) {
  Tape& t = detail::common_tape(a, b);
  Matrix out = eviadapt::matmul(a.value(), b.value());
  const bool req = a.requires_grad() || b.requires_grad();
  const std::size_t ia = a.id(), ib = b.id();
  Tape::BackwardFn fn;
  if (req) {
    fn = [ia, ib](Tape& tp, std::size_t self) {
      const Matrix& g = tp.grad_view(self);
      if (tp.requires_grad(ia)) gemm_abt_acc(g, tp.value_of(ib), tp.grad_of(ia));
      if (tp.requires_grad(ib)) gemm_atb_acc(tp.value_of(ia), g, tp.grad_of(ib));
    };
  }
  return t.push(std::move(out), req, std::move(fn));
}

inline Var transpose(const Var& a) {
  Tape& t = *a.tape();
  const Matrix& av = a.value();
  Matrix out(av.cols(), av.rows());
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (std::size_t c = 0; c < av.cols(); ++c) out(c, r) = av(r, c);
  const std::size_t ia = a.id();
  Tape::BackwardFn fn;
  if (a.requires_grad()) {
    fn = [ia](Tape& tp, std::size_t self) {
      const Matrix& g = tp.grad_view(self);
      Matrix& gx = tp.grad_of(ia);
      for (std::size_t r = 0; r < gx.rows(); ++r)
        for (std::size_t c = 0; c < gx.cols(); ++c) gx(r, c) += g(c, r);
    };
  }
  return t.push(std::move(out), a.requires_grad(), std::move(fn));
}

/// Squared Euclidean distances between the rows of a (n x d) and b (m x d).
inline Var pairwise_sqdist(const Var& a, const Var& b) {
  Tape& t = detail::common_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.cols()) {
    throw ShapeError("pairwise_sqdist width mismatch: " + av.shape_string() + " vs " +
                     bv.shape_string());
  }
  Matrix out(av.rows(), bv.rows());
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = 0; j < bv.rows(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < av.cols(); ++k) {
        const double d = av(i, k) - bv(j, k);
        s += d * d;
      }
      out(i, j) = s;
    }
  const bool req = a.requires_grad() || b.requires_grad();
  const std::size_t ia = a.id(), ib = b.id();
  Tape::BackwardFn fn;
  if (req) {
    fn = [ia, ib](Tape& tp, std::size_t self) {
      const Matrix& x = tp.value_of(ia);
      const Matrix& y = tp.value_of(ib);
      const Matrix& g = tp.grad_view(self);
      Matrix* gx = tp.requires_grad(ia) ? &tp.grad_of(ia) : nullptr;
      Matrix* gy = tp.requires_grad(ib) ? &tp.grad_of(ib) : nullptr;
      for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < y.rows(); ++j) {
          const double gij = 2.0 * g(i, j);
          if (gij == 0.0) continue;
          for (std::size_t k = 0; k < x.cols(); ++k) {
            const double d = gij * (x(i, k) - y(j, k));
            if (gx) (*gx)(i, k) += d;
            if (gy) (*gy)(j, k) -= d;
          }
        }
    };
  }
  return t.push(std::move(out), req, std::move(fn));
}

// ---- structural -----------------------------------------------------------

/// Columns [begin, begin + count).
inline Var slice_cols(const Var& a, std::size_t begin, std::size_t count) {
  Tape& t = *a.tape();
  const Matrix& av = a.value();
  if (begin + count > av.cols()) {
    throw ShapeError("slice_cols [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") out of range for " + av.shape_string());
  }
  Matrix out(av.rows(), count);
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (std::size_t c = 0; c < count; ++c) out(r, c) = av(r, begin + c);
  const std::size_t ia = a.id();
  Tape::BackwardFn fn;
  if (a.requires_grad()) {
    fn = [ia, begin](Tape& tp, std::size_t self) {
      const Matrix& g = tp.grad_view(self);
      Matrix& gx = tp.grad_of(ia);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) gx(r, begin + c) += g(r, c);
    };
  }
  return t.push(std::move(out), a.requires_grad(), std::move(fn));
}

/// Rows selected by index (indices may repeat).
inline Var gather_rows(const Var& a, std::vector<std::size_t> rows) {
  Tape& t = *a.tape();
  const Matrix& av = a.value();
  Matrix out(rows.size(), av.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= av.rows()) {
      throw ShapeError("gather_rows index " + std::to_string(rows[r]) + " out of range for " +
                       av.shape_string());
    }
    for (std::size_t c = 0; c < av.cols(); ++c) out(r, c) = av(rows[r], c);
  }
  const std::size_t ia = a.id();
  Tape::BackwardFn fn;
  if (a.requires_grad()) {
    fn = [ia, rows = std::move(rows)](Tape& tp, std::size_t self) {
      const Matrix& g = tp.grad_view(self);
      Matrix& gx = tp.grad_of(ia);
      for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) gx(rows[r], c) += g(r, c);
    };
  }
  return t.push(std::move(out), a.requires_grad(), std::move(fn));
}

/// Horizontal concatenation of values with equal row counts.
inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols of zero operands");
  Tape& t = *parts.front().tape();
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  bool req = false;
  for (const auto& p : parts) {
    t.check_owner(p);
    if (p.rows() != rows) {
      throw ShapeError("concat_cols row mismatch: " + parts.front().value().shape_string() +
                       " vs " + p.value().shape_string());
    }
    cols += p.cols();
    req = req || p.requires_grad();
  }
  Matrix out(rows, cols);
  std::vector<std::size_t> ids, offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const Matrix& v = p.value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < v.cols(); ++c) out(r, off + c) = v(r, c);
    ids.push_back(p.id());
    offsets.push_back(off);
    off += v.cols();
  }
  Tape::BackwardFn fn;
  if (req) {
    fn = [ids, offsets](Tape& tp, std::size_t self) {
      const Matrix& g = tp.grad_view(self);
      for (std::size_t k = 0; k < ids.size(); ++k) {
        if (!tp.requires_grad(ids[k])) continue;
        Matrix& gx = tp.grad_of(ids[k]);
        for (std::size_t r = 0; r < gx.rows(); ++r)
          for (std::size_t c = 0; c < gx.cols(); ++c) gx(r, c) += g(r, offsets[k] + c);
      }
    };
  }
  return t.push(std::move(out), req, std::move(fn));
}

/// Vertical concatenation of values with equal column counts.
inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows of zero operands");
  Tape& t = *parts.front().tape();
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  bool req = false;
  for (const auto& p : parts) {
    t.check_owner(p);
    if (p.cols() != cols) {
      throw ShapeError("concat_rows column mismatch: " + parts.front().value().shape_string() +
                       " vs " + p.value().shape_string());
    }
    rows += p.rows();
    req = req || p.requires_grad();
  }
  std::vector<double> data;
  data.reserve(rows * cols);
  std::vector<std::size_t> ids;
  for (const auto& p : parts) {
    data.insert(data.end(), p.value().data().begin(), p.value().data().end());
    ids.push_back(p.id());
  }
  Tape::BackwardFn fn;
  if (req) {
    fn = [ids](Tape& tp, std::size_t self) {
      const Matrix& g = tp.grad_view(self);
      std::size_t off = 0;
      for (std::size_t id : ids) {
        const std::size_t n = tp.value_of(id).size();
        if (tp.requires_grad(id)) {
          Matrix& gx = tp.grad_of(id);
          for (std::size_t k = 0; k < n; ++k) gx[k] += g[off + k];
        }
        off += n;
      }
    };
  }
  return t.push(Matrix(rows, cols, std::move(data)), req, std::move(fn));
}

// ---- finite-difference verification ---------------------------------------

using ScalarFn = std::function<Var(Tape&, Var)>;

/// Max over coordinates of |analytic - central difference| /
/// max(|analytic|, |central difference|, 1e-8).
inline double gradient_check(const ScalarFn& f, const Matrix& point, double step) {
  if (!(step > 0)) throw UsageError("gradient_check step must be positive");
  Matrix analytic;
  {
    Tape tape;
    Var x = tape.variable(point);
    Var y = f(tape, x);
    tape.backward(y);
    analytic = x.grad().empty() ? Matrix(point.rows(), point.cols()) : x.grad();
  }
  auto eval = [&](const Matrix& p) {
    Tape tape;
    Var x = tape.constant(p);
    return f(tape, x).item();
  };
  double worst = 0.0;
  Matrix probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + step;
    const double up = eval(probe);
    probe[i] = orig - step;
    const double down = eval(probe);
    probe[i] = orig;
    const double numeric = (up - down) / (2.0 * step);
    if (!std::isfinite(analytic[i]) || !std::isfinite(numeric)) {
      throw NumericalError("gradient_check: non-finite gradient at coordinate " +
                           std::to_string(i) + " (analytic " + std::to_string(analytic[i]) +
                           ", numeric " + std::to_string(numeric) + ")");
    }
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

}  // namespace eviadapt::ad
