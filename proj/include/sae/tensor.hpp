// Dense 64-bit tensors and a tape-based reverse-mode autodiff engine.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace sae {

using Shape = std::vector<std::size_t>;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

/// Row-major dense array of doubles with an optional gradient buffer.
///
/// The gradient is materialized lazily (empty until the first backward pass
/// that reaches this tensor as a leaf) and always has the same length as data.
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
      : shape_(std::move(shape)), data_(std::move(data)), requires_grad_(requires_grad) {
    for (auto d : shape_) {
      if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape_));
    }
    if (shape_numel(shape_) != data_.size()) {
      throw DimensionError("shape " + shape_string(shape_) + " does not match " +
                           std::to_string(data_.size()) + " values");
    }
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data,
                       bool requires_grad = false) {
    return Tensor({rows, cols}, std::move(data), requires_grad);
  }

  static Tensor scalar(double v) { return Tensor({1, 1}, {v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
  std::size_t cols() const { return shape_.size() < 2 ? 1 : shape_[1]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double item() const {
    if (data_.size() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape_));
    return data_[0];
  }

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool v) { requires_grad_ = v; }

  bool has_grad() const { return !grad_.empty(); }
  std::span<double> grad() { return grad_; }
  std::span<const double> grad() const { return grad_; }
  void zero_grad() { std::fill(grad_.begin(), grad_.end(), 0.0); }
  void clear_grad() { grad_.clear(); }

  void accumulate_grad(std::span<const double> g) {
    if (grad_.empty()) grad_.assign(data_.size(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) grad_[i] += g[i];
  }

 private:
  Shape shape_;
  std::vector<double> data_;
  bool requires_grad_ = false;
  std::vector<double> grad_;
};

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;
};

/// Append-only record of operations. Nodes are stored in creation order, so
/// every node's parents precede it and a reverse sweep is a valid topological
/// traversal.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  struct Node {
    Tensor value;
    std::vector<double> grad;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    Tensor* leaf = nullptr;
    bool needs_grad = false;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) { return push(std::move(value), {}, nullptr, false); }

  /// Records a leaf bound to an external tensor. Backward accumulates into
  /// `param.grad()` when `param.requires_grad()`.
  Var watch(Tensor& param) {
    auto v = push(param, {}, nullptr, param.requires_grad());
    nodes_[v.id].leaf = &param;
    return v;
  }

  Var record(Tensor value, std::vector<std::size_t> parents, BackwardFn backward) {
    bool needs = std::any_of(parents.begin(), parents.end(),
                             [&](std::size_t p) { return nodes_[p].needs_grad; });
    return push(std::move(value), std::move(parents), needs ? std::move(backward) : nullptr, needs);
  }

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  const Node& node(std::size_t id) const { return nodes_[id]; }
  std::size_t size() const { return nodes_.size(); }

  std::span<const double> grad(Var v) const { return nodes_.at(v.id).grad; }

  /// Gradient buffer of a parent node, allocated on first use.
  std::vector<double>& grad_buffer(std::size_t id) {
    auto& n = nodes_[id];
    if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
    return n.grad;
  }

  const std::vector<double>& upstream(std::size_t id) const { return nodes_[id].grad; }

  void backward(Var root) {
    if (root.tape != this) throw std::invalid_argument("backward: variable belongs to another tape");
    const auto& rv = nodes_.at(root.id).value;
    if (rv.size() != 1) {
      throw std::invalid_argument("backward: root must be a scalar, got shape " + shape_string(rv.shape()));
    }
    for (auto& n : nodes_) n.grad.clear();
    if (!nodes_[root.id].needs_grad) return;
    grad_buffer(root.id)[0] = 1.0;
    for (std::size_t k = root.id + 1; k-- > 0;) {
      auto& n = nodes_[k];
      if (!n.needs_grad || n.grad.empty()) continue;
      if (n.backward) n.backward(*this, k);
      if (n.leaf != nullptr && n.leaf->requires_grad()) n.leaf->accumulate_grad(n.grad);
    }
  }

 private:
  Var push(Tensor value, std::vector<std::size_t> parents, BackwardFn backward, bool needs) {
    nodes_.push_back(Node{std::move(value), {}, std::move(parents), std::move(backward), nullptr, needs});
    return Var{this, nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
};

namespace detail {

inline void require_same_tape(Var a, Var b) {
  if (a.tape == nullptr || a.tape != b.tape) throw std::invalid_argument("operands recorded on different tapes");
}

inline void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got shape " + shape_string(t.shape()));
  }
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

template <class F>
Var unary(Var a, const char* op, F&& f, std::function<double(double x, double y)> dfdx) {
  (void)op;
  auto& tape = *a.tape;
  const auto& x = tape.value(a);
  Tensor out = Tensor::zeros(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out.values()[i] = f(x.values()[i]);
  return tape.record(std::move(out), {a.id}, [pa = a.id, dfdx](Tape& t, std::size_t self) {
    const auto& g = t.upstream(self);
    const auto& xv = t.node(pa).value.values();
    const auto& yv = t.node(self).value.values();
    auto& ga = t.grad_buffer(pa);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * dfdx(xv[i], yv[i]);
  });
}

}  // namespace detail

inline Var matmul(Var a, Var b) {
  detail::require_same_tape(a, b);
  auto& tape = *a.tape;
  const auto& A = tape.value(a);
  const auto& B = tape.value(b);
  detail::require_matrix(A, "matmul");
  detail::require_matrix(B, "matmul");
  if (A.cols() != B.rows()) {
    throw DimensionError("matmul: inner dimensions differ for " + shape_string(A.shape()) + " and " +
                         shape_string(B.shape()));
  }
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  Tensor out = Tensor::zeros({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A(i, p);
      for (std::size_t j = 0; j < n; ++j) out(i, j) += aip * B(p, j);
    }
  }
  return tape.record(std::move(out), {a.id, b.id}, [pa = a.id, pb = b.id, m, k, n](Tape& t, std::size_t self) {
    const auto& g = t.upstream(self);
    const auto& Av = t.node(pa).value.values();
    const auto& Bv = t.node(pb).value.values();
    if (t.node(pa).needs_grad) {
      auto& ga = t.grad_buffer(pa);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * Bv[p * n + j];
          ga[i * k + p] += s;
        }
    }
    if (t.node(pb).needs_grad) {
      auto& gb = t.grad_buffer(pb);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = Av[i * k + p];
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
        }
    }
  });
}

inline Var add(Var a, Var b) {
  detail::require_same_tape(a, b);
  auto& tape = *a.tape;
  const auto& A = tape.value(a);
  const auto& B = tape.value(b);
  detail::require_same_shape(A, B, "add");
  Tensor out = A;
  out.set_requires_grad(false);
  for (std::size_t i = 0; i < out.size(); ++i) out.values()[i] += B.values()[i];
  return tape.record(std::move(out), {a.id, b.id}, [pa = a.id, pb = b.id](Tape& t, std::size_t self) {
    const auto& g = t.upstream(self);
    for (auto p : {pa, pb}) {
      if (!t.node(p).needs_grad) continue;
      auto& gp = t.grad_buffer(p);
      for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i];
    }
  });
}

inline Var sub(Var a, Var b) {
  detail::require_same_tape(a, b);
  auto& tape = *a.tape;
  const auto& A = tape.value(a);
  const auto& B = tape.value(b);
  detail::require_same_shape(A, B, "sub");
  Tensor out = Tensor::zeros(A.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.values()[i] = A.values()[i] - B.values()[i];
  return tape.record(std::move(out), {a.id, b.id}, [pa = a.id, pb = b.id](Tape& t, std::size_t self) {
    const auto& g = t.upstream(self);
    if (t.node(pa).needs_grad) {
      auto& ga = t.grad_buffer(pa);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.node(pb).needs_grad) {
      auto& gb = t.grad_buffer(pb);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

inline Var mul(Var a, Var b) {
  detail::require_same_tape(a, b);
  auto& tape = *a.tape;
  const auto& A = tape.value(a);
  const auto& B = tape.value(b);
  detail::require_same_shape(A, B, "mul");
  Tensor out = Tensor::zeros(A.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.values()[i] = A.values()[i] * B.values()[i];
  return tape.record(std::move(out), {a.id, b.id}, [pa = a.id, pb = b.id](Tape& t, std::size_t self) {
    const auto& g = t.upstream(self);
    const auto& Av = t.node(pa).value.values();
    const auto& Bv = t.node(pb).value.values();
    if (t.node(pa).needs_grad) {
      auto& ga = t.grad_buffer(pa);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * Bv[i];
    }
    if (t.node(pb).needs_grad) {
      auto& gb = t.grad_buffer(pb);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * Av[i];
    }
  });
}

inline Var scale(Var a, double c) {
  return detail::unary(a, "scale", [c](double x) { return c * x; }, [c](double, double) { return c; });
}

inline Var add_scalar(Var a, double c) {
  return detail::unary(a, "add_scalar", [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

inline Var relu(Var a) {
  return detail::unary(a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
                       [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Var exp(Var a) {
  return detail::unary(a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Var log(Var a) {
  for (double x : a.tape->value(a).values()) {
    if (!(x > 0.0)) throw DomainError("log: input must be strictly positive, got " + std::to_string(x));
  }
  return detail::unary(a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

/// a[m x n] + bias[1 x n], bias broadcast over rows.
inline Var add_row(Var a, Var bias) {
  detail::require_same_tape(a, bias);
  auto& tape = *a.tape;
  const auto& A = tape.value(a);
  const auto& b = tape.value(bias);
  detail::require_matrix(A, "add_row");
  if (b.size() != A.cols() || b.rows() != 1) {
    throw DimensionError("add_row: bias " + shape_string(b.shape()) + " incompatible with " + shape_string(A.shape()));
  }
  const std::size_t m = A.rows(), n = A.cols();
  Tensor out = Tensor::zeros(A.shape());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(i, j) = A(i, j) + b.values()[j];
  return tape.record(std::move(out), {a.id, bias.id}, [pa = a.id, pb = bias.id, m, n](Tape& t, std::size_t self) {
    const auto& g = t.upstream(self);
    if (t.node(pa).needs_grad) {
      auto& ga = t.grad_buffer(pa);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.node(pb).needs_grad) {
      auto& gb = t.grad_buffer(pb);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
    }
  });
}

/// Sum of all entries as a 1x1 tensor.
inline Var sum(Var a) {
  auto& tape = *a.tape;
  const auto& A = tape.value(a);
  double s = 0.0;
  for (double x : A.values()) s += x;
  return tape.record(Tensor::scalar(s), {a.id}, [pa = a.id](Tape& t, std::size_t self) {
    const double g = t.upstream(self)[0];
    auto& ga = t.grad_buffer(pa);
    for (auto& v : ga) v += g;
  });
}

inline Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.tape->value(a).size())); }

/// Reduction over one axis of a matrix, keeping the reduced axis with extent 1.
inline Var sum_axis(Var a, std::size_t axis) {
  auto& tape = *a.tape;
  const auto& A = tape.value(a);
  detail::require_matrix(A, "sum_axis");
  if (axis > 1) throw DimensionError("sum_axis: axis must be 0 or 1");
  const std::size_t m = A.rows(), n = A.cols();
  Tensor out = axis == 0 ? Tensor::zeros({1, n}) : Tensor::zeros({m, 1});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.values()[axis == 0 ? j : i] += A(i, j);
  return tape.record(std::move(out), {a.id}, [pa = a.id, m, n, axis](Tape& t, std::size_t self) {
    const auto& g = t.upstream(self);
    auto& ga = t.grad_buffer(pa);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[axis == 0 ? j : i];
  });
}

inline Var mean_axis(Var a, std::size_t axis) {
  const auto& A = a.tape->value(a);
  detail::require_matrix(A, "mean_axis");
  const double count = static_cast<double>(axis == 0 ? A.rows() : A.cols());
  return scale(sum_axis(a, axis), 1.0 / count);
}

inline Var slice_rows(Var a, std::size_t begin, std::size_t end) {
  auto& tape = *a.tape;
  const auto& A = tape.value(a);
  detail::require_matrix(A, "slice_rows");
  if (begin >= end || end > A.rows()) {
    throw DimensionError("slice_rows: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") out of bounds for " + shape_string(A.shape()));
  }
  const std::size_t n = A.cols();
  std::vector<double> d(A.values().begin() + static_cast<std::ptrdiff_t>(begin * n),
                        A.values().begin() + static_cast<std::ptrdiff_t>(end * n));
  return tape.record(Tensor({end - begin, n}, std::move(d)), {a.id}, [pa = a.id, begin, n](Tape& t, std::size_t self) {
    const auto& g = t.upstream(self);
    auto& ga = t.grad_buffer(pa);
    for (std::size_t i = 0; i < g.size(); ++i) ga[begin * n + i] += g[i];
  });
}

inline Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  auto& tape = *a.tape;
  const auto& A = tape.value(a);
  detail::require_matrix(A, "slice_cols");
  if (begin >= end || end > A.cols()) {
    throw DimensionError("slice_cols: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") out of bounds for " + shape_string(A.shape()));
  }
  const std::size_t m = A.rows(), n = A.cols(), w = end - begin;
  Tensor out = Tensor::zeros({m, w});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < w; ++j) out(i, j) = A(i, begin + j);
  return tape.record(std::move(out), {a.id}, [pa = a.id, begin, m, n, w](Tape& t, std::size_t self) {
    const auto& g = t.upstream(self);
    auto& ga = t.grad_buffer(pa);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) ga[i * n + begin + j] += g[i * w + j];
  });
}

/// Concatenation of matrices along axis 0 (rows) or 1 (columns).
inline Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no operands");
  if (axis > 1) throw DimensionError("concat: axis must be 0 or 1");
  auto& tape = *parts.front().tape;
  std::vector<std::size_t> ids;
  std::vector<std::size_t> extents;
  const auto& first = tape.value(parts.front());
  detail::require_matrix(first, "concat");
  std::size_t total = 0;
  for (auto p : parts) {
    detail::require_same_tape(parts.front(), p);
    const auto& v = tape.value(p);
    detail::require_matrix(v, "concat");
    const bool ok = axis == 0 ? v.cols() == first.cols() : v.rows() == first.rows();
    if (!ok) {
      throw DimensionError("concat: incompatible shapes " + shape_string(first.shape()) + " and " +
                           shape_string(v.shape()));
    }
    ids.push_back(p.id);
    extents.push_back(axis == 0 ? v.rows() : v.cols());
    total += extents.back();
  }
  const std::size_t m = axis == 0 ? total : first.rows();
  const std::size_t n = axis == 0 ? first.cols() : total;
  Tensor out = Tensor::zeros({m, n});
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = tape.value(parts[k]);
    for (std::size_t i = 0; i < v.rows(); ++i)
      for (std::size_t j = 0; j < v.cols(); ++j) {
        if (axis == 0) out(offset + i, j) = v(i, j);
        else out(i, offset + j) = v(i, j);
      }
    offset += extents[k];
  }
  return tape.record(std::move(out), ids, [ids, extents, axis, n](Tape& t, std::size_t self) {
    const auto& g = t.upstream(self);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (t.node(ids[k]).needs_grad) {
        const auto& v = t.node(ids[k]).value;
        auto& gk = t.grad_buffer(ids[k]);
        for (std::size_t i = 0; i < v.rows(); ++i)
          for (std::size_t j = 0; j < v.cols(); ++j) {
            const std::size_t src = axis == 0 ? (offset + i) * n + j : i * n + offset + j;
            gk[i * v.cols() + j] += g[src];
          }
      }
      offset += extents[k];
    }
  });
}

inline Var gather_rows(Var a, std::vector<std::size_t> indices) {
  auto& tape = *a.tape;
  const auto& A = tape.value(a);
  detail::require_matrix(A, "gather_rows");
  if (indices.empty()) throw DimensionError("gather_rows: empty index list");
  const std::size_t n = A.cols();
  Tensor out = Tensor::zeros({indices.size(), n});
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= A.rows()) {
      throw DimensionError("gather_rows: index " + std::to_string(indices[r]) + " out of range for " +
                           shape_string(A.shape()));
    }
    for (std::size_t j = 0; j < n; ++j) out(r, j) = A(indices[r], j);
  }
  return tape.record(std::move(out), {a.id}, [pa = a.id, idx = std::move(indices), n](Tape& t, std::size_t self) {
    const auto& g = t.upstream(self);
    auto& ga = t.grad_buffer(pa);
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t j = 0; j < n; ++j) ga[idx[r] * n + j] += g[r * n + j];
  });
}

/// Training-mode batch normalization over rows: per-column batch mean and
/// biased variance, then a learnable per-column scale and shift.
inline Var batch_norm(Var x, Var gamma, Var beta, double eps = 1e-5) {
  detail::require_same_tape(x, gamma);
  detail::require_same_tape(x, beta);
  auto& tape = *x.tape;
  const auto& X = tape.value(x);
  const auto& G = tape.value(gamma);
  const auto& Bt = tape.value(beta);
  detail::require_matrix(X, "batch_norm");
  const std::size_t m = X.rows(), n = X.cols();
  if (G.size() != n || Bt.size() != n) {
    throw DimensionError("batch_norm: scale/shift " + shape_string(G.shape()) + " incompatible with " +
                         shape_string(X.shape()));
  }
  std::vector<double> xhat(m * n), inv_std(n);
  Tensor out = Tensor::zeros({m, n});
  for (std::size_t j = 0; j < n; ++j) {
    double mu = 0.0;
    for (std::size_t i = 0; i < m; ++i) mu += X(i, j);
    mu /= static_cast<double>(m);
    double var = 0.0;
    for (std::size_t i = 0; i < m; ++i) var += (X(i, j) - mu) * (X(i, j) - mu);
    var /= static_cast<double>(m);
    inv_std[j] = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < m; ++i) {
      xhat[i * n + j] = (X(i, j) - mu) * inv_std[j];
      out(i, j) = G.values()[j] * xhat[i * n + j] + Bt.values()[j];
    }
  }
  return tape.record(std::move(out), {x.id, gamma.id, beta.id},
                     [px = x.id, pg = gamma.id, pb = beta.id, m, n, xhat = std::move(xhat),
                      inv_std = std::move(inv_std)](Tape& t, std::size_t self) {
                       const auto& g = t.upstream(self);
                       const auto& Gv = t.node(pg).value.values();
                       if (t.node(pg).needs_grad || t.node(pb).needs_grad) {
                         std::vector<double> dg(n, 0.0), db(n, 0.0);
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t j = 0; j < n; ++j) {
                             dg[j] += g[i * n + j] * xhat[i * n + j];
                             db[j] += g[i * n + j];
                           }
                         if (t.node(pg).needs_grad) {
                           auto& gg = t.grad_buffer(pg);
                           for (std::size_t j = 0; j < n; ++j) gg[j] += dg[j];
                         }
                         if (t.node(pb).needs_grad) {
                           auto& gb = t.grad_buffer(pb);
                           for (std::size_t j = 0; j < n; ++j) gb[j] += db[j];
                         }
                       }
                       if (!t.node(px).needs_grad) return;
                       auto& gx = t.grad_buffer(px);
                       const double inv_m = 1.0 / static_cast<double>(m);
                       for (std::size_t j = 0; j < n; ++j) {
                         double sum_g = 0.0, sum_gx = 0.0;
                         for (std::size_t i = 0; i < m; ++i) {
                           const double gh = g[i * n + j] * Gv[j];
                           sum_g += gh;
                           sum_gx += gh * xhat[i * n + j];
                         }
                         for (std::size_t i = 0; i < m; ++i) {
                           const double gh = g[i * n + j] * Gv[j];
                           gx[i * n + j] += inv_std[j] * (gh - inv_m * sum_g - xhat[i * n + j] * inv_m * sum_gx);
                         }
                       }
                     });
}

namespace detail {

inline void check_temperature(double temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw std::invalid_argument("temperature must be a positive finite value, got " + std::to_string(temperature));
  }
}

/// Row-wise log-softmax of logits / temperature, computed with max subtraction.
/// Entries equal to -inf map to -inf.
inline std::vector<double> log_softmax_rows(std::span<const double> logits, std::size_t rows, std::size_t cols,
                                            double temperature) {
  std::vector<double> out(rows * cols);
  for (std::size_t i = 0; i < rows; ++i) {
    const double* row = logits.data() + i * cols;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < cols; ++j) mx = std::max(mx, row[j] / temperature);
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += std::exp(row[j] / temperature - mx);
    // Shift before subtracting log(s) so large logits keep their low bits.
    const double log_s = std::log(s);
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] = (row[j] / temperature - mx) - log_s;
  }
  return out;
}

/// Row-wise softmax of logits / temperature, normalised by the row sum.
/// Entries equal to -inf map to exactly 0.
inline std::vector<double> softmax_rows(std::span<const double> logits, std::size_t rows, std::size_t cols,
                                        double temperature) {
  std::vector<double> out(rows * cols);
  for (std::size_t i = 0; i < rows; ++i) {
    const double* row = logits.data() + i * cols;
    double* o = out.data() + i * cols;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < cols; ++j) mx = std::max(mx, row[j] / temperature);
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += o[j] = std::exp(row[j] / temperature - mx);
    for (std::size_t j = 0; j < cols; ++j) o[j] /= s;
  }
  return out;
}

}  // namespace detail

/// Row-wise softmax(logits / T).
inline Var softmax_with_temperature(Var logits, double temperature) {
  detail::check_temperature(temperature);
  auto& tape = *logits.tape;
  const auto& L = tape.value(logits);
  detail::require_matrix(L, "softmax_with_temperature");
  const std::size_t m = L.rows(), n = L.cols();
  Tensor out({m, n}, detail::softmax_rows(L.values(), m, n, temperature));
  return tape.record(std::move(out), {logits.id}, [pl = logits.id, m, n, temperature](Tape& t, std::size_t self) {
    const auto& g = t.upstream(self);
    const auto& y = t.node(self).value.values();
    auto& gl = t.grad_buffer(pl);
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * y[i * n + j];
      for (std::size_t j = 0; j < n; ++j) gl[i * n + j] += y[i * n + j] * (g[i * n + j] - dot) / temperature;
    }
  });
}

inline Var log_softmax(Var logits) {
  auto& tape = *logits.tape;
  const auto& L = tape.value(logits);
  detail::require_matrix(L, "log_softmax");
  const std::size_t m = L.rows(), n = L.cols();
  Tensor out({m, n}, detail::log_softmax_rows(L.values(), m, n, 1.0));
  return tape.record(std::move(out), {logits.id}, [pl = logits.id, m, n](Tape& t, std::size_t self) {
    const auto& g = t.upstream(self);
    const auto& y = t.node(self).value.values();
    auto& gl = t.grad_buffer(pl);
    for (std::size_t i = 0; i < m; ++i) {
      double gs = 0.0;
      for (std::size_t j = 0; j < n; ++j) gs += g[i * n + j];
      for (std::size_t j = 0; j < n; ++j) gl[i * n + j] += g[i * n + j] - std::exp(y[i * n + j]) * gs;
    }
  });
}

/// Per-row KL(softmax(logits / T) || uniform) as an m x 1 column, using
/// 0 log 0 = 0. The gradient is taken through the logits directly so that
/// rows with underflowed probabilities stay finite.
inline Var kl_to_uniform_rows(Var logits, double temperature) {
  detail::check_temperature(temperature);
  auto& tape = *logits.tape;
  const auto& L = tape.value(logits);
  detail::require_matrix(L, "kl_to_uniform_rows");
  const std::size_t m = L.rows(), n = L.cols();
  auto ls = detail::log_softmax_rows(L.values(), m, n, temperature);
  Tensor out = Tensor::zeros({m, 1});
  std::vector<double> neg_entropy(m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double p = std::exp(ls[i * n + j]);
      if (p > 0.0) s += p * ls[i * n + j];
    }
    neg_entropy[i] = s;
    out.values()[i] = s + std::log(static_cast<double>(n));
  }
  return tape.record(std::move(out), {logits.id},
                     [pl = logits.id, m, n, temperature, ls = std::move(ls),
                      neg_entropy = std::move(neg_entropy)](Tape& t, std::size_t self) {
                       const auto& g = t.upstream(self);
                       auto& gl = t.grad_buffer(pl);
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t j = 0; j < n; ++j) {
                           const double p = std::exp(ls[i * n + j]);
                           if (p > 0.0) gl[i * n + j] += g[i] * p * (ls[i * n + j] - neg_entropy[i]) / temperature;
                         }
                     });
}

}  // namespace sae
