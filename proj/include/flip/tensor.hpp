#ifndef FLIP_TENSOR_HPP_
#define FLIP_TENSOR_HPP_

// Dense row-major tensors with tape-free reverse-mode differentiation.
//
// Every op result records its parents and a backward closure. Nodes carry a
// monotonically increasing creation sequence number; since a node is always
// created after its inputs, sorting reachable nodes by descending sequence
// number yields an exact reverse topological order for the backward sweep.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <atomic>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "flip/errors.hpp"

namespace flip {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

inline std::atomic<std::uint64_t>& node_counter() {
  static std::atomic<std::uint64_t> counter{0};
  return counter;
}

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

template <typename Scalar>
struct Node {
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  Shape shape;
  Array data;
  Array grad;
  bool requires_grad = false;
  std::uint64_t seq = node_counter().fetch_add(1, std::memory_order_relaxed);
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return !backward; }
};

}  // namespace detail

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode_flag(); }

template <typename Scalar>
class Tensor {
 public:
  using Node = detail::Node<Scalar>;
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<Matrix>;
  using ConstMatrixMap = Eigen::Map<const Matrix>;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto node = std::make_shared<Node>();
    node->data = Array::Zero(shape_size(shape));
    node->shape = std::move(shape);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor full(Shape shape, Scalar value, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    t.data().setConstant(value);
    return t;
  }

  static Tensor from(Shape shape, Array values, bool requires_grad = false) {
    if (values.size() != shape_size(shape)) {
      throw DimensionError("tensor data length " + std::to_string(values.size()) +
                           " does not match shape " + shape_string(shape));
    }
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor from(Shape shape, const std::vector<Scalar>& values, bool requires_grad = false) {
    Array a = Eigen::Map<const Array>(values.data(), static_cast<Index>(values.size()));
    return from(std::move(shape), std::move(a), requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  Index dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t ndim() const { return node_->shape.size(); }
  Index size() const { return node_->data.size(); }
  /// Last axis length; every leading axis folds into rows().
  Index cols() const { return node_->shape.empty() ? 1 : node_->shape.back(); }
  Index rows() const { return cols() == 0 ? 0 : size() / cols(); }

  Array& data() { return node_->data; }
  const Array& data() const { return node_->data; }
  Array& grad() { return node_->grad; }
  const Array& grad() const { return node_->grad; }
  bool has_grad() const { return node_->grad.size() == node_->data.size() && node_->requires_grad; }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool value) { node_->requires_grad = value; }
  Scalar item() const { return node_->data(0); }
  Scalar at(Index i) const { return node_->data(i); }

  MatrixMap matrix() { return MatrixMap(node_->data.data(), rows(), cols()); }
  ConstMatrixMap matrix() const { return ConstMatrixMap(node_->data.data(), rows(), cols()); }
  MatrixMap grad_matrix() { return MatrixMap(node_->grad.data(), rows(), cols()); }
  ConstMatrixMap grad_matrix() const { return ConstMatrixMap(node_->grad.data(), rows(), cols()); }

  void zero_grad() { node_->grad = Array::Zero(node_->data.size()); }

  /// Copy of the values with no graph history.
  Tensor detach() const { return from(shape(), data(), false); }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

namespace detail {

template <typename Scalar>
using NodePtr = std::shared_ptr<Node<Scalar>>;

/// Builds an op result; parents and the backward rule are kept only when a
/// parent is tracked and recording is enabled.
template <typename Scalar>
Tensor<Scalar> make_result(Shape shape, typename Node<Scalar>::Array data,
                           std::vector<NodePtr<Scalar>> parents,
                           std::function<void(Node<Scalar>&)> backward) {
  auto node = std::make_shared<Node<Scalar>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  const bool track = grad_enabled() &&
                     std::any_of(parents.begin(), parents.end(),
                                 [](const NodePtr<Scalar>& p) { return p->requires_grad; });
  if (track) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::move(backward);
  }
  return Tensor<Scalar>(std::move(node));
}

template <typename Scalar>
auto as_matrix(typename Node<Scalar>::Array& a, Index rows, Index cols) {
  return typename Tensor<Scalar>::MatrixMap(a.data(), rows, cols);
}

template <typename Scalar>
auto as_matrix(const typename Node<Scalar>::Array& a, Index rows, Index cols) {
  return typename Tensor<Scalar>::ConstMatrixMap(a.data(), rows, cols);
}

inline void require(bool ok, const std::string& message) {
  if (!ok) throw DimensionError(message);
}

}  // namespace detail

/// Reverse sweep from a scalar. Leaf gradients accumulate across calls;
/// interior gradients are reset for each sweep.
template <typename Scalar>
void backward(const Tensor<Scalar>& root) {
  using NodeT = detail::Node<Scalar>;
  if (root.size() != 1) {
    throw DimensionError("backward requires a scalar root, got shape " + shape_string(root.shape()));
  }
  if (!root.requires_grad()) throw DimensionError("backward from a tensor that is not tracked");

  std::vector<NodeT*> order;
  std::unordered_set<NodeT*> seen;
  std::vector<NodeT*> stack{root.node().get()};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    NodeT* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  std::sort(order.begin(), order.end(), [](const NodeT* a, const NodeT* b) { return a->seq > b->seq; });

  for (NodeT* n : order) {
    if (!n->is_leaf() || n->grad.size() != n->data.size()) {
      n->grad = NodeT::Array::Zero(n->data.size());
    }
  }
  root.node()->grad(0) += Scalar(1);
  for (NodeT* n : order) {
    if (n->backward) n->backward(*n);
  }
}

// ---------------------------------------------------------------------------
// Linear algebra

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require(a.ndim() == 2 && b.ndim() == 2 && a.dim(1) == b.dim(0),
                  "matmul: incompatible shapes " + shape_string(a.shape()) + " and " +
                      shape_string(b.shape()));
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  typename Tensor<Scalar>::Array out(m * n);
  detail::as_matrix<Scalar>(out, m, n).noalias() = a.matrix() * b.matrix();
  return detail::make_result<Scalar>(
      {m, n}, std::move(out), {a.node(), b.node()}, [m, k, n](detail::Node<Scalar>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        auto dc = detail::as_matrix<Scalar>(std::as_const(self.grad), m, n);
        if (pa.requires_grad) {
          detail::as_matrix<Scalar>(pa.grad, m, k).noalias() +=
              dc * detail::as_matrix<Scalar>(std::as_const(pb.data), k, n).transpose();
        }
        if (pb.requires_grad) {
          detail::as_matrix<Scalar>(pb.grad, k, n).noalias() +=
              detail::as_matrix<Scalar>(std::as_const(pa.data), m, k).transpose() * dc;
        }
      });
}

template <typename Scalar>
Tensor<Scalar> transpose(const Tensor<Scalar>& a) {
  detail::require(a.ndim() == 2, "transpose: expected 2-D tensor, got " + shape_string(a.shape()));
  const Index m = a.dim(0), n = a.dim(1);
  typename Tensor<Scalar>::Array out(m * n);
  detail::as_matrix<Scalar>(out, n, m) = a.matrix().transpose();
  return detail::make_result<Scalar>({n, m}, std::move(out), {a.node()}, [m, n](detail::Node<Scalar>& self) {
    auto& p = *self.parents[0];
    detail::as_matrix<Scalar>(p.grad, m, n) +=
        detail::as_matrix<Scalar>(std::as_const(self.grad), n, m).transpose();
  });
}

/// Same values under a new shape with equal element count.
template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& a, Shape shape) {
  detail::require(shape_size(shape) == a.size(),
                  "reshape: cannot view " + shape_string(a.shape()) + " as " + shape_string(shape));
  return detail::make_result<Scalar>(std::move(shape), a.data(), {a.node()},
                                     [](detail::Node<Scalar>& self) { self.parents[0]->grad += self.grad; });
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require(a.shape() == b.shape(),
                  "add: shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  return detail::make_result<Scalar>(a.shape(), a.data() + b.data(), {a.node(), b.node()},
                                     [](detail::Node<Scalar>& self) {
                                       for (auto& p : self.parents) {
                                         if (p->requires_grad) p->grad += self.grad;
                                       }
                                     });
}

/// x + y where y is repeated over the leading rows of x: bias vectors
/// (y of shape [d]) and per-position tables (y of shape [L,d] over x [B*L,d]).
template <typename Scalar>
Tensor<Scalar> add_tiled(const Tensor<Scalar>& x, const Tensor<Scalar>& y) {
  detail::require(y.cols() == x.cols() && y.size() > 0 && x.size() % y.size() == 0,
                  "add_tiled: cannot tile " + shape_string(y.shape()) + " over " + shape_string(x.shape()));
  const Index block = y.size();
  const Index reps = x.size() / block;
  typename Tensor<Scalar>::Array out = x.data();
  for (Index r = 0; r < reps; ++r) out.segment(r * block, block) += y.data();
  return detail::make_result<Scalar>(x.shape(), std::move(out), {x.node(), y.node()},
                                     [block, reps](detail::Node<Scalar>& self) {
                                       auto& px = *self.parents[0];
                                       auto& py = *self.parents[1];
                                       if (px.requires_grad) px.grad += self.grad;
                                       if (py.requires_grad) {
                                         for (Index r = 0; r < reps; ++r) {
                                           py.grad += self.grad.segment(r * block, block);
                                         }
                                       }
                                     });
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& x, Scalar factor) {
  return detail::make_result<Scalar>(x.shape(), x.data() * factor, {x.node()},
                                     [factor](detail::Node<Scalar>& self) {
                                       self.parents[0]->grad += factor * self.grad;
                                     });
}

/// x scaled by a tracked one-element tensor.
template <typename Scalar>
Tensor<Scalar> mul_scalar(const Tensor<Scalar>& x, const Tensor<Scalar>& s) {
  detail::require(s.size() == 1, "mul_scalar: scale must have one element, got " + shape_string(s.shape()));
  return detail::make_result<Scalar>(x.shape(), x.data() * s.item(), {x.node(), s.node()},
                                     [](detail::Node<Scalar>& self) {
                                       auto& px = *self.parents[0];
                                       auto& ps = *self.parents[1];
                                       if (px.requires_grad) px.grad += ps.data(0) * self.grad;
                                       if (ps.requires_grad) ps.grad(0) += (self.grad * px.data).sum();
                                     });
}

template <typename Scalar>
Tensor<Scalar> exp(const Tensor<Scalar>& x) {
  typename Tensor<Scalar>::Array out = x.data().exp();
  return detail::make_result<Scalar>(x.shape(), std::move(out), {x.node()}, [](detail::Node<Scalar>& self) {
    self.parents[0]->grad += self.grad * self.data;
  });
}

/// min(x, ceiling); gradient is zero where the ceiling is active.
template <typename Scalar>
Tensor<Scalar> clamp_max(const Tensor<Scalar>& x, Scalar ceiling) {
  typename Tensor<Scalar>::Array out = x.data().min(ceiling);
  return detail::make_result<Scalar>(x.shape(), std::move(out), {x.node()},
                                     [ceiling](detail::Node<Scalar>& self) {
                                       auto& p = *self.parents[0];
                                       p.grad += (p.data < ceiling).select(self.grad, Scalar(0));
                                     });
}

/// Exact erf-based GELU.
template <typename Scalar>
Tensor<Scalar> gelu(const Tensor<Scalar>& x) {
  const Scalar inv_sqrt2 = Scalar(0.70710678118654752440);
  typename Tensor<Scalar>::Array cdf =
      (x.data() * inv_sqrt2).unaryExpr([](Scalar v) { return Scalar(0.5) * (Scalar(1) + std::erf(v)); });
  typename Tensor<Scalar>::Array out = x.data() * cdf;
  return detail::make_result<Scalar>(
      x.shape(), std::move(out), {x.node()}, [cdf = std::move(cdf)](detail::Node<Scalar>& self) {
        auto& p = *self.parents[0];
        const Scalar inv_sqrt_2pi = Scalar(0.39894228040143267794);
        p.grad += self.grad * (cdf + p.data * inv_sqrt_2pi * (Scalar(-0.5) * p.data.square()).exp());
      });
}

// ---------------------------------------------------------------------------
// Row-wise normalization

inline constexpr double kLayerNormEps = 1e-6;

/// Normalizes every row over the last axis, then applies gain and bias.
template <typename Scalar>
Tensor<Scalar> layer_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gain, const Tensor<Scalar>& bias,
                          Scalar eps = Scalar(kLayerNormEps)) {
  const Index d = x.cols();
  if (d == 0) throw DimensionError("layer_norm: empty normalization axis");
  detail::require(gain.size() == d && bias.size() == d,
                  "layer_norm: gain/bias " + shape_string(gain.shape()) + "/" + shape_string(bias.shape()) +
                      " do not match input " + shape_string(x.shape()));
  const Index n = x.rows();
  using Matrix = typename Tensor<Scalar>::Matrix;
  using Array = typename Tensor<Scalar>::Array;
  auto in = x.matrix();
  Matrix xhat(n, d);
  Array rstd(n);
  for (Index r = 0; r < n; ++r) {
    const Scalar mean = in.row(r).mean();
    const Scalar var = (in.row(r).array() - mean).square().mean();
    rstd(r) = Scalar(1) / std::sqrt(var + eps);
    xhat.row(r) = (in.row(r).array() - mean) * rstd(r);
  }
  Array out(n * d);
  auto om = detail::as_matrix<Scalar>(out, n, d);
  om = xhat;
  om.array().rowwise() *= gain.data().transpose();
  om.array().rowwise() += bias.data().transpose();
  return detail::make_result<Scalar>(
      x.shape(), std::move(out), {x.node(), gain.node(), bias.node()},
      [n, d, xhat = std::move(xhat), rstd = std::move(rstd)](detail::Node<Scalar>& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        auto& pb = *self.parents[2];
        auto dy = detail::as_matrix<Scalar>(std::as_const(self.grad), n, d);
        if (pg.requires_grad) pg.grad += (dy.array() * xhat.array()).colwise().sum().transpose();
        if (pb.requires_grad) pb.grad += dy.array().colwise().sum().transpose();
        if (px.requires_grad) {
          auto dx = detail::as_matrix<Scalar>(px.grad, n, d);
          for (Index r = 0; r < n; ++r) {
            auto dxhat = (dy.row(r).array() * pg.data.transpose()).eval();
            const Scalar mean_d = dxhat.mean();
            const Scalar mean_dx = (dxhat * xhat.row(r).array()).mean();
            dx.row(r).array() += rstd(r) * (dxhat - mean_d - xhat.row(r).array() * mean_dx);
          }
        }
      });
}

/// Softmax over the last axis of every row.
template <typename Scalar>
Tensor<Scalar> softmax_rows(const Tensor<Scalar>& x) {
  const Index n = x.rows(), d = x.cols();
  typename Tensor<Scalar>::Array out(x.size());
  auto om = detail::as_matrix<Scalar>(out, n, d);
  auto in = x.matrix();
  for (Index r = 0; r < n; ++r) {
    om.row(r) = (in.row(r).array() - in.row(r).maxCoeff()).exp().matrix();
    om.row(r) /= om.row(r).sum();
  }
  return detail::make_result<Scalar>(x.shape(), std::move(out), {x.node()}, [n, d](detail::Node<Scalar>& self) {
    auto y = detail::as_matrix<Scalar>(std::as_const(self.data), n, d);
    auto dy = detail::as_matrix<Scalar>(std::as_const(self.grad), n, d);
    auto dx = detail::as_matrix<Scalar>(self.parents[0]->grad, n, d);
    for (Index r = 0; r < n; ++r) {
      const Scalar dot = y.row(r).dot(dy.row(r));
      dx.row(r).array() += y.row(r).array() * (dy.row(r).array() - dot);
    }
  });
}

/// x / sqrt(|x|^2 + eps^2) per row; the eps guard keeps zero rows finite.
template <typename Scalar>
Tensor<Scalar> l2_normalize_rows(const Tensor<Scalar>& x, Scalar eps = Scalar(1e-8)) {
  const Index n = x.rows(), d = x.cols();
  typename Tensor<Scalar>::Array inv_norm(n);
  typename Tensor<Scalar>::Array out(x.size());
  auto in = x.matrix();
  auto om = detail::as_matrix<Scalar>(out, n, d);
  for (Index r = 0; r < n; ++r) {
    inv_norm(r) = Scalar(1) / std::sqrt(in.row(r).squaredNorm() + eps * eps);
    om.row(r) = in.row(r) * inv_norm(r);
  }
  return detail::make_result<Scalar>(
      x.shape(), std::move(out), {x.node()}, [n, d, inv_norm = std::move(inv_norm)](detail::Node<Scalar>& self) {
        auto y = detail::as_matrix<Scalar>(std::as_const(self.data), n, d);
        auto dy = detail::as_matrix<Scalar>(std::as_const(self.grad), n, d);
        auto dx = detail::as_matrix<Scalar>(self.parents[0]->grad, n, d);
        for (Index r = 0; r < n; ++r) {
          dx.row(r) += inv_norm(r) * (dy.row(r) - y.row(r) * y.row(r).dot(dy.row(r)));
        }
      });
}

// ---------------------------------------------------------------------------
// Reductions and pooling

/// Mean of a 2-D tensor along `axis` (0 averages rows, 1 averages columns).
template <typename Scalar>
Tensor<Scalar> mean_over_axis(const Tensor<Scalar>& x, int axis) {
  detail::require(x.ndim() == 2 && (axis == 0 || axis == 1),
                  "mean_over_axis: expected 2-D input and axis 0/1, got " + shape_string(x.shape()));
  const Index m = x.dim(0), n = x.dim(1);
  if ((axis == 0 ? m : n) == 0) throw DimensionError("mean_over_axis: empty reduction axis");
  typename Tensor<Scalar>::Array out;
  if (axis == 0) {
    out = x.matrix().colwise().mean().transpose().array();
  } else {
    out = x.matrix().rowwise().mean().array();
  }
  Shape shape{axis == 0 ? n : m};
  return detail::make_result<Scalar>(shape, std::move(out), {x.node()}, [m, n, axis](detail::Node<Scalar>& self) {
    auto dx = detail::as_matrix<Scalar>(self.parents[0]->grad, m, n);
    if (axis == 0) {
      dx.rowwise() += (self.grad / Scalar(m)).matrix().transpose();
    } else {
      dx.colwise() += (self.grad / Scalar(n)).matrix();
    }
  });
}

/// Per-group average over the rows flagged in `include`. Rows of x are laid
/// out as `groups` consecutive blocks of equal length.
template <typename Scalar>
Tensor<Scalar> masked_mean_pool(const Tensor<Scalar>& x, Index groups, const std::vector<std::uint8_t>& include) {
  const Index rows = x.rows(), d = x.cols();
  detail::require(groups > 0 && rows % groups == 0 && static_cast<Index>(include.size()) == rows,
                  "masked_mean_pool: " + shape_string(x.shape()) + " is not " + std::to_string(groups) +
                      " equal groups matching the include mask");
  const Index len = rows / groups;
  typename Tensor<Scalar>::Array weight(rows);
  for (Index g = 0; g < groups; ++g) {
    Index count = 0;
    for (Index i = 0; i < len; ++i) count += include[g * len + i] ? 1 : 0;
    if (count == 0) throw IndexError("masked_mean_pool: group " + std::to_string(g) + " has no rows to pool");
    for (Index i = 0; i < len; ++i) weight(g * len + i) = include[g * len + i] ? Scalar(1) / Scalar(count) : Scalar(0);
  }
  typename Tensor<Scalar>::Array out = Tensor<Scalar>::Array::Zero(groups * d);
  auto om = detail::as_matrix<Scalar>(out, groups, d);
  auto in = x.matrix();
  for (Index g = 0; g < groups; ++g) {
    for (Index i = 0; i < len; ++i) {
      const Index r = g * len + i;
      if (include[r]) om.row(g) += weight(r) * in.row(r);
    }
  }
  return detail::make_result<Scalar>(
      {groups, d}, std::move(out), {x.node()},
      [groups, len, d, weight = std::move(weight)](detail::Node<Scalar>& self) {
        auto dy = detail::as_matrix<Scalar>(std::as_const(self.grad), groups, d);
        auto dx = detail::as_matrix<Scalar>(self.parents[0]->grad, groups * len, d);
        for (Index r = 0; r < groups * len; ++r) {
          if (weight(r) != Scalar(0)) dx.row(r) += weight(r) * dy.row(r / len);
        }
      });
}

/// Sum of x weighted elementwise by a constant array of the same length.
template <typename Scalar>
Tensor<Scalar> weighted_sum(const Tensor<Scalar>& x, typename Tensor<Scalar>::Array weights) {
  detail::require(weights.size() == x.size(), "weighted_sum: weight length mismatch for " + shape_string(x.shape()));
  typename Tensor<Scalar>::Array out(1);
  out(0) = (x.data() * weights).sum();
  return detail::make_result<Scalar>({1}, std::move(out), {x.node()},
                                     [weights = std::move(weights)](detail::Node<Scalar>& self) {
                                       self.parents[0]->grad += self.grad(0) * weights;
                                     });
}

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& x) {
  return weighted_sum(x, Tensor<Scalar>::Array::Ones(x.size()));
}

// ---------------------------------------------------------------------------
// Indexing

/// Rows of x selected by distinct indices, in the given order.
template <typename Scalar>
Tensor<Scalar> gather_rows(const Tensor<Scalar>& x, const std::vector<Index>& idx) {
  const Index n = x.rows(), d = x.cols();
  std::vector<std::uint8_t> used(static_cast<std::size_t>(n), 0);
  for (Index i : idx) {
    if (i < 0 || i >= n) {
      throw IndexError("gather_rows: index " + std::to_string(i) + " out of range [0," + std::to_string(n) + ")");
    }
    if (used[static_cast<std::size_t>(i)]++) throw IndexError("gather_rows: duplicate index " + std::to_string(i));
  }
  const Index v = static_cast<Index>(idx.size());
  typename Tensor<Scalar>::Array out(v * d);
  auto om = detail::as_matrix<Scalar>(out, v, d);
  auto in = x.matrix();
  for (Index r = 0; r < v; ++r) om.row(r) = in.row(idx[r]);
  return detail::make_result<Scalar>({v, d}, std::move(out), {x.node()}, [n, v, d, idx](detail::Node<Scalar>& self) {
    auto dy = detail::as_matrix<Scalar>(std::as_const(self.grad), v, d);
    auto dx = detail::as_matrix<Scalar>(self.parents[0]->grad, n, d);
    for (Index r = 0; r < v; ++r) dx.row(idx[r]) += dy.row(r);
  });
}

/// Adjoint of gather_rows: row i of x lands at row idx[i] of an [n,d] result.
template <typename Scalar>
Tensor<Scalar> scatter_rows(const Tensor<Scalar>& x, const std::vector<Index>& idx, Index n) {
  const Index v = x.rows(), d = x.cols();
  detail::require(static_cast<Index>(idx.size()) == v,
                  "scatter_rows: " + std::to_string(idx.size()) + " indices for " + shape_string(x.shape()));
  std::vector<std::uint8_t> used(static_cast<std::size_t>(std::max<Index>(n, 0)), 0);
  for (Index i : idx) {
    if (i < 0 || i >= n) {
      throw IndexError("scatter_rows: index " + std::to_string(i) + " out of range [0," + std::to_string(n) + ")");
    }
    if (used[static_cast<std::size_t>(i)]++) throw IndexError("scatter_rows: duplicate index " + std::to_string(i));
  }
  typename Tensor<Scalar>::Array out = Tensor<Scalar>::Array::Zero(n * d);
  auto om = detail::as_matrix<Scalar>(out, n, d);
  auto in = x.matrix();
  for (Index r = 0; r < v; ++r) om.row(idx[r]) = in.row(r);
  return detail::make_result<Scalar>({n, d}, std::move(out), {x.node()}, [n, v, d, idx](detail::Node<Scalar>& self) {
    auto dy = detail::as_matrix<Scalar>(std::as_const(self.grad), n, d);
    auto dx = detail::as_matrix<Scalar>(self.parents[0]->grad, v, d);
    for (Index r = 0; r < v; ++r) dx.row(r) += dy.row(idx[r]);
  });
}

/// Table lookup; ids may repeat and gradients scatter-add.
template <typename Scalar>
Tensor<Scalar> embedding(const Tensor<Scalar>& table, const std::vector<Index>& ids) {
  const Index vocab = table.rows(), d = table.cols();
  for (Index i : ids) {
    if (i < 0 || i >= vocab) {
      throw IndexError("embedding: id " + std::to_string(i) + " out of range [0," + std::to_string(vocab) + ")");
    }
  }
  const Index n = static_cast<Index>(ids.size());
  typename Tensor<Scalar>::Array out(n * d);
  auto om = detail::as_matrix<Scalar>(out, n, d);
  auto in = table.matrix();
  for (Index r = 0; r < n; ++r) om.row(r) = in.row(ids[r]);
  return detail::make_result<Scalar>({n, d}, std::move(out), {table.node()},
                                     [vocab, n, d, ids](detail::Node<Scalar>& self) {
                                       auto dy = detail::as_matrix<Scalar>(std::as_const(self.grad), n, d);
                                       auto dt = detail::as_matrix<Scalar>(self.parents[0]->grad, vocab, d);
                                       for (Index r = 0; r < n; ++r) dt.row(ids[r]) += dy.row(r);
                                     });
}

// ---------------------------------------------------------------------------
// Attention

/// Optional sink for attention probabilities, one [L,L] block per (group, head).
template <typename Scalar>
struct AttentionProbe {
  std::vector<typename Tensor<Scalar>::Matrix> probabilities;
};

/// Multi-head scaled dot-product self-attention over packed projections.
///
/// `qkv` is [groups*L, 3*width] with query, key and value blocks side by side;
/// heads split each block into contiguous slices. `key_valid` (empty, or one
/// flag per row) excludes keys; a group with no valid keys attends to all.
template <typename Scalar>
Tensor<Scalar> attention(const Tensor<Scalar>& qkv, Index groups, Index heads,
                         const std::vector<std::uint8_t>& key_valid = {}, AttentionProbe<Scalar>* probe = nullptr) {
  using Matrix = typename Tensor<Scalar>::Matrix;
  using Stride = Eigen::OuterStride<>;
  using ConstBlock = Eigen::Map<const Matrix, 0, Stride>;
  using Block = Eigen::Map<Matrix, 0, Stride>;

  const Index rows = qkv.rows();
  detail::require(qkv.cols() % 3 == 0 && groups > 0 && rows % groups == 0,
                  "attention: packed projections " + shape_string(qkv.shape()) + " do not split into " +
                      std::to_string(groups) + " groups of q/k/v");
  const Index width = qkv.cols() / 3;
  detail::require(heads > 0 && width % heads == 0,
                  "attention: width " + std::to_string(width) + " not divisible by " + std::to_string(heads) + " heads");
  detail::require(key_valid.empty() || static_cast<Index>(key_valid.size()) == rows,
                  "attention: key mask length does not match rows");
  const Index len = rows / groups;
  const Index hd = width / heads;
  const Index stride = 3 * width;
  const Scalar inv_sqrt = Scalar(1) / std::sqrt(Scalar(hd));

  // Additive key bias: 0 for usable keys, -inf otherwise.
  std::vector<Eigen::Array<Scalar, 1, Eigen::Dynamic>> key_bias(static_cast<std::size_t>(groups));
  for (Index g = 0; g < groups; ++g) {
    auto& bias = key_bias[static_cast<std::size_t>(g)];
    bias = Eigen::Array<Scalar, 1, Eigen::Dynamic>::Zero(len);
    if (key_valid.empty()) continue;
    bool any = false;
    for (Index j = 0; j < len; ++j) any = any || key_valid[g * len + j];
    if (!any) continue;
    for (Index j = 0; j < len; ++j) {
      if (!key_valid[g * len + j]) bias(j) = -std::numeric_limits<Scalar>::infinity();
    }
  }

  const Scalar* in = qkv.data().data();
  typename Tensor<Scalar>::Array out(rows * width);
  std::vector<Matrix> probs(static_cast<std::size_t>(groups * heads));
  for (Index g = 0; g < groups; ++g) {
    for (Index h = 0; h < heads; ++h) {
      const Scalar* base = in + g * len * stride + h * hd;
      ConstBlock q(base, len, hd, Stride(stride));
      ConstBlock k(base + width, len, hd, Stride(stride));
      ConstBlock v(base + 2 * width, len, hd, Stride(stride));
      Matrix& p = probs[static_cast<std::size_t>(g * heads + h)];
      p.noalias() = (q * k.transpose()) * inv_sqrt;
      p.array().rowwise() += key_bias[static_cast<std::size_t>(g)];
      for (Index r = 0; r < len; ++r) {
        p.row(r) = (p.row(r).array() - p.row(r).maxCoeff()).exp().matrix();
        p.row(r) /= p.row(r).sum();
      }
      Block o(out.data() + g * len * width + h * hd, len, hd, Stride(width));
      o.noalias() = p * v;
    }
  }
  if (probe) probe->probabilities = probs;

  return detail::make_result<Scalar>(
      {rows, width}, std::move(out), {qkv.node()},
      [groups, heads, len, hd, width, stride, inv_sqrt, probs = std::move(probs)](detail::Node<Scalar>& self) {
        auto& parent = *self.parents[0];
        const Scalar* x = parent.data.data();
        Scalar* dx = parent.grad.data();
        const Scalar* dout = self.grad.data();
        Matrix dp, ds;
        for (Index g = 0; g < groups; ++g) {
          for (Index h = 0; h < heads; ++h) {
            const Index offset = g * len * stride + h * hd;
            ConstBlock q(x + offset, len, hd, Stride(stride));
            ConstBlock k(x + offset + width, len, hd, Stride(stride));
            ConstBlock v(x + offset + 2 * width, len, hd, Stride(stride));
            Block dq(dx + offset, len, hd, Stride(stride));
            Block dk(dx + offset + width, len, hd, Stride(stride));
            Block dv(dx + offset + 2 * width, len, hd, Stride(stride));
            ConstBlock d_o(dout + g * len * width + h * hd, len, hd, Stride(width));
            const Matrix& p = probs[static_cast<std::size_t>(g * heads + h)];
            dv.noalias() += p.transpose() * d_o;
            dp.noalias() = d_o * v.transpose();
            ds = p.array() * (dp.array().colwise() - (dp.array() * p.array()).rowwise().sum());
            ds *= inv_sqrt;
            dq.noalias() += ds * k;
            dk.noalias() += ds.transpose() * q;
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Losses

/// Mean over rows of -log softmax(logits)[target].
template <typename Scalar>
Tensor<Scalar> cross_entropy_rows(const Tensor<Scalar>& logits, const std::vector<Index>& targets) {
  const Index n = logits.rows(), c = logits.cols();
  detail::require(static_cast<Index>(targets.size()) == n && n > 0,
                  "cross_entropy_rows: " + std::to_string(targets.size()) + " targets for logits " +
                      shape_string(logits.shape()));
  for (Index t : targets) {
    if (t < 0 || t >= c) throw IndexError("cross_entropy_rows: target " + std::to_string(t) + " out of range");
  }
  typename Tensor<Scalar>::Matrix prob(n, c);
  auto in = logits.matrix();
  Scalar total = 0;
  for (Index r = 0; r < n; ++r) {
    const Scalar mx = in.row(r).maxCoeff();
    prob.row(r) = (in.row(r).array() - mx).exp().matrix();
    const Scalar z = prob.row(r).sum();
    prob.row(r) /= z;
    total += std::log(z) + mx - in(r, targets[r]);
  }
  typename Tensor<Scalar>::Array out(1);
  out(0) = total / Scalar(n);
  return detail::make_result<Scalar>(
      {1}, std::move(out), {logits.node()},
      [n, c, targets, prob = std::move(prob)](detail::Node<Scalar>& self) {
        auto dx = detail::as_matrix<Scalar>(self.parents[0]->grad, n, c);
        const Scalar g = self.grad(0) / Scalar(n);
        dx += g * prob;
        for (Index r = 0; r < n; ++r) dx(r, targets[r]) -= g;
      });
}

/// Mean squared error against a constant target of identical length.
template <typename Scalar>
Tensor<Scalar> mse(const Tensor<Scalar>& pred, const typename Tensor<Scalar>::Array& target) {
  detail::require(target.size() == pred.size() && pred.size() > 0,
                  "mse: target length does not match prediction " + shape_string(pred.shape()));
  typename Tensor<Scalar>::Array diff = pred.data() - target;
  typename Tensor<Scalar>::Array out(1);
  out(0) = diff.square().mean();
  return detail::make_result<Scalar>({1}, std::move(out), {pred.node()},
                                     [diff = std::move(diff)](detail::Node<Scalar>& self) {
                                       const Scalar g = Scalar(2) * self.grad(0) / Scalar(diff.size());
                                       self.parents[0]->grad += g * diff;
                                     });
}

}  // namespace flip

#endif  // FLIP_TENSOR_HPP_
