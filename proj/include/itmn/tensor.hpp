#pragma once

// Dense tensors with reverse-mode automatic differentiation over a small,
// fixed operator set. Values are immutable after construction except for
// gradient accumulation. Summation order is fixed (row-major) everywhere so
// results are bit-reproducible across runs and thread counts.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace itmn {

inline std::size_t shape_numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

inline std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

template <typename T>
struct Node {
  std::vector<int> shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until touched by backward
  bool requires_grad = false;
  std::function<void()> backprop;  // set only on op outputs

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

// Lightweight shared handle to a Node. Copies alias the same storage.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::vector<int> shape, std::vector<T> data, bool requires_grad = false) {
    if (shape_numel(shape) != data.size())
      throw std::invalid_argument("tensor: shape " + shape_str(shape) + " does not match data length " +
                                  std::to_string(data.size()));
    node_ = std::make_shared<Node<T>>();
    node_->shape = std::move(shape);
    node_->value = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
    std::vector<T> d(shape_numel(shape), T(0));
    return Tensor(std::move(shape), std::move(d), requires_grad);
  }
  static Tensor full(std::vector<int> shape, T v, bool requires_grad = false) {
    std::vector<T> d(shape_numel(shape), v);
    return Tensor(std::move(shape), std::move(d), requires_grad);
  }
  static Tensor scalar(T v, bool requires_grad = false) { return Tensor({1}, {v}, requires_grad); }

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  std::size_t numel() const { return node_->value.size(); }

  const std::vector<T>& data() const { return node_->value; }
  std::vector<T>& data() { return node_->value; }
  const std::vector<T>& grad() const {
    node_->ensure_grad();
    return node_->grad;
  }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool r) { node_->requires_grad = r; }
  void zero_grad() { node_->grad.assign(node_->value.size(), T(0)); }

  T item() const {
    if (numel() != 1) throw std::logic_error("item(): tensor has " + std::to_string(numel()) + " elements");
    return node_->value[0];
  }

  std::shared_ptr<Node<T>>& node() { return node_; }
  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Records op outputs in execution order; backward replays adjoints in
// reverse. Activating a Tape is a scoped, per-thread operation so disjoint
// tapes on different threads never interact.
template <typename T>
class Tape {
 public:
  Tape() : prev_(active_) { active_ = this; }
  ~Tape() {
    clear();
    active_ = prev_;
  }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() { return active_; }

  void record(std::shared_ptr<Node<T>> n) { order_.push_back(std::move(n)); }
  std::size_t size() const { return order_.size(); }

  // A node's backprop closure captures a shared_ptr to the node itself, so
  // the closures must be dropped explicitly or the nodes cycle and leak.
  void clear() {
    for (auto& n : order_) n->backprop = nullptr;
    order_.clear();
  }

  // Seeds dLoss/dLoss = 1 and propagates through recorded ops in reverse.
  // Intermediate grads are reset per call; leaf grads accumulate across
  // calls until zero_grad.
  void backward(const Tensor<T>& loss) {
    if (loss.numel() != 1) throw std::logic_error("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    for (auto& n : order_) n->grad.assign(n->value.size(), T(0));
    loss.node()->ensure_grad();
    loss.node()->grad[0] += T(1);
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
      Node<T>& n = **it;
      if (n.backprop && !n.grad.empty()) n.backprop();
    }
  }

 private:
  std::vector<std::shared_ptr<Node<T>>> order_;
  Tape* prev_;
  static thread_local Tape* active_;
};

template <typename T>
thread_local Tape<T>* Tape<T>::active_ = nullptr;

namespace detail {

// Only two broadcast forms exist: equal shapes and scalar-vs-tensor.
template <typename T>
void check_broadcast(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.numel() == 1 || b.numel() == 1 || a.shape() == b.shape()) return;
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " vs " +
                              shape_str(b.shape()));
}

template <typename T>
bool track(const Tensor<T>& a) {
  return Tape<T>::active() != nullptr && a.requires_grad();
}

template <typename T>
void finish_op(Tensor<T>& out, std::function<void()> backprop) {
  out.node()->requires_grad = true;
  out.node()->backprop = std::move(backprop);
  Tape<T>::active()->record(out.node());
}

// Generic elementwise binary op. DA/DB give the local derivative of the
// output w.r.t. each operand, evaluated per element.
template <typename T, typename F, typename DA, typename DB>
Tensor<T> binary_ew(const Tensor<T>& a, const Tensor<T>& b, const char* name, F f, DA da, DB db) {
  check_broadcast(a, b, name);
  const bool a_scalar = a.numel() == 1 && b.numel() != 1;
  const bool b_scalar = b.numel() == 1 && a.numel() != 1;
  const std::vector<int>& shape = a_scalar ? b.shape() : a.shape();
  const std::size_t n = a_scalar ? b.numel() : a.numel();
  std::vector<T> v(n);
  const T* ap = a.data().data();
  const T* bp = b.data().data();
  for (std::size_t i = 0; i < n; ++i) v[i] = f(ap[a_scalar ? 0 : i], bp[b_scalar ? 0 : i]);
  Tensor<T> out(shape, std::move(v));
  if (track(a) || track(b)) {
    auto an = a.node(), bn = b.node(), on = out.node();
    finish_op(out, [an, bn, on, a_scalar, b_scalar, da, db] {
      const std::size_t n = on->value.size();
      const T* g = on->grad.data();
      if (an->requires_grad) {
        an->ensure_grad();
        if (a_scalar) {
          T acc = 0;
          for (std::size_t i = 0; i < n; ++i) acc += da(an->value[0], bn->value[b_scalar ? 0 : i]) * g[i];
          an->grad[0] += acc;
        } else {
          for (std::size_t i = 0; i < n; ++i)
            an->grad[i] += da(an->value[i], bn->value[b_scalar ? 0 : i]) * g[i];
        }
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        if (b_scalar) {
          T acc = 0;
          for (std::size_t i = 0; i < n; ++i) acc += db(an->value[a_scalar ? 0 : i], bn->value[0]) * g[i];
          bn->grad[0] += acc;
        } else {
          for (std::size_t i = 0; i < n; ++i)
            bn->grad[i] += db(an->value[a_scalar ? 0 : i], bn->value[i]) * g[i];
        }
      }
    });
  }
  return out;
}

template <typename T, typename F, typename D>
Tensor<T> unary_ew(const Tensor<T>& a, F f, D d) {
  const std::size_t n = a.numel();
  std::vector<T> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = f(a.data()[i]);
  Tensor<T> out(a.shape(), std::move(v));
  if (track(a)) {
    auto an = a.node(), on = out.node();
    finish_op(out, [an, on, d] {
      an->ensure_grad();
      const std::size_t n = on->value.size();
      for (std::size_t i = 0; i < n; ++i) an->grad[i] += d(an->value[i], on->value[i]) * on->grad[i];
    });
  }
  return out;
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_ew(
      a, b, "add", [](T x, T y) { return x + y; }, [](T, T) { return T(1); }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_ew(
      a, b, "sub", [](T x, T y) { return x - y; }, [](T, T) { return T(1); }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_ew(
      a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y) { return y; }, [](T x, T) { return x; });
}

// Elementwise max; ties route the full gradient to the first operand.
template <typename T>
Tensor<T> emax(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_ew(
      a, b, "max", [](T x, T y) { return x >= y ? x : y; }, [](T x, T y) { return x >= y ? T(1) : T(0); },
      [](T x, T y) { return x >= y ? T(0) : T(1); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return detail::unary_ew(a, [](T x) { return x > T(0) ? x : T(0); },
                          [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return detail::unary_ew(a, [](T x) { return T(1) / (T(1) + std::exp(-x)); },
                          [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> tlog(const Tensor<T>& a) {
  return detail::unary_ew(a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Tensor<T> texp(const Tensor<T>& a) {
  return detail::unary_ew(a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
  return detail::unary_ew(a, [](T x) { return -x; }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  return detail::unary_ew(a, [c](T x) { return c * x; }, [c](T, T) { return c; });
}

// a[m,k] x b[k,n] -> [m,n]; adjoints g.b^T and a^T.g.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw std::invalid_argument("matmul: rank-2 tensors required, got " + shape_str(a.shape()) + " and " +
                                shape_str(b.shape()));
  const int m = a.shape()[0], k = a.shape()[1], k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2)
    throw std::invalid_argument("matmul: inner extents differ: " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  std::vector<T> v(static_cast<std::size_t>(m) * n, T(0));
  const T* ap = a.data().data();
  const T* bp = b.data().data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      T acc = 0;
      for (int t = 0; t < k; ++t) acc += ap[i * k + t] * bp[t * n + j];
      v[static_cast<std::size_t>(i) * n + j] = acc;
    }
  Tensor<T> out({m, n}, std::move(v));
  if (detail::track(a) || detail::track(b)) {
    auto an = a.node(), bn = b.node(), on = out.node();
    detail::finish_op(out, [an, bn, on, m, k, n] {
      const T* g = on->grad.data();
      if (an->requires_grad) {
        an->ensure_grad();
        for (int i = 0; i < m; ++i)
          for (int t = 0; t < k; ++t) {
            T acc = 0;
            for (int j = 0; j < n; ++j) acc += g[i * n + j] * bn->value[t * n + j];
            an->grad[static_cast<std::size_t>(i) * k + t] += acc;
          }
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (int t = 0; t < k; ++t)
          for (int j = 0; j < n; ++j) {
            T acc = 0;
            for (int i = 0; i < m; ++i) acc += an->value[i * k + t] * g[i * n + j];
            bn->grad[static_cast<std::size_t>(t) * n + j] += acc;
          }
      }
    });
  }
  return out;
}

namespace detail {

inline void check_axes(const std::vector<int>& axes, int rank) {
  for (int ax : axes)
    if (ax < 0 || ax >= rank)
      throw std::invalid_argument("reduce: axis " + std::to_string(ax) + " invalid for rank " +
                                  std::to_string(rank));
}

// Maps every input linear index to its output linear index after removing
// the reduced axes. Output shape is the remaining dims, or [1] if none.
struct ReducePlan {
  std::vector<int> out_shape;
  std::vector<std::size_t> out_index;  // per input element
  std::size_t group;                   // elements reduced per output cell
};

inline ReducePlan reduce_plan(const std::vector<int>& shape, std::vector<int> axes) {
  std::sort(axes.begin(), axes.end());
  axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
  check_axes(axes, static_cast<int>(shape.size()));
  const int rank = static_cast<int>(shape.size());
  std::vector<bool> reduced(rank, false);
  for (int ax : axes) reduced[ax] = true;
  ReducePlan plan;
  plan.group = 1;
  for (int d = 0; d < rank; ++d) {
    if (reduced[d])
      plan.group *= static_cast<std::size_t>(shape[d]);
    else
      plan.out_shape.push_back(shape[d]);
  }
  if (plan.out_shape.empty()) plan.out_shape = {1};
  std::vector<std::size_t> out_strides(rank, 0);
  std::size_t s = 1;
  for (int d = rank - 1; d >= 0; --d) {
    if (!reduced[d]) {
      out_strides[d] = s;
      s *= static_cast<std::size_t>(shape[d]);
    }
  }
  const std::size_t n = shape_numel(shape);
  plan.out_index.resize(n);
  std::vector<int> idx(rank, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t oi = 0;
    for (int d = 0; d < rank; ++d) oi += out_strides[d] * static_cast<std::size_t>(idx[d]);
    plan.out_index[i] = oi;
    for (int d = rank - 1; d >= 0; --d) {
      if (++idx[d] < shape[d]) break;
      idx[d] = 0;
    }
  }
  return plan;
}

}  // namespace detail

template <typename T>
Tensor<T> reduce_sum(const Tensor<T>& a, const std::vector<int>& axes) {
  auto plan = detail::reduce_plan(a.shape(), axes);
  std::vector<T> v(shape_numel(plan.out_shape), T(0));
  for (std::size_t i = 0; i < a.numel(); ++i) v[plan.out_index[i]] += a.data()[i];
  Tensor<T> out(plan.out_shape, std::move(v));
  if (detail::track(a)) {
    auto an = a.node(), on = out.node();
    auto oi = std::make_shared<std::vector<std::size_t>>(std::move(plan.out_index));
    detail::finish_op(out, [an, on, oi] {
      an->ensure_grad();
      for (std::size_t i = 0; i < an->value.size(); ++i) an->grad[i] += on->grad[(*oi)[i]];
    });
  }
  return out;
}

template <typename T>
Tensor<T> reduce_mean(const Tensor<T>& a, const std::vector<int>& axes) {
  auto plan = detail::reduce_plan(a.shape(), axes);
  const T inv = T(1) / static_cast<T>(plan.group);
  std::vector<T> v(shape_numel(plan.out_shape), T(0));
  for (std::size_t i = 0; i < a.numel(); ++i) v[plan.out_index[i]] += a.data()[i];
  for (T& x : v) x *= inv;
  Tensor<T> out(plan.out_shape, std::move(v));
  if (detail::track(a)) {
    auto an = a.node(), on = out.node();
    auto oi = std::make_shared<std::vector<std::size_t>>(std::move(plan.out_index));
    detail::finish_op(out, [an, on, oi, inv] {
      an->ensure_grad();
      for (std::size_t i = 0; i < an->value.size(); ++i) an->grad[i] += inv * on->grad[(*oi)[i]];
    });
  }
  return out;
}

// Max reduction; the adjoint routes to the first maximizer in row-major
// input order.
template <typename T>
Tensor<T> reduce_max(const Tensor<T>& a, const std::vector<int>& axes) {
  auto plan = detail::reduce_plan(a.shape(), axes);
  const std::size_t on_ = shape_numel(plan.out_shape);
  std::vector<T> v(on_);
  std::vector<std::size_t> arg(on_, SIZE_MAX);
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const std::size_t oi = plan.out_index[i];
    if (arg[oi] == SIZE_MAX || a.data()[i] > v[oi]) {
      v[oi] = a.data()[i];
      arg[oi] = i;
    }
  }
  Tensor<T> out(plan.out_shape, std::move(v));
  if (detail::track(a)) {
    auto an = a.node(), on = out.node();
    auto argp = std::make_shared<std::vector<std::size_t>>(std::move(arg));
    detail::finish_op(out, [an, on, argp] {
      an->ensure_grad();
      for (std::size_t oi = 0; oi < on->value.size(); ++oi) an->grad[(*argp)[oi]] += on->grad[oi];
    });
  }
  return out;
}

// Concatenation along axis 0 (rows) or axis 1 (channels of NCHW tensors).
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const int rank = parts[0].rank();
  if (axis != 0 && axis != 1) throw std::invalid_argument("concat: only axes 0 and 1 supported");
  if (axis == 1 && rank != 4) throw std::invalid_argument("concat: axis 1 requires rank-4 tensors");
  std::vector<int> shape = parts[0].shape();
  for (std::size_t p = 1; p < parts.size(); ++p) {
    const auto& s = parts[p].shape();
    if (static_cast<int>(s.size()) != rank) throw std::invalid_argument("concat: rank mismatch");
    for (int d = 0; d < rank; ++d)
      if (d != axis && s[d] != shape[d])
        throw std::invalid_argument("concat: shape mismatch " + shape_str(shape) + " vs " + shape_str(s));
  }
  int total = 0;
  for (const auto& p : parts) total += p.shape()[axis];
  shape[axis] = total;

  std::size_t inner = 1;  // elements per slice along the concat axis
  for (int d = axis + 1; d < rank; ++d) inner *= static_cast<std::size_t>(shape[d]);
  std::size_t outer = 1;
  for (int d = 0; d < axis; ++d) outer *= static_cast<std::size_t>(shape[d]);

  std::vector<T> v(shape_numel(shape));
  std::size_t offset_slices = 0;
  std::vector<std::size_t> part_offsets(parts.size());
  for (std::size_t p = 0; p < parts.size(); ++p) {
    part_offsets[p] = offset_slices;
    const std::size_t pslices = static_cast<std::size_t>(parts[p].shape()[axis]);
    for (std::size_t o = 0; o < outer; ++o) {
      const T* src = parts[p].data().data() + o * pslices * inner;
      T* dst = v.data() + (o * static_cast<std::size_t>(total) + offset_slices) * inner;
      std::copy(src, src + pslices * inner, dst);
    }
    offset_slices += pslices;
  }
  Tensor<T> out(shape, std::move(v));
  bool any = false;
  for (const auto& p : parts) any = any || detail::track(p);
  if (any) {
    std::vector<std::shared_ptr<Node<T>>> pnodes;
    for (const auto& p : parts) pnodes.push_back(p.node());
    auto on = out.node();
    const std::size_t total_sz = static_cast<std::size_t>(total);
    detail::finish_op(out, [pnodes, on, part_offsets, inner, outer, total_sz] {
      for (std::size_t p = 0; p < pnodes.size(); ++p) {
        auto& pn = *pnodes[p];
        if (!pn.requires_grad) continue;
        pn.ensure_grad();
        const std::size_t pslices = pn.value.size() / (outer * inner);
        for (std::size_t o = 0; o < outer; ++o) {
          const T* g = on->grad.data() + (o * total_sz + part_offsets[p]) * inner;
          T* dst = pn.grad.data() + o * pslices * inner;
          for (std::size_t i = 0; i < pslices * inner; ++i) dst[i] += g[i];
        }
      }
    });
  }
  return out;
}

// Selects rows of a rank-2 tensor; adjoint scatter-adds.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& a, const std::vector<int>& rows) {
  if (a.rank() != 2) throw std::invalid_argument("gather_rows: rank-2 tensor required");
  const int k = a.shape()[1];
  std::vector<T> v(rows.size() * static_cast<std::size_t>(k));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0 || rows[r] >= a.shape()[0]) throw std::invalid_argument("gather_rows: row out of range");
    std::copy_n(a.data().data() + static_cast<std::size_t>(rows[r]) * k, k, v.data() + r * k);
  }
  Tensor<T> out({static_cast<int>(rows.size()), k}, std::move(v));
  if (detail::track(a)) {
    auto an = a.node(), on = out.node();
    auto rowsp = std::make_shared<std::vector<int>>(rows);
    detail::finish_op(out, [an, on, rowsp, k] {
      an->ensure_grad();
      for (std::size_t r = 0; r < rowsp->size(); ++r)
        for (int j = 0; j < k; ++j)
          an->grad[static_cast<std::size_t>((*rowsp)[r]) * k + j] += on->grad[r * k + j];
    });
  }
  return out;
}

// Extracts a single element as a [1] tensor.
template <typename T>
Tensor<T> take(const Tensor<T>& a, std::size_t index) {
  if (index >= a.numel()) throw std::invalid_argument("take: index out of range");
  Tensor<T> out({1}, {a.data()[index]});
  if (detail::track(a)) {
    auto an = a.node(), on = out.node();
    detail::finish_op(out, [an, on, index] {
      an->ensure_grad();
      an->grad[index] += on->grad[0];
    });
  }
  return out;
}

}  // namespace itmn
