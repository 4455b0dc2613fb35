#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "mipseg/common.hpp"

namespace mipseg {

// Dense shape-tagged array participating in reverse-mode differentiation.
// Values are immutable after creation; only the gradient accumulator and
// optimizer-applied parameter updates mutate a tensor. T is float for
// training and double for gradient-check tests.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape) {
    return make(std::move(shape), {}, false, true);
  }

  static Tensor full(Shape shape, T value) {
    std::vector<T> v(static_cast<size_t>(numel(shape)), value);
    return make(std::move(shape), std::move(v), false);
  }

  static Tensor from(Shape shape, std::vector<T> values) {
    return make(std::move(shape), std::move(values), false);
  }

  static Tensor scalar(T value) { return from({1}, {value}); }

  // Trainable leaf: carries a same-shape gradient accumulator.
  static Tensor param(Shape shape, std::vector<T> values) {
    return make(std::move(shape), std::move(values), true);
  }

  static Tensor make(Shape shape, std::vector<T> values, bool requires_grad,
                     bool zero_fill = false) {
    const size_t n = static_cast<size_t>(numel(shape));
    if (zero_fill) values.assign(n, T(0));
    if (values.size() != n)
      throw ShapeError("tensor " + shape_str(shape) + " expects " +
                       std::to_string(n) + " values, got " +
                       std::to_string(values.size()));
    auto p = std::make_shared<Payload>();
    p->shape = std::move(shape);
    p->values = std::move(values);
    p->requires_grad = requires_grad;
    if (requires_grad) p->grad.assign(n, T(0));
    Tensor t;
    t.p_ = std::move(p);
    return t;
  }

  bool defined() const { return p_ != nullptr; }
  const Shape& shape() const { return p_->shape; }
  int rank() const { return static_cast<int>(p_->shape.size()); }
  long long size() const { return static_cast<long long>(p_->values.size()); }
  bool requires_grad() const { return p_->requires_grad; }

  const std::vector<T>& values() const { return p_->values; }
  const T* data() const { return p_->values.data(); }
  T item() const {
    if (size() != 1) throw UsageError("item() on non-scalar tensor " + shape_str(shape()));
    return p_->values[0];
  }

  std::vector<T>& grad() const {
    if (!p_->requires_grad) throw UsageError("grad() on tensor without gradient");
    return p_->grad;
  }
  void zero_grad() const {
    if (p_->requires_grad) p_->grad.assign(p_->grad.size(), T(0));
  }

  // Reserved for the optimizer and checkpoint loading; everything else
  // treats values as frozen.
  std::vector<T>& mutable_values() const { return p_->values; }

  bool same_payload(const Tensor& other) const { return p_ == other.p_; }

 private:
  struct Payload {
    Shape shape;
    std::vector<T> values;
    std::vector<T> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Payload> p_;
};

// Tape of primitive applications for one differentiable computation.
// Recording is single-threaded; backward replays the tape once in reverse,
// accumulating (+=) into every requires_grad tensor it reaches.
template <typename T>
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  class Scope {
   public:
    explicit Scope(Graph* g) : prev_(tl_current()) { tl_current() = g; }
    ~Scope() { tl_current() = prev_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Graph* prev_;
  };

  Scope activate() { return Scope(this); }

  static Graph* current() { return tl_current(); }
  static bool recording() { return tl_current() != nullptr; }

  void record(const char* op, std::function<void()> backward_fn) {
    nodes_.push_back(Node{op, std::move(backward_fn)});
  }

  size_t size() const { return nodes_.size(); }

  void backward(const Tensor<T>& loss) {
    if (!loss.defined() || loss.size() != 1)
      throw UsageError("backward requires a scalar loss tensor");
    if (!loss.requires_grad())
      throw UsageError("backward on a tensor not produced through recorded primitives");
    if (consumed_) throw UsageError("backward already ran on this graph");
    consumed_ = true;
    loss.grad()[0] += T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->fn();
  }

 private:
  struct Node {
    const char* op;
    std::function<void()> fn;
  };

  static Graph*& tl_current() {
    thread_local Graph* cur = nullptr;
    return cur;
  }

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// Suppresses recording for a region: the stop-gradient barrier used by the
// training path that must not update the shared 2D network.
template <typename T>
class NoGradScope {
 public:
  NoGradScope() : scope_(nullptr) {}

 private:
  typename Graph<T>::Scope scope_;
};

namespace detail {

template <typename T>
inline bool track(std::initializer_list<const Tensor<T>*> inputs) {
  if (!Graph<T>::recording()) return false;
  for (const Tensor<T>* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

template <typename T, class Fn>
inline void record(const char* op, bool tracked, Fn&& fn) {
  if (tracked) Graph<T>::current()->record(op, std::forward<Fn>(fn));
}

template <typename T>
inline void check_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": operand shapes differ, " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <typename T>
inline void check_scalar_param(const char* op, const Tensor<T>& t, const char* which) {
  if (t.size() != 1)
    throw ShapeError(std::string(op) + ": " + which + " must be a single scalar, got " +
                     shape_str(t.shape()));
}

}  // namespace detail

// ---- elementwise primitives ----

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape("add", a, b);
  std::vector<T> out(a.values());
  const T* bv = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const bool tracked = detail::track<T>({&a, &b});
  Tensor<T> y = Tensor<T>::make(a.shape(), std::move(out), tracked);
  detail::record<T>("add", tracked, [a, b, y] {
    const auto& gy = y.grad();
    if (a.requires_grad()) {
      auto& ga = a.grad();
      for (size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
    }
    if (b.requires_grad()) {
      auto& gb = b.grad();
      for (size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i];
    }
  });
  return y;
}

template <typename T>
Tensor<T> add_n(const std::vector<Tensor<T>>& xs) {
  require(!xs.empty(), "add_n needs at least one tensor");
  for (const auto& x : xs) detail::check_same_shape("add_n", xs[0], x);
  std::vector<T> out(xs[0].values());
  for (size_t k = 1; k < xs.size(); ++k) {
    const T* v = xs[k].data();
    for (size_t i = 0; i < out.size(); ++i) out[i] += v[i];
  }
  bool tracked = false;
  if (Graph<T>::recording())
    for (const auto& x : xs)
      if (x.requires_grad()) tracked = true;
  Tensor<T> y = Tensor<T>::make(xs[0].shape(), std::move(out), tracked);
  detail::record<T>("add_n", tracked, [xs, y] {
    const auto& gy = y.grad();
    for (const auto& x : xs) {
      if (!x.requires_grad()) continue;
      auto& gx = x.grad();
      for (size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
    }
  });
  return y;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape("sub", a, b);
  std::vector<T> out(a.values());
  const T* bv = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const bool tracked = detail::track<T>({&a, &b});
  Tensor<T> y = Tensor<T>::make(a.shape(), std::move(out), tracked);
  detail::record<T>("sub", tracked, [a, b, y] {
    const auto& gy = y.grad();
    if (a.requires_grad()) {
      auto& ga = a.grad();
      for (size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
    }
    if (b.requires_grad()) {
      auto& gb = b.grad();
      for (size_t i = 0; i < gy.size(); ++i) gb[i] -= gy[i];
    }
  });
  return y;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape("mul", a, b);
  std::vector<T> out(a.values());
  const T* bv = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const bool tracked = detail::track<T>({&a, &b});
  Tensor<T> y = Tensor<T>::make(a.shape(), std::move(out), tracked);
  detail::record<T>("mul", tracked, [a, b, y] {
    const auto& gy = y.grad();
    if (a.requires_grad()) {
      auto& ga = a.grad();
      const T* bv2 = b.data();
      for (size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * bv2[i];
    }
    if (b.requires_grad()) {
      auto& gb = b.grad();
      const T* av = a.data();
      for (size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * av[i];
    }
  });
  return y;
}

template <typename T>
Tensor<T> divide(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape("divide", a, b);
  std::vector<T> out(a.values());
  const T* bv = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] /= bv[i];
  const bool tracked = detail::track<T>({&a, &b});
  Tensor<T> y = Tensor<T>::make(a.shape(), std::move(out), tracked);
  detail::record<T>("divide", tracked, [a, b, y] {
    const auto& gy = y.grad();
    const T* bv2 = b.data();
    const T* yv = y.data();
    if (a.requires_grad()) {
      auto& ga = a.grad();
      for (size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] / bv2[i];
    }
    if (b.requires_grad()) {
      auto& gb = b.grad();
      for (size_t i = 0; i < gy.size(); ++i) gb[i] -= gy[i] * yv[i] / bv2[i];
    }
  });
  return y;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T k) {
  std::vector<T> out(x.values());
  for (auto& v : out) v *= k;
  const bool tracked = detail::track<T>({&x});
  Tensor<T> y = Tensor<T>::make(x.shape(), std::move(out), tracked);
  detail::record<T>("scale", tracked, [x, y, k] {
    const auto& gy = y.grad();
    auto& gx = x.grad();
    for (size_t i = 0; i < gy.size(); ++i) gx[i] += k * gy[i];
  });
  return y;
}

template <typename T>
Tensor<T> add_constant(const Tensor<T>& x, T k) {
  std::vector<T> out(x.values());
  for (auto& v : out) v += k;
  const bool tracked = detail::track<T>({&x});
  Tensor<T> y = Tensor<T>::make(x.shape(), std::move(out), tracked);
  detail::record<T>("add_constant", tracked, [x, y] {
    const auto& gy = y.grad();
    auto& gx = x.grad();
    for (size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
  });
  return y;
}

template <typename T>
Tensor<T> reduce_sum(const Tensor<T>& x) {
  T s = 0;
  for (T v : x.values()) s += v;
  const bool tracked = detail::track<T>({&x});
  Tensor<T> y = Tensor<T>::make({1}, {s}, tracked);
  detail::record<T>("reduce_sum", tracked, [x, y] {
    const T g = y.grad()[0];
    auto& gx = x.grad();
    for (size_t i = 0; i < gx.size(); ++i) gx[i] += g;
  });
  return y;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.values());
  for (auto& v : out) v = v > T(0) ? v : T(0);
  const bool tracked = detail::track<T>({&x});
  Tensor<T> y = Tensor<T>::make(x.shape(), std::move(out), tracked);
  detail::record<T>("relu", tracked, [x, y] {
    const auto& gy = y.grad();
    const T* xv = x.data();
    auto& gx = x.grad();
    for (size_t i = 0; i < gy.size(); ++i)
      if (xv[i] > T(0)) gx[i] += gy[i];
  });
  return y;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  std::vector<T> out(x.values());
  for (auto& v : out) {
    // Split by sign to avoid overflow in exp.
    if (v >= T(0)) {
      const T e = std::exp(-v);
      v = T(1) / (T(1) + e);
    } else {
      const T e = std::exp(v);
      v = e / (T(1) + e);
    }
  }
  const bool tracked = detail::track<T>({&x});
  Tensor<T> y = Tensor<T>::make(x.shape(), std::move(out), tracked);
  detail::record<T>("sigmoid", tracked, [x, y] {
    const auto& gy = y.grad();
    const T* yv = y.data();
    auto& gx = x.grad();
    for (size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * yv[i] * (T(1) - yv[i]);
  });
  return y;
}

// Elementwise gain*x + shift with trainable scalar gain and shift.
template <typename T>
Tensor<T> affine_scalar(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& shift) {
  detail::check_scalar_param("affine_scalar", gain, "gain");
  detail::check_scalar_param("affine_scalar", shift, "shift");
  const T g = gain.data()[0];
  const T s = shift.data()[0];
  std::vector<T> out(x.values());
  for (auto& v : out) v = g * v + s;
  const bool tracked = detail::track<T>({&x, &gain, &shift});
  Tensor<T> y = Tensor<T>::make(x.shape(), std::move(out), tracked);
  detail::record<T>("affine_scalar", tracked, [x, gain, shift, y, g] {
    const auto& gy = y.grad();
    if (x.requires_grad()) {
      auto& gx = x.grad();
      for (size_t i = 0; i < gy.size(); ++i) gx[i] += g * gy[i];
    }
    if (gain.requires_grad()) {
      const T* xv = x.data();
      T acc = 0;
      for (size_t i = 0; i < gy.size(); ++i) acc += gy[i] * xv[i];
      gain.grad()[0] += acc;
    }
    if (shift.requires_grad()) {
      T acc = 0;
      for (size_t i = 0; i < gy.size(); ++i) acc += gy[i];
      shift.grad()[0] += acc;
    }
  });
  return y;
}

// Copies values and detaches from the tape; gradients never flow past it.
template <typename T>
Tensor<T> stop_gradient(const Tensor<T>& x) {
  return Tensor<T>::from(x.shape(), x.values());
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.size())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(shape));
  const bool tracked = detail::track<T>({&x});
  Tensor<T> y = Tensor<T>::make(std::move(shape), x.values(), tracked);
  detail::record<T>("reshape", tracked, [x, y] {
    const auto& gy = y.grad();
    auto& gx = x.grad();
    for (size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
  });
  return y;
}

}  // namespace mipseg
