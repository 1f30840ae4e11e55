// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace spade {

/// Thrown when tensor shapes are incompatible with an operation.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when a layer or run configuration is inconsistent.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when an API is called out of contract (e.g. backward on a non-scalar).
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Thrown by checked mode when a NaN or Inf is produced.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  constexpr std::size_t numel() const {
    return static_cast<std::size_t>(n) * static_cast<std::size_t>(c) *
           static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  }
  constexpr std::size_t plane() const { return static_cast<std::size_t>(h) * static_cast<std::size_t>(w); }
  constexpr std::size_t sample() const { return static_cast<std::size_t>(c) * plane(); }

  friend constexpr bool operator==(const Shape&, const Shape&) = default;

  std::string str() const {
    std::ostringstream os;
    os << '[' << n << ',' << c << ',' << h << ',' << w << ']';
    return os.str();
  }
};

namespace detail {

inline std::uint64_t next_node_id() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

inline bool& checked_mode_flag() {
  thread_local bool enabled = false;
  return enabled;
}

/// One record of the define-by-run graph. Interior nodes own a backward
/// closure that reads `grad` and accumulates into their parents.
template <class T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  std::uint64_t id = next_node_id();
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return !backward; }

  std::vector<T>& ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    return grad;
  }
};

}  // namespace detail

/// Disables graph recording for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Enables NaN/Inf checks on every op output for its lifetime.
class CheckedModeGuard {
 public:
  CheckedModeGuard() : previous_(detail::checked_mode_flag()) { detail::checked_mode_flag() = true; }
  ~CheckedModeGuard() { detail::checked_mode_flag() = previous_; }
  CheckedModeGuard(const CheckedModeGuard&) = delete;
  CheckedModeGuard& operator=(const CheckedModeGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// Dense N x C x H x W array, row-major over (n, c, y, x), with optional
/// participation in a reverse-mode gradient graph.
///
/// Tensor is a shared handle: copies alias the same storage. Use `clone()`
/// or `detach()` for an independent copy.
template <class T>
class Tensor {
 public:
  using value_type = T;
  using NodeT = detail::Node<T>;
  using BackwardFn = std::function<void(NodeT&)>;

  Tensor() = default;

  explicit Tensor(Shape shape, bool requires_grad = false) : node_(std::make_shared<NodeT>()) {
    check_shape(shape);
    node_->shape = shape;
    node_->data.assign(shape.numel(), T(0));
    node_->requires_grad = requires_grad;
  }

  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false) : node_(std::make_shared<NodeT>()) {
    check_shape(shape);
    if (values.size() != shape.numel()) {
      throw DimensionError("tensor data length " + std::to_string(values.size()) + " does not match shape " +
                           shape.str());
    }
    node_->shape = shape;
    node_->data = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    Tensor t(shape, requires_grad);
    std::fill(t.node_->data.begin(), t.node_->data.end(), value);
    return t;
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return Tensor(Shape{1, 1, 1, 1}, std::vector<T>{value}, requires_grad);
  }

  /// Builds the result of a differentiable op. When recording is enabled and
  /// any input requires a gradient, the result is an interior graph node
  /// whose `backward` pushes its gradient into the inputs.
  static Tensor from_op(const char* op, Shape shape, std::vector<T> values, std::initializer_list<Tensor> inputs,
                        BackwardFn backward) {
    return from_op(op, shape, std::move(values), std::vector<Tensor>(inputs), std::move(backward));
  }

  static Tensor from_op(const char* op, Shape shape, std::vector<T> values, const std::vector<Tensor>& inputs,
                        BackwardFn backward) {
    Tensor out(shape, std::move(values));
    out.node_->op = op;
    if (detail::checked_mode_flag()) out.check_finite(op);
    if (!grad_enabled()) return out;
    bool any = false;
    for (const auto& in : inputs) any = any || (in.defined() && in.requires_grad());
    if (!any) return out;
    out.node_->requires_grad = true;
    for (const auto& in : inputs) {
      if (in.defined()) out.node_->parents.push_back(in.node_);
    }
    out.node_->backward = std::move(backward);
    return out;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node().shape; }
  std::size_t numel() const { return node().data.size(); }

  std::span<T> data() { return node().data; }
  std::span<const T> data() const { return node().data; }
  std::vector<T>& values() { return node().data; }
  const std::vector<T>& values() const { return node().data; }

  T& at(int n, int c, int y, int x) { return node().data[offset(n, c, y, x)]; }
  T at(int n, int c, int y, int x) const { return node().data[offset(n, c, y, x)]; }

  std::size_t offset(int n, int c, int y, int x) const {
    const Shape& s = node().shape;
    return ((static_cast<std::size_t>(n) * s.c + c) * s.h + y) * s.w + x;
  }

  T item() const {
    if (numel() != 1) throw UsageError("item() on tensor of shape " + shape().str());
    return node().data[0];
  }

  bool requires_grad() const { return node().requires_grad; }

  void set_requires_grad(bool on) {
    if (!node().is_leaf()) throw UsageError("requires_grad can only be toggled on leaf tensors");
    node().requires_grad = on;
  }

  bool is_leaf() const { return node().is_leaf(); }
  bool has_grad() const { return node().grad.size() == node().data.size() && !node().data.empty(); }
  std::span<const T> grad() const { return node().grad; }
  std::span<T> mutable_grad() { return node().ensure_grad(); }

  /// Explicit zeroing; gradients otherwise accumulate across backward calls.
  void zero_grad() {
    auto& g = node().grad;
    std::fill(g.begin(), g.end(), T(0));
  }

  /// Independent leaf copy of the values; cut from any graph.
  Tensor detach() const {
    Tensor out(shape(), node().data);
    return out;
  }

  Tensor clone() const { return detach(); }

  std::uint64_t id() const { return node().id; }
  const char* op() const { return node().op; }

  /// Reverse-mode sweep from this scalar. Interior nodes are visited in
  /// exact reverse construction order; leaf gradients accumulate.
  void backward() const {
    if (numel() != 1) throw UsageError("backward() requires a scalar loss, got shape " + shape().str());
    if (!requires_grad()) return;

    auto order = graph();
    std::reverse(order.begin(), order.end());
    for (NodeT* n : order) {
      if (!n->is_leaf()) n->grad.assign(n->data.size(), T(0));
    }
    node_->ensure_grad()[0] += T(1);
    for (NodeT* n : order) {
      if (n->is_leaf()) continue;
      n->backward(*n);
      n->grad.clear();
      n->grad.shrink_to_fit();
    }
  }

  /// Nodes reachable from this tensor that require gradients, in
  /// construction order (ascending id).
  std::vector<NodeT*> graph() const {
    std::vector<NodeT*> nodes;
    std::unordered_set<const NodeT*> seen;
    std::vector<NodeT*> stack{node_.get()};
    while (!stack.empty()) {
      NodeT* n = stack.back();
      stack.pop_back();
      if (!n->requires_grad || !seen.insert(n).second) continue;
      nodes.push_back(n);
      for (const auto& p : n->parents) stack.push_back(p.get());
    }
    std::sort(nodes.begin(), nodes.end(), [](const NodeT* a, const NodeT* b) { return a->id < b->id; });
    return nodes;
  }

  void check_finite(const std::string& name) const {
    for (const T v : node().data) {
      if (!std::isfinite(v)) throw NonFiniteError("non-finite value in tensor '" + name + "'");
    }
  }

  bool all_finite() const {
    return std::all_of(node().data.begin(), node().data.end(), [](T v) { return std::isfinite(v); });
  }

  NodeT& node() {
    if (!node_) throw UsageError("access to undefined tensor");
    return *node_;
  }
  const NodeT& node() const {
    if (!node_) throw UsageError("access to undefined tensor");
    return *node_;
  }

  /// Converts values to another precision as a fresh leaf.
  template <class U>
  Tensor<U> cast(bool requires_grad = false) const {
    std::vector<U> v(node().data.begin(), node().data.end());
    return Tensor<U>(shape(), std::move(v), requires_grad);
  }

 private:
  static void check_shape(const Shape& s) {
    if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0) throw DimensionError("negative dimension in shape " + s.str());
  }

  std::shared_ptr<NodeT> node_;
};

/// Gradient buffer of an op input, allocated on first use; null when the
/// input does not take gradients.
template <class T>
T* grad_ptr(const Tensor<T>& t) {
  if (!t.defined() || !t.requires_grad()) return nullptr;
  Tensor<T> handle = t;  // shares the node
  return handle.mutable_grad().data();
}

}  // namespace spade
