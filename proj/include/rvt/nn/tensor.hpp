#pragma once

// Dense row-major tensors with tape-free reverse-mode differentiation.  Every
// op result keeps shared ownership of its inputs plus a closure that pushes
// the output gradient back into them; backward() walks that DAG in reverse
// topological order.

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace rvt::nn {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void()> backward_fn;

  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), T{0});
    return grad;
  }
};

template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  /// Constant input (never receives gradient).
  static Tensor constant(Shape shape, std::vector<T> data) { return make(std::move(shape), std::move(data), false); }
  static Tensor zeros(Shape shape) {
    const std::size_t n = numel(shape);
    return constant(std::move(shape), std::vector<T>(n, T{0}));
  }
  static Tensor scalar(T v) { return constant({1}, {v}); }
  /// Leaf that accumulates gradient (parameters, or inputs under check).
  static Tensor variable(Shape shape, std::vector<T> data) { return make(std::move(shape), std::move(data), true); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const T> data() const { return node_->value; }
  const std::vector<T>& values() const { return node_->value; }
  T item() const {
    if (size() != 1) throw std::invalid_argument("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }
  T operator[](std::size_t i) const { return node_->value[i]; }

  /// Gradient after backward(); zeros if nothing flowed here.
  std::vector<T> grad() const {
    return node_->grad.empty() ? std::vector<T>(size(), T{0}) : node_->grad;
  }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& handle() const { return node_; }

  static Tensor from_node(std::shared_ptr<Node<T>> n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

 private:
  static Tensor make(Shape shape, std::vector<T> data, bool requires_grad) {
    if (numel(shape) != data.size()) {
      throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                  " does not match shape " + shape_str(shape));
    }
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    return from_node(std::move(n));
  }

  std::shared_ptr<Node<T>> node_;
};

namespace detail {

#ifndef NDEBUG
inline constexpr bool kCheckFinite = true;
#else
inline constexpr bool kCheckFinite = false;
#endif

/// Build an op result.  `backward` receives (out, inputs...) raw pointers
/// and is dropped when no input needs a gradient.
template <class T, class Backward>
Tensor<T> result(const char* op, Shape shape, std::vector<T> value, std::vector<Tensor<T>> inputs,
                 Backward&& backward) {
  if constexpr (kCheckFinite) {
    for (const T& v : value) {
      if (!std::isfinite(static_cast<double>(v))) {
        throw std::runtime_error(std::string("non-finite value produced by ") + op);
      }
    }
  }
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  n->requires_grad = any;
  if (any) {
    n->inputs.reserve(inputs.size());
    for (const auto& in : inputs) n->inputs.push_back(in.handle());
    Node<T>* self = n.get();
    n->backward_fn = [self, fn = std::forward<Backward>(backward)]() mutable { fn(*self); };
  }
  return Tensor<T>::from_node(std::move(n));
}

}  // namespace detail

/// Reverse-mode sweep from a scalar.  Gradients accumulate into every node
/// that requires one; call once per graph.
template <class T>
void backward(const Tensor<T>& loss) {
  if (loss.size() != 1) throw std::invalid_argument("backward: loss must be a scalar, got " + shape_str(loss.shape()));
  if (!loss.requires_grad()) return;

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{loss.node(), 0}};
  seen.insert(loss.node());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      Node<T>* child = n->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.push_back({child, 0});
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  loss.node()->grad_buffer()[0] += T{1};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn();
  }
}

}  // namespace rvt::nn
