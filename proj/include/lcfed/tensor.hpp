#pragma once

// Dense row-major tensor with tape-free reverse-mode autodiff.
//
// Every op that consumes a tensor with requires_grad records a Node holding
// its inputs and a backward closure. backward() topologically sorts the
// reachable nodes, replays them once in reverse order, then releases them.

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace lcfed {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

namespace detail {
inline bool& grad_disabled() {
  thread_local bool flag = false;
  return flag;
}
}  // namespace detail

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_disabled()) { detail::grad_disabled() = true; }
  ~NoGradGuard() { detail::grad_disabled() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline bool grad_enabled() { return !detail::grad_disabled(); }

template <typename T>
struct TensorImpl;

template <typename T>
struct Node {
  std::vector<std::shared_ptr<TensorImpl<T>>> inputs;
  // Reads out.grad and accumulates into the grads of `inputs`.
  std::function<void(const TensorImpl<T>& out)> backward;
};

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  bool consumed = false;
  std::shared_ptr<Node<T>> grad_fn;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
};

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) : impl_(std::make_shared<TensorImpl<T>>()) {
    check_shape(shape);
    impl_->data.assign(lcfed::numel(shape), fill);
    impl_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<T> values) : impl_(std::make_shared<TensorImpl<T>>()) {
    check_shape(shape);
    if (values.size() != lcfed::numel(shape)) {
      throw ShapeError("tensor data length " + std::to_string(values.size()) +
                       " does not match shape " + shape_str(shape));
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(values);
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T(0)); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), T(1)); }
  static Tensor scalar(T v) { return Tensor(Shape{1}, v); }

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<T> data() { return impl_->data; }
  std::span<const T> data() const { return impl_->data; }
  const std::vector<T>& values() const { return impl_->data; }
  /// Empty until a backward pass has reached this tensor.
  std::span<const T> grad() const { return impl_->grad; }
  std::span<T> mutable_grad() { return impl_->grad; }
  bool has_grad() const { return !impl_->grad.empty(); }

  T item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return impl_->data[0];
  }
  T operator[](std::size_t i) const { return impl_->data[i]; }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    if (!is_leaf()) throw GraphError("requires_grad can only be changed on leaf tensors");
    impl_->requires_grad = on;
    return *this;
  }
  bool is_leaf() const { return !impl_->grad_fn; }

  /// Clears accumulated gradient and re-arms backward() on this root.
  void zero_grad() {
    std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
    impl_->consumed = false;
  }

  /// Deep copy as a fresh leaf; keeps requires_grad.
  Tensor clone() const {
    Tensor out(impl_->shape, impl_->data);
    out.impl_->requires_grad = impl_->requires_grad;
    return out;
  }

  /// Deep copy as a constant leaf.
  Tensor detach() const { return Tensor(impl_->shape, impl_->data); }

  void backward() const;

  const std::shared_ptr<TensorImpl<T>>& impl() const { return impl_; }

 private:
  static void check_shape(const Shape& s) {
    if (s.empty()) throw ShapeError("tensor shape must have at least one dimension");
    for (auto d : s)
      if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(s));
  }

  std::shared_ptr<TensorImpl<T>> impl_;
};

namespace detail {

template <typename T>
bool any_requires_grad(std::initializer_list<const Tensor<T>*> inputs) {
  if (!grad_enabled()) return false;
  for (const auto* t : inputs)
    if (t->defined() && t->requires_grad()) return true;
  return false;
}

/// Records a backward closure on `out` over the given inputs.
template <typename T, typename Fn>
void attach(Tensor<T>& out, std::initializer_list<const Tensor<T>*> inputs, Fn&& backward) {
  auto node = std::make_shared<Node<T>>();
  for (const auto* t : inputs)
    if (t->defined() && t->requires_grad()) node->inputs.push_back(t->impl());
  node->backward = std::forward<Fn>(backward);
  out.impl()->requires_grad = true;
  out.impl()->grad_fn = std::move(node);
}

template <typename T>
void attach_many(Tensor<T>& out, const std::vector<Tensor<T>>& inputs,
                 std::function<void(const TensorImpl<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  for (const auto& t : inputs)
    if (t.requires_grad()) node->inputs.push_back(t.impl());
  node->backward = std::move(backward);
  out.impl()->requires_grad = true;
  out.impl()->grad_fn = std::move(node);
}

}  // namespace detail

template <typename T>
void Tensor<T>::backward() const {
  if (numel() != 1) {
    throw GraphError("backward() needs a scalar root, got shape " + shape_str(shape()));
  }
  if (impl_->consumed) {
    throw GraphError("backward() already ran from this root; call zero_grad() before reusing it");
  }

  // Iterative post-order DFS: `order` ends up with inputs before consumers.
  std::vector<TensorImpl<T>*> order;
  std::unordered_set<TensorImpl<T>*> visited;
  std::vector<std::pair<TensorImpl<T>*, std::size_t>> stack;
  stack.emplace_back(impl_.get(), 0);
  visited.insert(impl_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    const auto& fn = node->grad_fn;
    if (fn && next < fn->inputs.size()) {
      TensorImpl<T>* child = fn->inputs[next++].get();
      if (visited.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  impl_->ensure_grad();
  impl_->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl<T>* node = *it;
    if (!node->grad_fn) continue;
    for (auto& in : node->grad_fn->inputs) in->ensure_grad();
    node->ensure_grad();
    node->grad_fn->backward(*node);
  }
  for (auto* node : order) node->grad_fn.reset();
  impl_->consumed = true;
}

}  // namespace lcfed
