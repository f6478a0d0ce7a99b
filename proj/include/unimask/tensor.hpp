#pragma once

// Dense row-major tensors with tape-free reverse-mode autodiff.
//
// A Tensor is a shared handle onto a graph node. Operations in ops.hpp create
// new nodes that remember their inputs and a backward closure whenever
// gradient recording is enabled and at least one input requires a gradient.
// Calling backward() on a scalar walks the recorded graph in reverse
// topological order and accumulates into every reachable node's grad buffer.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace unimask {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

// Gradient recording is on by default; NoGradGuard turns it off for the
// current thread until the guard is destroyed.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until something accumulates into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

}  // namespace detail

template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;
  // Zero-filled tensor of the given shape.
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);

  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  std::span<T> data() { return node_->data; }
  T item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool value) { node_->requires_grad = value; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> grad() { return node_->grad; }
  // Allocates a zero grad buffer if none exists.
  std::span<T> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad();

  // Back-propagates from this scalar. Interior graph edges are released
  // afterwards; leaf grads stay populated until zero_grad().
  void backward();

  // Copy of the values with no graph attached.
  Tensor detached() const;

  bool shares_storage(const Tensor& other) const {
    return node_ == other.node_;
  }

  const NodePtr& node() const { return node_; }
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

 private:
  NodePtr node_;
};

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
  bool decay = true;  // subject to decoupled weight decay
};

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace unimask
