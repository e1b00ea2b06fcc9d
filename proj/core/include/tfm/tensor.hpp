#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "tfm/rng.hpp"
#include "tfm/shape.hpp"

namespace tfm {

template <typename T>
class Tensor;

namespace detail {

/// One vertex of the autodiff tape. Leaves have no inputs and no backward rule.
template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a gradient flows in
  bool requires_grad = false;
  std::string_view op = "leaf";
  std::uint64_t sequence = 0;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into the inputs' grads.
  std::function<void(Node&)> backward;

  std::vector<T>& grad_buffer() {
    if (grad.empty()) {
      grad.assign(data.size(), T{0});
    }
    return grad;
  }
};

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

std::uint64_t next_sequence();

}  // namespace detail

/// True unless a NoGradGuard is active on this thread.
bool grad_enabled();

/// Disables tape recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Dense row-major array with optional participation in the autodiff tape.
///
/// Tensor is a shared handle: copies alias the same storage, which is how
/// parameter tensors are shared between a model, its ParamSet and the
/// optimizer. Values of non-leaf tensors are never mutated after creation.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  /// Zero-filled tensor.
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<T> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor constant(Shape shape, T value);
  static Tensor from_values(Shape shape, std::vector<T> values) {
    return Tensor(std::move(shape), std::move(values));
  }
  static Tensor normal(Shape shape, RngStream& rng, T mean = T{0}, T stddev = T{1});
  static Tensor uniform(Shape shape, RngStream& rng, T lo, T hi);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  std::size_t dim(std::size_t axis) const;

  std::span<const T> values() const;
  /// Write access for leaf tensors (parameters, inputs); throws on tape results.
  std::span<T> mutable_values();
  T item() const;
  T operator[](std::size_t index) const { return values()[index]; }

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag = true);
  bool is_leaf() const;

  bool has_grad() const;
  /// Accumulated gradient; empty span when none has flowed in.
  std::span<const T> grad() const;
  /// Gradient values, zeros when none has flowed in.
  std::vector<T> grad_or_zeros() const;
  std::span<T> mutable_grad();
  void zero_grad();

  /// New leaf sharing no storage and no tape history.
  Tensor clone() const;
  /// New leaf with a copy of the values, outside the tape.
  Tensor detach() const { return clone(); }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> converted(numel());
    auto src = values();
    for (std::size_t i = 0; i < converted.size(); ++i) {
      converted[i] = static_cast<U>(src[i]);
    }
    return Tensor<U>(shape(), std::move(converted));
  }

  const detail::NodePtr<T>& node() const { return node_; }
  static Tensor from_node(detail::NodePtr<T> node);

 private:
  detail::NodePtr<T> node_;
};

/// Reverse sweep from a scalar loss; gradients accumulate additively into
/// every requires_grad tensor reachable from it. Intermediate tape state is
/// released afterwards.
template <typename T>
void backward(const Tensor<T>& loss);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace tfm
