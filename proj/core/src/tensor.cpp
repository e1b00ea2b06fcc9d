#include "tfm/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <limits>
#include <unordered_set>

#include "tfm/error.hpp"

namespace tfm {

std::size_t element_count(const Shape& shape) {
  std::size_t count = 1;
  for (std::size_t extent : shape) {
    if (extent == 0) {
      throw ShapeError("zero extent in shape " + to_string(shape));
    }
    if (count > std::numeric_limits<std::size_t>::max() / extent) {
      throw ShapeError("element count overflows for shape " + to_string(shape));
    }
    count *= extent;
  }
  return count;
}

std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) {
      out += ", ";
    }
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

namespace detail {
std::uint64_t next_sequence() {
  static std::atomic<std::uint64_t> counter{0};
  return counter.fetch_add(1, std::memory_order_relaxed) + 1;
}
}  // namespace detail

namespace {
thread_local bool t_grad_enabled = true;
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

template <typename T>
Tensor<T>::Tensor(Shape shape) {
  const std::size_t count = element_count(shape);
  node_ = std::make_shared<detail::Node<T>>();
  node_->shape = std::move(shape);
  node_->data.assign(count, T{0});
  node_->sequence = detail::next_sequence();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) {
  const std::size_t count = element_count(shape);
  if (values.size() != count) {
    throw ShapeError("from_values: " + std::to_string(values.size()) +
                     " values do not fill shape " + to_string(shape));
  }
  node_ = std::make_shared<detail::Node<T>>();
  node_->shape = std::move(shape);
  node_->data = std::move(values);
  node_->sequence = detail::next_sequence();
}

template <typename T>
Tensor<T> Tensor<T>::constant(Shape shape, T value) {
  Tensor out(std::move(shape));
  std::fill(out.node_->data.begin(), out.node_->data.end(), value);
  return out;
}

template <typename T>
Tensor<T> Tensor<T>::normal(Shape shape, RngStream& rng, T mean, T stddev) {
  Tensor out(std::move(shape));
  for (T& v : out.node_->data) {
    v = static_cast<T>(static_cast<double>(mean) + static_cast<double>(stddev) * rng.normal());
  }
  return out;
}

template <typename T>
Tensor<T> Tensor<T>::uniform(Shape shape, RngStream& rng, T lo, T hi) {
  Tensor out(std::move(shape));
  for (T& v : out.node_->data) {
    v = static_cast<T>(rng.uniform(static_cast<double>(lo), static_cast<double>(hi)));
  }
  return out;
}

template <typename T>
Tensor<T> Tensor<T>::from_node(detail::NodePtr<T> node) {
  Tensor out;
  out.node_ = std::move(node);
  return out;
}

namespace {
template <typename T>
const detail::Node<T>& checked(const detail::NodePtr<T>& node) {
  if (!node) {
    throw ValueError("use of an undefined tensor");
  }
  return *node;
}
}  // namespace

template <typename T>
const Shape& Tensor<T>::shape() const {
  return checked(node_).shape;
}

template <typename T>
std::size_t Tensor<T>::numel() const {
  return checked(node_).data.size();
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + to_string(s));
  }
  return s[axis];
}

template <typename T>
std::span<const T> Tensor<T>::values() const {
  return checked(node_).data;
}

template <typename T>
std::span<T> Tensor<T>::mutable_values() {
  checked(node_);
  if (!is_leaf()) {
    throw ValueError("mutable_values on a non-leaf tensor produced by '" +
                     std::string(node_->op) + "'");
  }
  return node_->data;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) {
    throw ShapeError("item() on tensor of shape " + to_string(shape()));
  }
  return node_->data[0];
}

template <typename T>
bool Tensor<T>::requires_grad() const {
  return checked(node_).requires_grad;
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool flag) {
  checked(node_);
  if (!is_leaf() && !flag) {
    throw ValueError("cannot clear requires_grad on a tape result; use detach()");
  }
  node_->requires_grad = flag;
  return *this;
}

template <typename T>
bool Tensor<T>::is_leaf() const {
  return checked(node_).backward == nullptr && node_->inputs.empty();
}

template <typename T>
bool Tensor<T>::has_grad() const {
  return !checked(node_).grad.empty();
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  return checked(node_).grad;
}

template <typename T>
std::vector<T> Tensor<T>::grad_or_zeros() const {
  if (has_grad()) {
    return node_->grad;
  }
  return std::vector<T>(numel(), T{0});
}

template <typename T>
std::span<T> Tensor<T>::mutable_grad() {
  checked(node_);
  return node_->grad_buffer();
}

template <typename T>
void Tensor<T>::zero_grad() {
  checked(node_);
  node_->grad.clear();
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  return Tensor(shape(), std::vector<T>(values().begin(), values().end()));
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined()) {
    throw ValueError("backward on an undefined tensor");
  }
  if (loss.numel() != 1) {
    throw ShapeError("backward requires a scalar loss, got shape " + to_string(loss.shape()));
  }
  if (!loss.requires_grad()) {
    return;  // nothing on the tape depends on a trainable tensor
  }

  // Iterative post-order DFS gives a topological order of the reachable tape.
  std::vector<detail::Node<T>*> order;
  std::unordered_set<const detail::Node<T>*> visited;
  std::vector<std::pair<detail::Node<T>*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next_input] = stack.back();
    if (next_input < node->inputs.size()) {
      detail::Node<T>* child = node->inputs[next_input++].get();
      if (child->requires_grad && visited.insert(child).second) {
        stack.emplace_back(child, 0);
      }
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  loss.node()->grad_buffer()[0] += T{1};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node<T>* node = *it;
    if (node->backward && !node->grad.empty()) {
      node->backward(*node);
    }
  }
  // Release saved activations; leaves keep their gradients.
  for (detail::Node<T>* node : order) {
    if (node->backward) {
      node->backward = nullptr;
      node->inputs.clear();
    }
  }
}

template class Tensor<float>;
template class Tensor<double>;
template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);

}  // namespace tfm
