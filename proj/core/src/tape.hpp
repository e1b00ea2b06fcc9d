#pragma once

#include <initializer_list>
#include <string_view>
#include <utility>
#include <vector>

#include "tfm/error.hpp"
#include "tfm/tensor.hpp"

namespace tfm::detail {

/// Wraps freshly computed values into a tensor and, when any input requires a
/// gradient and grad mode is on, attaches the backward rule. Inputs are stored
/// in the given order so rules can address them as self.inputs[i].
template <typename T, typename Rule>
Tensor<T> make_result(std::string_view op, Shape shape, std::vector<T> data,
                      std::initializer_list<const Tensor<T>*> inputs, Rule&& rule) {
  Tensor<T> out(std::move(shape), std::move(data));
  bool track = false;
  if (grad_enabled()) {
    for (const Tensor<T>* input : inputs) {
      track = track || input->requires_grad();
    }
  }
  if (track) {
    Node<T>& node = *out.node();
    node.requires_grad = true;
    node.op = op;
    node.inputs.reserve(inputs.size());
    for (const Tensor<T>* input : inputs) {
      node.inputs.push_back(input->node());
    }
    node.backward = std::forward<Rule>(rule);
  }
  return out;
}

/// Gradient buffer of input i, or nullptr when it needs none.
template <typename T>
std::vector<T>* input_grad(Node<T>& self, std::size_t i) {
  Node<T>& input = *self.inputs[i];
  return input.requires_grad ? &input.grad_buffer() : nullptr;
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, std::string_view op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

template <typename T>
void require_rank(const Tensor<T>& a, std::size_t rank, std::string_view op) {
  if (a.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                     to_string(a.shape()));
  }
}

}  // namespace tfm::detail
