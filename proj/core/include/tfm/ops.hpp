#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "tfm/tensor.hpp"

/// Differentiable tensor operations. Every function records a tape node when
/// grad mode is on and any input requires a gradient.
namespace tfm {

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);

/// Sum of all elements, shape [1].
template <typename T>
Tensor<T> sum(const Tensor<T>& a);
/// Mean of all elements, shape [1].
template <typename T>
Tensor<T> mean(const Tensor<T>& a);

/// [m x k] * [k x n] -> [m x n]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// Transpose of a rank-2 tensor.
template <typename T>
Tensor<T> transpose(const Tensor<T>& a);
/// Same values, new shape with equal element count.
template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape);

/// Exact GELU, x * Phi(x) with the normal CDF from erf.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);
/// Numerically stable softmax along `axis`.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);

/// Concatenation along `axis`; all other extents must agree.
template <typename T>
Tensor<T> concat(std::span<const Tensor<T>> parts, std::size_t axis);
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  return concat(std::span<const Tensor<T>>(parts), axis);
}
/// Contiguous range [start, start + length) along `axis`.
template <typename T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t start, std::size_t length);

/// Adds `bias` (length = last extent of x) to every row of x.
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias);

/// [C x H x W] -> [K x C*P*P] with K = (H/P)*(W/P) patches in row-major
/// patch order; each row holds channel, then patch row, then patch column.
template <typename T>
Tensor<T> patchify(const Tensor<T>& x, std::size_t patch);

/// Nearest-neighbour spatial upsampling of [C x H x W] by an integer factor.
template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& x, std::size_t factor);

/// Mean of squared differences over all elements, shape [1].
template <typename T>
Tensor<T> mean_squared_error(const Tensor<T>& prediction, const Tensor<T>& target);

}  // namespace tfm
