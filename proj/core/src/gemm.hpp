#pragma once

#include <Eigen/Core>
#include <cstddef>

namespace tfm::detail {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMatrix<T>>;
template <typename T>
using MutMap = Eigen::Map<RowMatrix<T>>;

/// C[m x n] (+)= op(A) * op(B), all row-major and densely packed.
/// op(A) is m x k; A is stored k x m when trans_a is set, likewise for B.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const T* a, const T* b, T* c, bool accumulate) {
  const auto mi = static_cast<Eigen::Index>(m);
  const auto ni = static_cast<Eigen::Index>(n);
  const auto ki = static_cast<Eigen::Index>(k);
  MutMap<T> out(c, mi, ni);
  if (!accumulate) {
    out.setZero();
  }
  if (!trans_a && !trans_b) {
    out.noalias() += ConstMap<T>(a, mi, ki) * ConstMap<T>(b, ki, ni);
  } else if (trans_a && !trans_b) {
    out.noalias() += ConstMap<T>(a, ki, mi).transpose() * ConstMap<T>(b, ki, ni);
  } else if (!trans_a && trans_b) {
    out.noalias() += ConstMap<T>(a, mi, ki) * ConstMap<T>(b, ni, ki).transpose();
  } else {
    out.noalias() += ConstMap<T>(a, ki, mi).transpose() * ConstMap<T>(b, ni, ki).transpose();
  }
}

}  // namespace tfm::detail
