#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "tfm/ops.hpp"
#include "tfm/rng.hpp"
#include "tfm/tensor.hpp"

namespace tfm::testing {

inline Tensor<double> random_tensor(Shape shape, std::uint64_t seed, std::string_view label = "test",
                                    double stddev = 1.0) {
  RngStream rng(seed, label);
  return Tensor<double>::normal(std::move(shape), rng, 0.0, stddev);
}

// Scalar probe sum(y * w) with fixed random weights, so that gradient checks
// do not degenerate on outputs whose plain sum is constant.
inline Tensor<double> probe(const Tensor<double>& y, std::uint64_t seed = 99) {
  return sum(mul(y, random_tensor(y.shape(), seed, "probe")));
}

template <typename T>
bool same_bits(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) return false;
  auto x = a.values();
  auto y = b.values();
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] != y[i]) return false;
  }
  return true;
}

inline double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = a[i] - b[i];
    m = std::max(m, d < 0 ? -d : d);
  }
  return m;
}

/// Fresh scratch directory, removed on destruction.
class ScratchDir {
 public:
  explicit ScratchDir(const std::string& name)
      : path_(std::filesystem::temp_directory_path() / ("tfmforge-" + name)) {
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

// Owning copy, safe to iterate when the tensor is a temporary.
template <typename T>
std::vector<T> values_of(const Tensor<T>& t) {
  return {t.values().begin(), t.values().end()};
}

}  // namespace tfm::testing
