#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "tfm/rng.hpp"
#include "tfm/tensor.hpp"

namespace tfm {

struct ConvSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel_h = 3;
  std::size_t kernel_w = 3;
  std::size_t stride = 1;
  std::size_t padding = 0;
  bool transposed = false;
  std::size_t output_padding = 0;  // transposed only

  /// Output extent along one spatial axis for input extent `in` and kernel `k`.
  std::size_t output_extent(std::size_t in, std::size_t k) const;
  /// Weight shape: [out, in, kh, kw] for convolution, [in, out, kh, kw] when transposed.
  Shape weight_shape() const;
  void validate() const;

  static ConvSpec same3x3(std::size_t in, std::size_t out) { return {in, out, 3, 3, 1, 1}; }
  static ConvSpec pointwise(std::size_t in, std::size_t out) { return {in, out, 1, 1, 1, 0}; }
  /// Stride-2 3x3 downsampling, halves even extents.
  static ConvSpec downsample(std::size_t in, std::size_t out) { return {in, out, 3, 3, 2, 1}; }
  /// Stride-2 2x2 transposed convolution, doubles extents.
  static ConvSpec upsample(std::size_t in, std::size_t out) {
    return {in, out, 2, 2, 2, 0, true, 0};
  }
};

enum class NormMode { group, layer };

struct NormSpec {
  NormMode mode = NormMode::group;
  std::size_t groups = 8;
  double eps = 1e-5;
};

/// Ordered name -> tensor map. Iteration order is insertion order and defines
/// the checkpoint layout.
template <typename T>
class ParamSet {
 public:
  void add(std::string name, Tensor<T> tensor);
  bool contains(std::string_view name) const;
  const Tensor<T>& at(std::string_view name) const;
  Tensor<T>& at(std::string_view name);

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }

  /// Appends every entry of `other` with `prefix` prepended to its name.
  void merge(const ParamSet& other, std::string_view prefix);
  void zero_grad();
  std::vector<std::string> names() const;

 private:
  std::vector<std::pair<std::string, Tensor<T>>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Total element count over all parameter tensors.
template <typename T>
std::size_t count_params(const ParamSet<T>& params);

/// Cross-correlation of x [Cin x H x W] with weight [Cout x Cin x kh x kw],
/// plus a per-output-channel bias (may be undefined).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 const ConvSpec& spec);

/// Adjoint of conv2d with weight [Cin x Cout x kh x kw], plus bias.
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                           const ConvSpec& spec);

/// x [... x Din] * W [Din x Dout] + b along the last axis.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

/// Group normalization over [C x H x W] with per-channel affine gamma, beta.
template <typename T>
Tensor<T> group_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     std::size_t groups, double eps);

/// Layer normalization over the last axis with per-feature affine gamma, beta.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, double eps);

template <typename T>
Tensor<T> normalize(const Tensor<T>& x, const NormSpec& spec, const Tensor<T>& gamma,
                    const Tensor<T>& beta);

/// Inverted dropout: in training each element is zeroed with probability p and
/// survivors are scaled by 1/(1-p); otherwise identity.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, bool training, RngStream* rng);

/// Uniform bound of Kaiming-uniform initialization (negative slope sqrt(5)),
/// 1 / sqrt(fan_in).
double kaiming_uniform_bound(std::size_t fan_in);

/// Convolution layer (plain or transposed) owning its weight and bias.
template <typename T>
struct Conv2d {
  ConvSpec spec;
  Tensor<T> weight;
  Tensor<T> bias;

  static Conv2d init(const ConvSpec& spec, RngStream& rng);
  Tensor<T> operator()(const Tensor<T>& x) const;
  void collect(ParamSet<T>& params, std::string_view prefix) const;
};

template <typename T>
struct Linear {
  Tensor<T> weight;  // [in x out]
  Tensor<T> bias;    // [out]

  static Linear init(std::size_t in, std::size_t out, RngStream& rng);
  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }
  void collect(ParamSet<T>& params, std::string_view prefix) const;
};

template <typename T>
struct Norm {
  NormSpec spec;
  Tensor<T> gamma;
  Tensor<T> beta;

  /// gamma = 1, beta = 0 over `features` channels or features. Group count is
  /// clamped to the feature count and must divide it.
  static Norm init(const NormSpec& spec, std::size_t features);
  Tensor<T> operator()(const Tensor<T>& x) const { return normalize(x, spec, gamma, beta); }
  void collect(ParamSet<T>& params, std::string_view prefix) const;
};

/// Embedding table initialized from N(0, 0.02^2).
template <typename T>
Tensor<T> init_embedding(Shape shape, RngStream& rng);

}  // namespace tfm
