#include "tfm/layers.hpp"

#include <algorithm>
#include <cmath>

#include "gemm.hpp"
#include "tape.hpp"
#include "tfm/ops.hpp"

namespace tfm {

using detail::input_grad;
using detail::make_result;
using detail::Node;

std::size_t ConvSpec::output_extent(std::size_t in, std::size_t k) const {
  if (transposed) {
    const std::size_t grown = (in - 1) * stride + k + output_padding;
    if (grown < 2 * padding + 1) {
      throw ShapeError("conv_transpose2d: padding " + std::to_string(padding) +
                       " consumes the whole output");
    }
    return grown - 2 * padding;
  }
  if (in + 2 * padding < k) {
    throw ShapeError("conv2d: kernel " + std::to_string(k) + " larger than padded input " +
                     std::to_string(in + 2 * padding));
  }
  return (in + 2 * padding - k) / stride + 1;
}

Shape ConvSpec::weight_shape() const {
  if (transposed) {
    return {in_channels, out_channels, kernel_h, kernel_w};
  }
  return {out_channels, in_channels, kernel_h, kernel_w};
}

void ConvSpec::validate() const {
  if (in_channels == 0 || out_channels == 0 || kernel_h == 0 || kernel_w == 0 || stride == 0) {
    throw ValueError("ConvSpec: channels, kernel and stride must be positive");
  }
  if (!transposed && output_padding != 0) {
    throw ValueError("ConvSpec: output_padding only applies to transposed convolution");
  }
  if (transposed && output_padding >= stride) {
    throw ValueError("ConvSpec: output_padding must be smaller than stride");
  }
}

// ---------------------------------------------------------------------------
// ParamSet

template <typename T>
void ParamSet<T>::add(std::string name, Tensor<T> tensor) {
  if (index_.contains(name)) {
    throw ValueError("ParamSet: duplicate parameter name '" + name + "'");
  }
  index_.emplace(name, entries_.size());
  entries_.emplace_back(std::move(name), std::move(tensor));
}

template <typename T>
bool ParamSet<T>::contains(std::string_view name) const {
  return index_.contains(std::string(name));
}

template <typename T>
const Tensor<T>& ParamSet<T>::at(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) {
    throw ValueError("ParamSet: no parameter named '" + std::string(name) + "'");
  }
  return entries_[it->second].second;
}

template <typename T>
Tensor<T>& ParamSet<T>::at(std::string_view name) {
  return const_cast<Tensor<T>&>(std::as_const(*this).at(name));
}

template <typename T>
void ParamSet<T>::merge(const ParamSet& other, std::string_view prefix) {
  for (const auto& [name, tensor] : other) {
    add(std::string(prefix) + name, tensor);
  }
}

template <typename T>
void ParamSet<T>::zero_grad() {
  for (auto& entry : entries_) {
    entry.second.zero_grad();
  }
}

template <typename T>
std::vector<std::string> ParamSet<T>::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& entry : entries_) {
    out.push_back(entry.first);
  }
  return out;
}

template <typename T>
std::size_t count_params(const ParamSet<T>& params) {
  std::size_t total = 0;
  for (const auto& [name, tensor] : params) {
    total += tensor.numel();
  }
  return total;
}

// ---------------------------------------------------------------------------
// Convolution

namespace {

struct ConvGeometry {
  std::size_t channels, height, width;  // image side
  std::size_t kh, kw, stride, pad;
  std::size_t out_h, out_w;             // column grid side

  std::size_t col_rows() const { return channels * kh * kw; }
  std::size_t col_cols() const { return out_h * out_w; }
  bool is_pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

template <typename T>
void im2col(const ConvGeometry& g, const T* image, T* cols) {
  const std::size_t plane = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        T* row = cols + ((c * g.kh + ky) * g.kw + kx) * plane;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          T* out_row = row + oy * g.out_w;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) {
            std::fill_n(out_row, g.out_w, T{0});
            continue;
          }
          const T* in_row = image + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            out_row[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width))
                              ? T{0}
                              : in_row[static_cast<std::size_t>(ix)];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const ConvGeometry& g, const T* cols, T* image) {
  const std::size_t plane = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const T* row = cols + ((c * g.kh + ky) * g.kw + kx) * plane;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) {
            continue;
          }
          T* img_row = image + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
          const T* col_row = row + oy * g.out_w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.width)) {
              img_row[static_cast<std::size_t>(ix)] += col_row[ox];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void check_conv_operands(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                         const ConvSpec& spec, std::string_view op) {
  spec.validate();
  detail::require_rank(x, 3, op);
  if (x.dim(0) != spec.in_channels) {
    throw ShapeError(std::string(op) + ": input has " + std::to_string(x.dim(0)) +
                     " channels, spec expects " + std::to_string(spec.in_channels));
  }
  if (weight.shape() != spec.weight_shape()) {
    throw ShapeError(std::string(op) + ": weight shape " + to_string(weight.shape()) +
                     " does not match spec " + to_string(spec.weight_shape()));
  }
  if (bias.defined() && bias.shape() != Shape{spec.out_channels}) {
    throw ShapeError(std::string(op) + ": bias shape " + to_string(bias.shape()) +
                     " does not match " + std::to_string(spec.out_channels) + " output channels");
  }
}

template <typename T>
void add_channel_bias(std::vector<T>& out, std::span<const T> bias, std::size_t plane) {
  for (std::size_t c = 0; c < bias.size(); ++c) {
    T* row = out.data() + c * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      row[i] += bias[c];
    }
  }
}

template <typename T>
void accumulate_bias_grad(std::vector<T>& g, const std::vector<T>& out_grad, std::size_t plane) {
  for (std::size_t c = 0; c < g.size(); ++c) {
    double total = 0.0;
    const T* row = out_grad.data() + c * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      total += static_cast<double>(row[i]);
    }
    g[c] += static_cast<T>(total);
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 const ConvSpec& spec) {
  if (spec.transposed) {
    return conv_transpose2d(x, weight, bias, spec);
  }
  check_conv_operands(x, weight, bias, spec, "conv2d");
  const ConvGeometry geo{spec.in_channels,
                         x.dim(1),
                         x.dim(2),
                         spec.kernel_h,
                         spec.kernel_w,
                         spec.stride,
                         spec.padding,
                         spec.output_extent(x.dim(1), spec.kernel_h),
                         spec.output_extent(x.dim(2), spec.kernel_w)};
  const std::size_t plane = geo.col_cols();
  const std::size_t rows = geo.col_rows();

  std::vector<T> cols;
  const T* col_data = x.values().data();
  if (!geo.is_pointwise()) {
    cols.resize(rows * plane);
    im2col(geo, x.values().data(), cols.data());
    col_data = cols.data();
  }
  std::vector<T> out(spec.out_channels * plane);
  detail::gemm(false, false, spec.out_channels, plane, rows, weight.values().data(), col_data,
               out.data(), false);
  if (bias.defined()) {
    add_channel_bias(out, bias.values(), plane);
  }

  const bool has_bias = bias.defined();
  const std::size_t cout = spec.out_channels;
  auto rule = [geo, cols = std::move(cols), has_bias, cout, plane, rows](Node<T>& self) {
    const std::vector<T>& g_out = self.grad;
    const T* col_data = geo.is_pointwise() ? self.inputs[0]->data.data() : cols.data();
    if (auto* gw = input_grad(self, 1)) {
      detail::gemm(false, true, cout, rows, plane, g_out.data(), col_data, gw->data(), true);
    }
    if (auto* gx = input_grad(self, 0)) {
      if (geo.is_pointwise()) {
        detail::gemm(true, false, rows, plane, cout, self.inputs[1]->data.data(), g_out.data(),
                     gx->data(), true);
      } else {
        std::vector<T> g_cols(rows * plane);
        detail::gemm(true, false, rows, plane, cout, self.inputs[1]->data.data(), g_out.data(),
                     g_cols.data(), false);
        col2im_add(geo, g_cols.data(), gx->data());
      }
    }
    if (has_bias) {
      if (auto* gb = input_grad(self, 2)) {
        accumulate_bias_grad(*gb, g_out, plane);
      }
    }
  };
  Shape out_shape{spec.out_channels, geo.out_h, geo.out_w};
  if (has_bias) {
    return make_result<T>("conv2d", std::move(out_shape), std::move(out), {&x, &weight, &bias},
                          std::move(rule));
  }
  return make_result<T>("conv2d", std::move(out_shape), std::move(out), {&x, &weight},
                        std::move(rule));
}

template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                           const ConvSpec& spec) {
  if (!spec.transposed) {
    throw ValueError("conv_transpose2d: spec is not marked transposed");
  }
  check_conv_operands(x, weight, bias, spec, "conv_transpose2d");
  const std::size_t in_h = x.dim(1);
  const std::size_t in_w = x.dim(2);
  // Geometry of the forward convolution this operator is the adjoint of:
  // image = our output grid, column grid = our input grid.
  const ConvGeometry geo{spec.out_channels,
                         spec.output_extent(in_h, spec.kernel_h),
                         spec.output_extent(in_w, spec.kernel_w),
                         spec.kernel_h,
                         spec.kernel_w,
                         spec.stride,
                         spec.padding,
                         in_h,
                         in_w};
  const std::size_t plane_in = in_h * in_w;
  const std::size_t plane_out = geo.height * geo.width;
  const std::size_t rows = geo.col_rows();  // Cout * kh * kw
  const std::size_t cin = spec.in_channels;

  std::vector<T> cols(rows * plane_in);
  detail::gemm(true, false, rows, plane_in, cin, weight.values().data(), x.values().data(),
               cols.data(), false);
  std::vector<T> out(spec.out_channels * plane_out, T{0});
  col2im_add(geo, cols.data(), out.data());
  if (bias.defined()) {
    add_channel_bias(out, bias.values(), plane_out);
  }

  const bool has_bias = bias.defined();
  auto rule = [geo, has_bias, rows, plane_in, plane_out, cin](Node<T>& self) {
    const std::vector<T>& g_out = self.grad;
    auto* gx = input_grad(self, 0);
    auto* gw = input_grad(self, 1);
    if (gx || gw) {
      std::vector<T> g_cols(rows * plane_in);
      im2col(geo, g_out.data(), g_cols.data());
      if (gx) {
        detail::gemm(false, false, cin, plane_in, rows, self.inputs[1]->data.data(), g_cols.data(),
                     gx->data(), true);
      }
      if (gw) {
        detail::gemm(false, true, cin, rows, plane_in, self.inputs[0]->data.data(), g_cols.data(),
                     gw->data(), true);
      }
    }
    if (has_bias) {
      if (auto* gb = input_grad(self, 2)) {
        accumulate_bias_grad(*gb, g_out, plane_out);
      }
    }
  };
  Shape out_shape{spec.out_channels, geo.height, geo.width};
  if (has_bias) {
    return make_result<T>("conv_transpose2d", std::move(out_shape), std::move(out),
                          {&x, &weight, &bias}, std::move(rule));
  }
  return make_result<T>("conv_transpose2d", std::move(out_shape), std::move(out), {&x, &weight},
                        std::move(rule));
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  detail::require_rank(weight, 2, "linear");
  if (x.rank() == 0 || x.shape().back() != weight.dim(0)) {
    throw ShapeError("linear: input " + to_string(x.shape()) + " does not match weight " +
                     to_string(weight.shape()));
  }
  const std::size_t d_in = weight.dim(0);
  const std::size_t d_out = weight.dim(1);
  Shape out_shape = x.shape();
  out_shape.back() = d_out;
  const Tensor<T> rows = x.rank() == 2 ? x : reshape(x, Shape{x.numel() / d_in, d_in});
  Tensor<T> y = matmul(rows, weight);
  if (bias.defined()) {
    y = add_bias(y, bias);
  }
  return x.rank() == 2 ? y : reshape(y, std::move(out_shape));
}

// ---------------------------------------------------------------------------
// Normalization

namespace {

/// Shared kernel for group and layer normalization. Elements are partitioned
/// into `groups` contiguous blocks of `group_size`; the affine index of element
/// i is affine_index(i).
template <typename T, typename AffineIndex>
Tensor<T> normalize_blocks(std::string_view op, const Tensor<T>& x, const Tensor<T>& gamma,
                           const Tensor<T>& beta, std::size_t groups, std::size_t group_size,
                           double eps, AffineIndex affine_index) {
  auto xv = x.values();
  auto gv = gamma.values();
  auto bv = beta.values();
  std::vector<T> normalized(xv.size());
  std::vector<double> inv_std(groups);
  std::vector<T> out(xv.size());
  for (std::size_t gi = 0; gi < groups; ++gi) {
    const std::size_t base = gi * group_size;
    double mean = 0.0;
    for (std::size_t i = 0; i < group_size; ++i) {
      mean += static_cast<double>(xv[base + i]);
    }
    mean /= static_cast<double>(group_size);
    double var = 0.0;
    for (std::size_t i = 0; i < group_size; ++i) {
      const double d = static_cast<double>(xv[base + i]) - mean;
      var += d * d;
    }
    var /= static_cast<double>(group_size);
    inv_std[gi] = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < group_size; ++i) {
      const std::size_t idx = base + i;
      const double n = (static_cast<double>(xv[idx]) - mean) * inv_std[gi];
      normalized[idx] = static_cast<T>(n);
      const std::size_t a = affine_index(idx);
      out[idx] = static_cast<T>(n * static_cast<double>(gv[a]) + static_cast<double>(bv[a]));
    }
  }
  auto rule = [normalized = std::move(normalized), inv_std = std::move(inv_std), groups,
               group_size, affine_index](Node<T>& self) {
    const auto& gamma_v = self.inputs[1]->data;
    const std::vector<T>& g_out = self.grad;
    if (auto* gg = input_grad(self, 1)) {
      for (std::size_t i = 0; i < g_out.size(); ++i) {
        (*gg)[affine_index(i)] += g_out[i] * normalized[i];
      }
    }
    if (auto* gb = input_grad(self, 2)) {
      for (std::size_t i = 0; i < g_out.size(); ++i) {
        (*gb)[affine_index(i)] += g_out[i];
      }
    }
    if (auto* gx = input_grad(self, 0)) {
      for (std::size_t gi = 0; gi < groups; ++gi) {
        const std::size_t base = gi * group_size;
        double mean_dn = 0.0;
        double mean_dn_n = 0.0;
        for (std::size_t i = 0; i < group_size; ++i) {
          const std::size_t idx = base + i;
          const double dn = static_cast<double>(g_out[idx]) * static_cast<double>(gamma_v[affine_index(idx)]);
          mean_dn += dn;
          mean_dn_n += dn * static_cast<double>(normalized[idx]);
        }
        mean_dn /= static_cast<double>(group_size);
        mean_dn_n /= static_cast<double>(group_size);
        for (std::size_t i = 0; i < group_size; ++i) {
          const std::size_t idx = base + i;
          const double dn = static_cast<double>(g_out[idx]) * static_cast<double>(gamma_v[affine_index(idx)]);
          (*gx)[idx] += static_cast<T>(inv_std[gi] *
                                       (dn - mean_dn - static_cast<double>(normalized[idx]) * mean_dn_n));
        }
      }
    }
  };
  return make_result<T>(op, x.shape(), std::move(out), {&x, &gamma, &beta}, std::move(rule));
}

}  // namespace

template <typename T>
Tensor<T> group_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     std::size_t groups, double eps) {
  detail::require_rank(x, 3, "group_norm");
  const std::size_t channels = x.dim(0);
  if (groups == 0 || channels % groups != 0) {
    throw ValueError("group_norm: " + std::to_string(groups) + " groups do not divide " +
                     std::to_string(channels) + " channels");
  }
  if (gamma.shape() != Shape{channels} || beta.shape() != Shape{channels}) {
    throw ShapeError("group_norm: affine parameters must have shape [" + std::to_string(channels) + "]");
  }
  const std::size_t plane = x.dim(1) * x.dim(2);
  const std::size_t group_size = channels / groups * plane;
  return normalize_blocks<T>("group_norm", x, gamma, beta, groups, group_size, eps,
                             [plane](std::size_t i) { return i / plane; });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, double eps) {
  if (x.rank() == 0) {
    throw ShapeError("layer_norm: scalar input");
  }
  const std::size_t features = x.shape().back();
  if (gamma.shape() != Shape{features} || beta.shape() != Shape{features}) {
    throw ShapeError("layer_norm: affine parameters must have shape [" + std::to_string(features) + "]");
  }
  return normalize_blocks<T>("layer_norm", x, gamma, beta, x.numel() / features, features, eps,
                             [features](std::size_t i) { return i % features; });
}

template <typename T>
Tensor<T> normalize(const Tensor<T>& x, const NormSpec& spec, const Tensor<T>& gamma,
                    const Tensor<T>& beta) {
  if (spec.mode == NormMode::group) {
    return group_norm(x, gamma, beta, spec.groups, spec.eps);
  }
  return layer_norm(x, gamma, beta, spec.eps);
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, bool training, RngStream* rng) {
  if (!(p >= 0.0) || p >= 1.0) {
    throw ValueError("dropout: probability must lie in [0, 1), got " + std::to_string(p));
  }
  if (!training || p == 0.0) {
    return x;
  }
  if (rng == nullptr) {
    throw ValueError("dropout: training mode requires a random stream");
  }
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  std::vector<T> mask(x.numel());
  for (T& m : mask) {
    m = rng->uniform() < p ? T{0} : keep_scale;
  }
  return mul(x, Tensor<T>(x.shape(), std::move(mask)));
}

double kaiming_uniform_bound(std::size_t fan_in) {
  if (fan_in == 0) {
    throw ValueError("kaiming_uniform_bound: zero fan-in");
  }
  // Kaiming-uniform with negative slope a = sqrt(5): sqrt(6 / ((1 + a^2) fan_in)).
  return std::sqrt(1.0 / static_cast<double>(fan_in));
}

// ---------------------------------------------------------------------------
// Layer objects

template <typename T>
Conv2d<T> Conv2d<T>::init(const ConvSpec& spec, RngStream& rng) {
  spec.validate();
  const double bound = kaiming_uniform_bound(spec.in_channels * spec.kernel_h * spec.kernel_w);
  Conv2d layer;
  layer.spec = spec;
  layer.weight = Tensor<T>::uniform(spec.weight_shape(), rng, static_cast<T>(-bound), static_cast<T>(bound));
  layer.bias = Tensor<T>::zeros({spec.out_channels});
  layer.weight.set_requires_grad(true);
  layer.bias.set_requires_grad(true);
  return layer;
}

template <typename T>
Tensor<T> Conv2d<T>::operator()(const Tensor<T>& x) const {
  return spec.transposed ? conv_transpose2d(x, weight, bias, spec) : conv2d(x, weight, bias, spec);
}

template <typename T>
void Conv2d<T>::collect(ParamSet<T>& params, std::string_view prefix) const {
  params.add(std::string(prefix) + "weight", weight);
  params.add(std::string(prefix) + "bias", bias);
}

template <typename T>
Linear<T> Linear<T>::init(std::size_t in, std::size_t out, RngStream& rng) {
  const double bound = kaiming_uniform_bound(in);
  Linear layer;
  layer.weight = Tensor<T>::uniform({in, out}, rng, static_cast<T>(-bound), static_cast<T>(bound));
  layer.bias = Tensor<T>::zeros({out});
  layer.weight.set_requires_grad(true);
  layer.bias.set_requires_grad(true);
  return layer;
}

template <typename T>
void Linear<T>::collect(ParamSet<T>& params, std::string_view prefix) const {
  params.add(std::string(prefix) + "weight", weight);
  params.add(std::string(prefix) + "bias", bias);
}

template <typename T>
Norm<T> Norm<T>::init(const NormSpec& spec, std::size_t features) {
  Norm layer;
  layer.spec = spec;
  if (spec.mode == NormMode::group) {
    layer.spec.groups = std::min(spec.groups, features);
    if (layer.spec.groups == 0 || features % layer.spec.groups != 0) {
      throw ValueError("Norm: " + std::to_string(layer.spec.groups) + " groups do not divide " +
                       std::to_string(features) + " channels");
    }
  }
  layer.gamma = Tensor<T>::constant({features}, T{1});
  layer.beta = Tensor<T>::zeros({features});
  layer.gamma.set_requires_grad(true);
  layer.beta.set_requires_grad(true);
  return layer;
}

template <typename T>
void Norm<T>::collect(ParamSet<T>& params, std::string_view prefix) const {
  params.add(std::string(prefix) + "gamma", gamma);
  params.add(std::string(prefix) + "beta", beta);
}

template <typename T>
Tensor<T> init_embedding(Shape shape, RngStream& rng) {
  Tensor<T> table = Tensor<T>::normal(std::move(shape), rng, T{0}, static_cast<T>(0.02));
  table.set_requires_grad(true);
  return table;
}

#define TFM_INSTANTIATE_LAYERS(T)                                                                \
  template class ParamSet<T>;                                                                    \
  template std::size_t count_params(const ParamSet<T>&);                                         \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const ConvSpec&); \
  template Tensor<T> conv_transpose2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,      \
                                      const ConvSpec&);                                          \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);               \
  template Tensor<T> group_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t, \
                                double);                                                         \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double);   \
  template Tensor<T> normalize(const Tensor<T>&, const NormSpec&, const Tensor<T>&, const Tensor<T>&); \
  template Tensor<T> dropout(const Tensor<T>&, double, bool, RngStream*);                        \
  template struct Conv2d<T>;                                                                     \
  template struct Linear<T>;                                                                     \
  template struct Norm<T>;                                                                       \
  template Tensor<T> init_embedding(Shape, RngStream&);

TFM_INSTANTIATE_LAYERS(float)
TFM_INSTANTIATE_LAYERS(double)

}  // namespace tfm
