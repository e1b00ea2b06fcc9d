#include "tfm/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "gemm.hpp"
#include "tape.hpp"

namespace tfm {

using detail::input_grad;
using detail::make_result;
using detail::Node;

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  auto av = a.values();
  auto bv = b.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = av[i] + bv[i];
  }
  return make_result<T>("add", a.shape(), std::move(out), {&a, &b}, [](Node<T>& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (auto* g = input_grad(self, k)) {
        for (std::size_t i = 0; i < g->size(); ++i) {
          (*g)[i] += self.grad[i];
        }
      }
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  auto av = a.values();
  auto bv = b.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = av[i] - bv[i];
  }
  return make_result<T>("sub", a.shape(), std::move(out), {&a, &b}, [](Node<T>& self) {
    if (auto* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) {
        (*g)[i] += self.grad[i];
      }
    }
    if (auto* g = input_grad(self, 1)) {
      for (std::size_t i = 0; i < g->size(); ++i) {
        (*g)[i] -= self.grad[i];
      }
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  auto av = a.values();
  auto bv = b.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = av[i] * bv[i];
  }
  return make_result<T>("mul", a.shape(), std::move(out), {&a, &b}, [](Node<T>& self) {
    const auto& av = self.inputs[0]->data;
    const auto& bv = self.inputs[1]->data;
    if (auto* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) {
        (*g)[i] += self.grad[i] * bv[i];
      }
    }
    if (auto* g = input_grad(self, 1)) {
      for (std::size_t i = 0; i < g->size(); ++i) {
        (*g)[i] += self.grad[i] * av[i];
      }
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  auto av = a.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = av[i] * factor;
  }
  return make_result<T>("scale", a.shape(), std::move(out), {&a}, [factor](Node<T>& self) {
    if (auto* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) {
        (*g)[i] += self.grad[i] * factor;
      }
    }
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  double total = 0.0;
  for (T v : a.values()) {
    total += static_cast<double>(v);
  }
  return make_result<T>("sum", Shape{1}, {static_cast<T>(total)}, {&a}, [](Node<T>& self) {
    if (auto* g = input_grad(self, 0)) {
      for (T& v : *g) {
        v += self.grad[0];
      }
    }
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  double total = 0.0;
  for (T v : a.values()) {
    total += static_cast<double>(v);
  }
  const auto n = static_cast<double>(a.numel());
  return make_result<T>("mean", Shape{1}, {static_cast<T>(total / n)}, {&a},
                        [n](Node<T>& self) {
                          if (auto* g = input_grad(self, 0)) {
                            const T share = static_cast<T>(static_cast<double>(self.grad[0]) / n);
                            for (T& v : *g) {
                              v += share;
                            }
                          }
                        });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0);
  const std::size_t k = a.dim(1);
  const std::size_t n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner extents differ, " + to_string(a.shape()) + " x " +
                     to_string(b.shape()));
  }
  std::vector<T> out(m * n);
  detail::gemm(false, false, m, n, k, a.values().data(), b.values().data(), out.data(), false);
  return make_result<T>("matmul", Shape{m, n}, std::move(out), {&a, &b},
                        [m, n, k](Node<T>& self) {
                          const T* av = self.inputs[0]->data.data();
                          const T* bv = self.inputs[1]->data.data();
                          if (auto* g = input_grad(self, 0)) {
                            // dA = G * B^T
                            detail::gemm(false, true, m, k, n, self.grad.data(), bv, g->data(), true);
                          }
                          if (auto* g = input_grad(self, 1)) {
                            // dB = A^T * G
                            detail::gemm(true, false, k, n, m, av, self.grad.data(), g->data(), true);
                          }
                        });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  detail::require_rank(a, 2, "transpose");
  const std::size_t rows = a.dim(0);
  const std::size_t cols = a.dim(1);
  auto av = a.values();
  std::vector<T> out(av.size());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      out[c * rows + r] = av[r * cols + c];
    }
  }
  return make_result<T>("transpose", Shape{cols, rows}, std::move(out), {&a},
                        [rows, cols](Node<T>& self) {
                          if (auto* g = input_grad(self, 0)) {
                            for (std::size_t r = 0; r < rows; ++r) {
                              for (std::size_t c = 0; c < cols; ++c) {
                                (*g)[r * cols + c] += self.grad[c * rows + r];
                              }
                            }
                          }
                        });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (element_count(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
  }
  auto av = a.values();
  return make_result<T>("reshape", std::move(shape), std::vector<T>(av.begin(), av.end()), {&a},
                        [](Node<T>& self) {
                          if (auto* g = input_grad(self, 0)) {
                            for (std::size_t i = 0; i < g->size(); ++i) {
                              (*g)[i] += self.grad[i];
                            }
                          }
                        });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  auto xv = x.values();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = static_cast<double>(xv[i]);
    out[i] = static_cast<T>(0.5 * v * std::erfc(-v * std::numbers::sqrt2 / 2.0));
  }
  return make_result<T>("gelu", x.shape(), std::move(out), {&x}, [](Node<T>& self) {
    if (auto* g = input_grad(self, 0)) {
      const auto& xv = self.inputs[0]->data;
      constexpr double inv_sqrt_2pi = 0.3989422804014327;
      for (std::size_t i = 0; i < g->size(); ++i) {
        const double v = static_cast<double>(xv[i]);
        const double cdf = 0.5 * std::erfc(-v * std::numbers::sqrt2 / 2.0);
        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
        (*g)[i] += self.grad[i] * static_cast<T>(cdf + v * pdf);
      }
    }
  });
}

namespace {
struct AxisLayout {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisLayout layout_for(const Shape& shape, std::size_t axis) {
  AxisLayout layout;
  for (std::size_t i = 0; i < axis; ++i) {
    layout.outer *= shape[i];
  }
  layout.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) {
    layout.inner *= shape[i];
  }
  return layout;
}
}  // namespace

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw ShapeError("softmax: axis " + std::to_string(axis) + " invalid for shape " +
                     to_string(x.shape()));
  }
  const AxisLayout lay = layout_for(x.shape(), axis);
  auto xv = x.values();
  std::vector<T> out(xv.size());
  for (std::size_t o = 0; o < lay.outer; ++o) {
    for (std::size_t in = 0; in < lay.inner; ++in) {
      const std::size_t base = o * lay.extent * lay.inner + in;
      T peak = xv[base];
      for (std::size_t j = 1; j < lay.extent; ++j) {
        peak = std::max(peak, xv[base + j * lay.inner]);
      }
      double total = 0.0;
      for (std::size_t j = 0; j < lay.extent; ++j) {
        const double e = std::exp(static_cast<double>(xv[base + j * lay.inner] - peak));
        out[base + j * lay.inner] = static_cast<T>(e);
        total += e;
      }
      for (std::size_t j = 0; j < lay.extent; ++j) {
        out[base + j * lay.inner] = static_cast<T>(static_cast<double>(out[base + j * lay.inner]) / total);
      }
    }
  }
  return make_result<T>("softmax", x.shape(), std::move(out), {&x}, [lay](Node<T>& self) {
    auto* g = input_grad(self, 0);
    if (g == nullptr) {
      return;
    }
    const auto& y = self.data;
    for (std::size_t o = 0; o < lay.outer; ++o) {
      for (std::size_t in = 0; in < lay.inner; ++in) {
        const std::size_t base = o * lay.extent * lay.inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < lay.extent; ++j) {
          const std::size_t idx = base + j * lay.inner;
          dot += static_cast<double>(self.grad[idx]) * static_cast<double>(y[idx]);
        }
        for (std::size_t j = 0; j < lay.extent; ++j) {
          const std::size_t idx = base + j * lay.inner;
          (*g)[idx] += static_cast<T>(static_cast<double>(y[idx]) *
                                      (static_cast<double>(self.grad[idx]) - dot));
        }
      }
    }
  });
}

template <typename T>
Tensor<T> concat(std::span<const Tensor<T>> parts, std::size_t axis) {
  if (parts.empty()) {
    throw ValueError("concat: no inputs");
  }
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) {
    throw ShapeError("concat: axis " + std::to_string(axis) + " invalid for shape " +
                     to_string(first));
  }
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> extents;
  for (const Tensor<T>& part : parts) {
    const Shape& s = part.shape();
    bool compatible = s.size() == first.size();
    for (std::size_t i = 0; compatible && i < s.size(); ++i) {
      compatible = i == axis || s[i] == first[i];
    }
    if (!compatible) {
      throw ShapeError("concat: shape " + to_string(s) + " incompatible with " + to_string(first) +
                       " along axis " + std::to_string(axis));
    }
    out_shape[axis] += s[axis];
    extents.push_back(s[axis]);
  }
  const AxisLayout lay = layout_for(out_shape, axis);
  std::vector<T> out(element_count(out_shape));
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    auto pv = parts[p].values();
    const std::size_t chunk = extents[p] * lay.inner;
    for (std::size_t o = 0; o < lay.outer; ++o) {
      std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(o * chunk), chunk,
                  out.begin() + static_cast<std::ptrdiff_t>(o * lay.extent * lay.inner + offset * lay.inner));
    }
    offset += extents[p];
  }

  Tensor<T> result(out_shape, std::move(out));
  bool track = false;
  if (grad_enabled()) {
    for (const Tensor<T>& part : parts) {
      track = track || part.requires_grad();
    }
  }
  if (track) {
    auto& node = *result.node();
    node.requires_grad = true;
    node.op = "concat";
    for (const Tensor<T>& part : parts) {
      node.inputs.push_back(part.node());
    }
    node.backward = [lay, extents](Node<T>& self) {
      std::size_t offset = 0;
      for (std::size_t p = 0; p < extents.size(); ++p) {
        const std::size_t chunk = extents[p] * lay.inner;
        if (auto* g = input_grad(self, p)) {
          for (std::size_t o = 0; o < lay.outer; ++o) {
            const T* src = self.grad.data() + o * lay.extent * lay.inner + offset * lay.inner;
            T* dst = g->data() + o * chunk;
            for (std::size_t i = 0; i < chunk; ++i) {
              dst[i] += src[i];
            }
          }
        }
        offset += extents[p];
      }
    };
  }
  return result;
}

template <typename T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t start, std::size_t length) {
  if (axis >= a.rank() || length == 0 || start + length > a.dim(axis)) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") invalid along axis " + std::to_string(axis) + " of " + to_string(a.shape()));
  }
  const AxisLayout lay = layout_for(a.shape(), axis);
  Shape out_shape = a.shape();
  out_shape[axis] = length;
  auto av = a.values();
  const std::size_t chunk = length * lay.inner;
  std::vector<T> out(lay.outer * chunk);
  for (std::size_t o = 0; o < lay.outer; ++o) {
    std::copy_n(av.begin() + static_cast<std::ptrdiff_t>(o * lay.extent * lay.inner + start * lay.inner), chunk,
                out.begin() + static_cast<std::ptrdiff_t>(o * chunk));
  }
  return make_result<T>("slice", std::move(out_shape), std::move(out), {&a},
                        [lay, start, chunk](Node<T>& self) {
                          if (auto* g = input_grad(self, 0)) {
                            for (std::size_t o = 0; o < lay.outer; ++o) {
                              T* dst = g->data() + o * lay.extent * lay.inner + start * lay.inner;
                              const T* src = self.grad.data() + o * chunk;
                              for (std::size_t i = 0; i < chunk; ++i) {
                                dst[i] += src[i];
                              }
                            }
                          }
                        });
}

template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  detail::require_rank(bias, 1, "add_bias");
  const std::size_t width = bias.dim(0);
  if (x.shape().back() != width) {
    throw ShapeError("add_bias: bias " + to_string(bias.shape()) + " does not match last extent of " +
                     to_string(x.shape()));
  }
  auto xv = x.values();
  auto bv = bias.values();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = xv[i] + bv[i % width];
  }
  return make_result<T>("add_bias", x.shape(), std::move(out), {&x, &bias},
                        [width](Node<T>& self) {
                          if (auto* g = input_grad(self, 0)) {
                            for (std::size_t i = 0; i < g->size(); ++i) {
                              (*g)[i] += self.grad[i];
                            }
                          }
                          if (auto* g = input_grad(self, 1)) {
                            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                              (*g)[i % width] += self.grad[i];
                            }
                          }
                        });
}

namespace {
// Source offset in [C x H x W] for element `col` of patch `row`.
struct PatchGeometry {
  std::size_t channels, height, width, patch, grid_w;
  std::size_t source(std::size_t row, std::size_t col) const {
    const std::size_t pr = row / grid_w;
    const std::size_t pc = row % grid_w;
    const std::size_t c = col / (patch * patch);
    const std::size_t rem = col % (patch * patch);
    const std::size_t y = pr * patch + rem / patch;
    const std::size_t x = pc * patch + rem % patch;
    return (c * height + y) * width + x;
  }
};
}  // namespace

template <typename T>
Tensor<T> patchify(const Tensor<T>& x, std::size_t patch) {
  detail::require_rank(x, 3, "patchify");
  const std::size_t c = x.dim(0);
  const std::size_t h = x.dim(1);
  const std::size_t w = x.dim(2);
  if (patch == 0 || h % patch != 0 || w % patch != 0) {
    throw ShapeError("patchify: patch size " + std::to_string(patch) + " does not divide " +
                     to_string(x.shape()));
  }
  const PatchGeometry geo{c, h, w, patch, w / patch};
  const std::size_t rows = (h / patch) * (w / patch);
  const std::size_t cols = c * patch * patch;
  auto xv = x.values();
  std::vector<T> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < cols; ++k) {
      out[r * cols + k] = xv[geo.source(r, k)];
    }
  }
  return make_result<T>("patchify", Shape{rows, cols}, std::move(out), {&x},
                        [geo, rows, cols](Node<T>& self) {
                          if (auto* g = input_grad(self, 0)) {
                            for (std::size_t r = 0; r < rows; ++r) {
                              for (std::size_t k = 0; k < cols; ++k) {
                                (*g)[geo.source(r, k)] += self.grad[r * cols + k];
                              }
                            }
                          }
                        });
}

template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& x, std::size_t factor) {
  detail::require_rank(x, 3, "upsample_nearest");
  if (factor == 0) {
    throw ValueError("upsample_nearest: factor must be positive");
  }
  const std::size_t c = x.dim(0);
  const std::size_t h = x.dim(1);
  const std::size_t w = x.dim(2);
  const std::size_t oh = h * factor;
  const std::size_t ow = w * factor;
  auto xv = x.values();
  std::vector<T> out(c * oh * ow);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xx = 0; xx < ow; ++xx) {
        out[(ch * oh + y) * ow + xx] = xv[(ch * h + y / factor) * w + xx / factor];
      }
    }
  }
  return make_result<T>("upsample_nearest", Shape{c, oh, ow}, std::move(out), {&x},
                        [c, h, w, factor, oh, ow](Node<T>& self) {
                          if (auto* g = input_grad(self, 0)) {
                            for (std::size_t ch = 0; ch < c; ++ch) {
                              for (std::size_t y = 0; y < oh; ++y) {
                                for (std::size_t xx = 0; xx < ow; ++xx) {
                                  (*g)[(ch * h + y / factor) * w + xx / factor] +=
                                      self.grad[(ch * oh + y) * ow + xx];
                                }
                              }
                            }
                          }
                        });
}

template <typename T>
Tensor<T> mean_squared_error(const Tensor<T>& prediction, const Tensor<T>& target) {
  detail::require_same_shape(prediction, target, "mean_squared_error");
  auto pv = prediction.values();
  auto tv = target.values();
  double total = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double d = static_cast<double>(pv[i]) - static_cast<double>(tv[i]);
    total += d * d;
  }
  const auto n = static_cast<double>(pv.size());
  return make_result<T>("mean_squared_error", Shape{1}, {static_cast<T>(total / n)},
                        {&prediction, &target}, [n](Node<T>& self) {
                          const auto& pv = self.inputs[0]->data;
                          const auto& tv = self.inputs[1]->data;
                          const double factor = 2.0 * static_cast<double>(self.grad[0]) / n;
                          auto* gp = input_grad(self, 0);
                          auto* gt = input_grad(self, 1);
                          for (std::size_t i = 0; i < pv.size(); ++i) {
                            const double d = factor * (static_cast<double>(pv[i]) - static_cast<double>(tv[i]));
                            if (gp) {
                              (*gp)[i] += static_cast<T>(d);
                            }
                            if (gt) {
                              (*gt)[i] -= static_cast<T>(d);
                            }
                          }
                        });
}

#define TFM_INSTANTIATE_OPS(T)                                                          \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> scale(const Tensor<T>&, T);                                        \
  template Tensor<T> sum(const Tensor<T>&);                                             \
  template Tensor<T> mean(const Tensor<T>&);                                            \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> transpose(const Tensor<T>&);                                       \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                  \
  template Tensor<T> gelu(const Tensor<T>&);                                            \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                            \
  template Tensor<T> concat(std::span<const Tensor<T>>, std::size_t);                   \
  template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t, std::size_t);    \
  template Tensor<T> add_bias(const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> patchify(const Tensor<T>&, std::size_t);                           \
  template Tensor<T> upsample_nearest(const Tensor<T>&, std::size_t);                   \
  template Tensor<T> mean_squared_error(const Tensor<T>&, const Tensor<T>&);

TFM_INSTANTIATE_OPS(float)
TFM_INSTANTIATE_OPS(double)

}  // namespace tfm
