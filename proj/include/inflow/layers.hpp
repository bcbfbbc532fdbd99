#pragma once

// Forward and backward kernels for the layers used by the coupling subnets and
// the attention encoder. All dot products accumulate in double.

#include <algorithm>
#include <cstddef>
#include <string>

#include "inflow/tensor.hpp"

namespace inflow {

template <std::floating_point T>
struct DenseGrads {
  Tensor<T> weight;
  Tensor<T> bias;
  Tensor<T> input;
};

template <std::floating_point T>
struct Conv2dGrads {
  Tensor<T> kernel;
  Tensor<T> bias;
  Tensor<T> input;
};

struct Conv2dGeometry {
  std::size_t stride = 1;
  std::size_t padding = 0;

  friend bool operator==(const Conv2dGeometry&, const Conv2dGeometry&) = default;
};

/// Batched affine map: X is [N, n], W is [m, n], b is [m]; returns [N, m] = X W^T + b.
template <std::floating_point T>
Tensor<T> dense_forward_batch(const Tensor<T>& weight, const Tensor<T>& bias, const Tensor<T>& x) {
  if (weight.rank() != 2 || bias.rank() != 1 || x.rank() != 2 || weight.dim(0) != bias.dim(0) ||
      weight.dim(1) != x.dim(1)) {
    throw DimensionError("dense: W " + shape_string(weight.shape()) + ", b " + shape_string(bias.shape()) +
                         ", x " + shape_string(x.shape()));
  }
  const std::size_t n_rows = x.dim(0), in = weight.dim(1), out = weight.dim(0);
  Tensor<T> y({n_rows, out});
  for (std::size_t r = 0; r < n_rows; ++r) {
    const T* xr = &x(r, 0);
    for (std::size_t o = 0; o < out; ++o) {
      const T* wr = &weight(o, 0);
      double acc = bias[o];
      for (std::size_t i = 0; i < in; ++i) acc += static_cast<double>(wr[i]) * xr[i];
      y(r, o) = static_cast<T>(acc);
    }
  }
  return y;
}

/// Single-vector affine map W x + b.
template <std::floating_point T>
Tensor<T> dense_forward(const Tensor<T>& weight, const Tensor<T>& bias, const Tensor<T>& x) {
  if (x.rank() != 1) throw DimensionError("dense_forward expects a vector input");
  return dense_forward_batch(weight, bias, x.reshaped({1, x.size()})).reshaped({weight.rank() ? weight.dim(0) : 0});
}

template <std::floating_point T>
DenseGrads<T> dense_backward(const Tensor<T>& weight, const Tensor<T>& x, const Tensor<T>& grad_out) {
  const std::size_t n_rows = x.dim(0), in = weight.dim(1), out = weight.dim(0);
  if (grad_out.rank() != 2 || grad_out.dim(0) != n_rows || grad_out.dim(1) != out) {
    throw DimensionError("dense_backward: gradient shape mismatch");
  }
  DenseGrads<T> g{Tensor<T>(weight.shape()), Tensor<T>({out}), Tensor<T>(x.shape())};
  for (std::size_t o = 0; o < out; ++o) {
    double db = 0.0;
    for (std::size_t r = 0; r < n_rows; ++r) db += grad_out(r, o);
    g.bias[o] = static_cast<T>(db);
    for (std::size_t i = 0; i < in; ++i) {
      double dw = 0.0;
      for (std::size_t r = 0; r < n_rows; ++r) dw += static_cast<double>(grad_out(r, o)) * x(r, i);
      g.weight(o, i) = static_cast<T>(dw);
    }
  }
  for (std::size_t r = 0; r < n_rows; ++r) {
    for (std::size_t i = 0; i < in; ++i) {
      double dx = 0.0;
      for (std::size_t o = 0; o < out; ++o) dx += static_cast<double>(grad_out(r, o)) * weight(o, i);
      g.input(r, i) = static_cast<T>(dx);
    }
  }
  return g;
}

inline std::size_t conv_output_size(std::size_t in, std::size_t kernel, Conv2dGeometry geo) {
  if (geo.stride == 0) throw DimensionError("conv2d: stride must be positive");
  if (kernel > in + 2 * geo.padding) {
    throw DimensionError("conv2d: kernel " + std::to_string(kernel) + " larger than padded input " +
                         std::to_string(in + 2 * geo.padding));
  }
  return (in + 2 * geo.padding - kernel) / geo.stride + 1;
}

namespace detail {

struct ConvDims {
  std::size_t n, in_c, h, w, out_c, kh, kw, out_h, out_w;
};

template <std::floating_point T>
ConvDims conv_dims(const Tensor<T>& kernel, const Tensor<T>& bias, const Tensor<T>& input, Conv2dGeometry geo) {
  if (kernel.rank() != 4 || input.rank() != 4 || bias.rank() != 1 || bias.dim(0) != kernel.dim(0)) {
    throw DimensionError("conv2d: kernel " + shape_string(kernel.shape()) + ", bias " +
                         shape_string(bias.shape()) + ", input " + shape_string(input.shape()));
  }
  if (input.dim(1) != kernel.dim(1)) {
    throw DimensionError("conv2d: input has " + std::to_string(input.dim(1)) + " channels, kernel expects " +
                         std::to_string(kernel.dim(1)));
  }
  ConvDims d{input.dim(0), input.dim(1), input.dim(2), input.dim(3), kernel.dim(0), kernel.dim(2), kernel.dim(3), 0, 0};
  d.out_h = conv_output_size(d.h, d.kh, geo);
  d.out_w = conv_output_size(d.w, d.kw, geo);
  return d;
}

}  // namespace detail

/// Cross-correlation with zero padding. input is [N, C, H, W] (or [C, H, W]),
/// kernel is [OutC, C, kH, kW]. No activation.
template <std::floating_point T>
Tensor<T> conv2d_forward(const Tensor<T>& kernel, const Tensor<T>& bias, const Tensor<T>& input,
                         Conv2dGeometry geo) {
  if (input.rank() == 3) {
    Tensor<T> out = conv2d_forward(kernel, bias, input.reshaped({1, input.dim(0), input.dim(1), input.dim(2)}), geo);
    return std::move(out).reshaped({out.dim(1), out.dim(2), out.dim(3)});
  }
  const auto d = detail::conv_dims(kernel, bias, input, geo);
  Tensor<T> out({d.n, d.out_c, d.out_h, d.out_w});
  const auto pad = static_cast<std::ptrdiff_t>(geo.padding);
  std::size_t o_idx = 0;
  for (std::size_t s = 0; s < d.n; ++s) {
    for (std::size_t oc = 0; oc < d.out_c; ++oc) {
      for (std::size_t oy = 0; oy < d.out_h; ++oy) {
        for (std::size_t ox = 0; ox < d.out_w; ++ox, ++o_idx) {
          double acc = bias[oc];
          for (std::size_t ic = 0; ic < d.in_c; ++ic) {
            const T* in_plane = input.data().data() + (s * d.in_c + ic) * d.h * d.w;
            const T* k_plane = kernel.data().data() + (oc * d.in_c + ic) * d.kh * d.kw;
            for (std::size_t ky = 0; ky < d.kh; ++ky) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * geo.stride + ky) - pad;
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.h)) continue;
              for (std::size_t kx = 0; kx < d.kw; ++kx) {
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * geo.stride + kx) - pad;
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.w)) continue;
                acc += static_cast<double>(k_plane[ky * d.kw + kx]) * in_plane[iy * static_cast<std::ptrdiff_t>(d.w) + ix];
              }
            }
          }
          out[o_idx] = static_cast<T>(acc);
        }
      }
    }
  }
  return out;
}

template <std::floating_point T>
Conv2dGrads<T> conv2d_backward(const Tensor<T>& kernel, const Tensor<T>& input, const Tensor<T>& grad_out,
                               Conv2dGeometry geo) {
  const Tensor<T> bias_shape_probe({kernel.dim(0)});
  const auto d = detail::conv_dims(kernel, bias_shape_probe, input, geo);
  if (grad_out.shape() != Shape{d.n, d.out_c, d.out_h, d.out_w}) {
    throw DimensionError("conv2d_backward: gradient shape mismatch");
  }
  std::vector<double> gk(kernel.size(), 0.0), gb(d.out_c, 0.0), gi(input.size(), 0.0);
  const auto pad = static_cast<std::ptrdiff_t>(geo.padding);
  std::size_t o_idx = 0;
  for (std::size_t s = 0; s < d.n; ++s) {
    for (std::size_t oc = 0; oc < d.out_c; ++oc) {
      for (std::size_t oy = 0; oy < d.out_h; ++oy) {
        for (std::size_t ox = 0; ox < d.out_w; ++ox, ++o_idx) {
          const double g = grad_out[o_idx];
          if (g == 0.0) continue;
          gb[oc] += g;
          for (std::size_t ic = 0; ic < d.in_c; ++ic) {
            const std::size_t in_base = (s * d.in_c + ic) * d.h * d.w;
            const std::size_t k_base = (oc * d.in_c + ic) * d.kh * d.kw;
            for (std::size_t ky = 0; ky < d.kh; ++ky) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * geo.stride + ky) - pad;
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.h)) continue;
              for (std::size_t kx = 0; kx < d.kw; ++kx) {
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * geo.stride + kx) - pad;
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.w)) continue;
                const std::size_t in_pos = in_base + static_cast<std::size_t>(iy) * d.w + static_cast<std::size_t>(ix);
                gk[k_base + ky * d.kw + kx] += g * input[in_pos];
                gi[in_pos] += g * kernel[k_base + ky * d.kw + kx];
              }
            }
          }
        }
      }
    }
  }
  auto to_tensor = [](const Shape& shape, const std::vector<double>& v) {
    std::vector<T> out(v.size());
    std::transform(v.begin(), v.end(), out.begin(), [](double x) { return static_cast<T>(x); });
    return Tensor<T>(shape, std::move(out));
  };
  return {to_tensor(kernel.shape(), gk), to_tensor({d.out_c}, gb), to_tensor(input.shape(), gi)};
}

template <std::floating_point T>
Tensor<T> relu(Tensor<T> x) {
  for (T& v : x.data()) v = v > T{0} ? v : T{0};
  return x;
}

/// Gradient through relu given the forward input; the subgradient at 0 is 0.
template <std::floating_point T>
Tensor<T> relu_backward(const Tensor<T>& input, Tensor<T> grad_out) {
  for (std::size_t i = 0; i < input.size(); ++i) {
    if (!(input[i] > T{0})) grad_out[i] = T{0};
  }
  return grad_out;
}

}  // namespace inflow
