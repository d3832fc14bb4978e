#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "pcnn/error.hpp"
#include "pcnn/gemm.hpp"
#include "pcnn/tensor.hpp"

// Forward and backward passes for convolution, max-pooling, local response
// normalization, ReLU and fully connected layers. All functions are pure.
// Activations use NCHW layout.
namespace pcnn {

struct LayerGrad {
  Tensor input_grad;
  std::map<std::string, Tensor> parameter_grads;
};

inline std::size_t conv_output_size(std::size_t in, std::size_t kernel, std::size_t stride,
                                    std::size_t padding) {
  if (stride == 0 || kernel == 0) fail(ErrorKind::shape, "kernel and stride must be positive");
  if (in + 2 * padding < kernel) {
    fail(ErrorKind::shape, "window " + std::to_string(kernel) + " larger than padded input " +
                               std::to_string(in + 2 * padding));
  }
  return (in + 2 * padding - kernel) / stride + 1;
}

struct ConvParams {
  std::size_t stride = 1;
  std::size_t padding = 0;
  Tensor weights;  // [kernel_count, in_channels, k, k]
  Tensor bias;     // [kernel_count]

  std::size_t kernel_count() const { return weights.dim(0); }
  std::size_t in_channels() const { return weights.dim(1); }
  std::size_t kernel_size() const { return weights.dim(2); }
};

namespace detail {

inline void check_conv(const Tensor& input, const ConvParams& p) {
  if (input.rank() != 4) fail(ErrorKind::shape, "conv input must be [N,C,H,W]");
  if (p.weights.rank() != 4 || p.weights.dim(2) != p.weights.dim(3)) {
    fail(ErrorKind::shape, "conv weights must be [K,C,k,k]");
  }
  if (p.bias.rank() != 1 || p.bias.dim(0) != p.kernel_count()) {
    fail(ErrorKind::shape, "conv bias must be [K]");
  }
  if (input.dim(1) != p.in_channels()) {
    fail(ErrorKind::shape, "conv channel mismatch: input has " + std::to_string(input.dim(1)) +
                               ", weights expect " + std::to_string(p.in_channels()));
  }
}

// Unfolds one [C,H,W] image into columns [C*k*k, Ho*Wo].
inline void im2col(const double* img, std::size_t channels, std::size_t height, std::size_t width,
                   std::size_t k, std::size_t stride, std::size_t pad, std::size_t out_h,
                   std::size_t out_w, double* cols) {
  const std::size_t plane = out_h * out_w;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        double* row = cols + ((c * k + ky) * k + kx) * plane;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                   static_cast<std::ptrdiff_t>(pad);
          double* dst = row + oy * out_w;
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(height)) {
            std::fill(dst, dst + out_w, 0.0);
            continue;
          }
          const double* src = img + (c * height + static_cast<std::size_t>(y)) * width;
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                     static_cast<std::ptrdiff_t>(pad);
            dst[ox] = (x < 0 || x >= static_cast<std::ptrdiff_t>(width))
                          ? 0.0
                          : src[static_cast<std::size_t>(x)];
          }
        }
      }
    }
  }
}

inline void col2im_add(const double* cols, std::size_t channels, std::size_t height,
                       std::size_t width, std::size_t k, std::size_t stride, std::size_t pad,
                       std::size_t out_h, std::size_t out_w, double* img) {
  const std::size_t plane = out_h * out_w;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const double* row = cols + ((c * k + ky) * k + kx) * plane;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                   static_cast<std::ptrdiff_t>(pad);
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(height)) continue;
          double* dst = img + (c * height + static_cast<std::size_t>(y)) * width;
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                     static_cast<std::ptrdiff_t>(pad);
            if (x < 0 || x >= static_cast<std::ptrdiff_t>(width)) continue;
            dst[static_cast<std::size_t>(x)] += row[oy * out_w + ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// Cross-correlation plus per-kernel bias.
inline Tensor conv2d_forward(const Tensor& input, const ConvParams& p) {
  detail::check_conv(input, p);
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t k = p.kernel_size(), kc = p.kernel_count();
  const std::size_t oh = conv_output_size(h, k, p.stride, p.padding);
  const std::size_t ow = conv_output_size(w, k, p.stride, p.padding);
  const std::size_t plane = oh * ow, patch = c * k * k;

  Tensor out({n, kc, oh, ow});
  std::vector<double> cols(patch * plane);
  for (std::size_t s = 0; s < n; ++s) {
    detail::im2col(input.data() + s * c * h * w, c, h, w, k, p.stride, p.padding, oh, ow,
                   cols.data());
    double* dst = out.data() + s * kc * plane;
    for (std::size_t f = 0; f < kc; ++f) std::fill(dst + f * plane, dst + (f + 1) * plane, p.bias[f]);
    gemm::nn(kc, plane, patch, p.weights.data(), cols.data(), dst);
  }
  return out;
}

/// Gradients w.r.t. input, "weight" and "bias". Per-sample contributions are
/// accumulated in sample order.
inline LayerGrad conv2d_backward(const Tensor& input, const ConvParams& p, const Tensor& output_grad,
                                 bool compute_input_grad = true) {
  detail::check_conv(input, p);
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t k = p.kernel_size(), kc = p.kernel_count();
  const std::size_t oh = conv_output_size(h, k, p.stride, p.padding);
  const std::size_t ow = conv_output_size(w, k, p.stride, p.padding);
  if (output_grad.shape() != Shape{n, kc, oh, ow}) {
    fail(ErrorKind::shape, "conv output_grad shape " + shape_string(output_grad.shape()) +
                               " expected " + shape_string({n, kc, oh, ow}));
  }
  const std::size_t plane = oh * ow, patch = c * k * k;

  LayerGrad g;
  g.input_grad = Tensor(input.shape());
  Tensor dw(p.weights.shape());
  Tensor db(p.bias.shape());
  std::vector<double> cols(patch * plane);
  std::vector<double> dcols(patch * plane);
  for (std::size_t s = 0; s < n; ++s) {
    const double* dy = output_grad.data() + s * kc * plane;
    detail::im2col(input.data() + s * c * h * w, c, h, w, k, p.stride, p.padding, oh, ow,
                   cols.data());
    gemm::nt(kc, patch, plane, dy, cols.data(), dw.data());
    for (std::size_t f = 0; f < kc; ++f) {
      double acc = 0.0;
      for (std::size_t i = 0; i < plane; ++i) acc += dy[f * plane + i];
      db[f] += acc;
    }
    if (!compute_input_grad) continue;
    std::fill(dcols.begin(), dcols.end(), 0.0);
    gemm::tn(patch, plane, kc, p.weights.data(), dy, dcols.data());
    detail::col2im_add(dcols.data(), c, h, w, k, p.stride, p.padding, oh, ow,
                       g.input_grad.data() + s * c * h * w);
  }
  g.parameter_grads.emplace("weight", std::move(dw));
  g.parameter_grads.emplace("bias", std::move(db));
  return g;
}

struct PoolIndices {
  Shape input_shape;
  Shape output_shape;
  std::vector<std::size_t> argmax;  // flat input index per output element
};

struct PoolResult {
  Tensor output;
  PoolIndices indices;
};

/// Max over each window; ties resolve to the lowest flat input index.
inline PoolResult maxpool_forward(const Tensor& input, std::size_t window, std::size_t stride) {
  if (input.rank() != 4) fail(ErrorKind::shape, "maxpool input must be [N,C,H,W]");
  if (window == 0 || stride == 0) fail(ErrorKind::shape, "pool window and stride must be positive");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (window > h || window > w) {
    fail(ErrorKind::shape, "pool window " + std::to_string(window) + " larger than input " +
                               std::to_string(h) + "x" + std::to_string(w));
  }
  const std::size_t oh = (h - window) / stride + 1, ow = (w - window) / stride + 1;
  PoolResult r{Tensor({n, c, oh, ow}), {input.shape(), {n, c, oh, ow}, {}}};
  r.indices.argmax.resize(r.output.size());
  std::size_t o = 0;
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox, ++o) {
        std::size_t best = base + oy * stride * w + ox * stride;
        double best_v = input[best];
        for (std::size_t dy = 0; dy < window; ++dy) {
          for (std::size_t dx = 0; dx < window; ++dx) {
            const std::size_t idx = base + (oy * stride + dy) * w + ox * stride + dx;
            if (input[idx] > best_v) {
              best_v = input[idx];
              best = idx;
            }
          }
        }
        r.output[o] = best_v;
        r.indices.argmax[o] = best;
      }
    }
  }
  return r;
}

inline Tensor maxpool_backward(const PoolIndices& indices, const Tensor& output_grad) {
  if (output_grad.shape() != indices.output_shape ||
      indices.argmax.size() != output_grad.size()) {
    fail(ErrorKind::shape, "maxpool indices do not match output_grad " +
                               shape_string(output_grad.shape()));
  }
  Tensor input_grad(indices.input_shape);
  for (std::size_t o = 0; o < output_grad.size(); ++o) {
    input_grad[indices.argmax[o]] += output_grad[o];
  }
  return input_grad;
}

/// Across-channel local response normalization:
///   b_c = a_c / (k_offset + alpha/n * sum_{c' in window(c)} a_c'^2)^beta
/// with a window of `local_size` = n channels centred on c.
struct LrnParams {
  std::size_t local_size = 5;
  double alpha = 1e-4;
  double beta = 0.75;
  double k_offset = 2.0;

  void validate() const {
    if (local_size == 0 || !(alpha >= 0.0) || !(beta > 0.0) || !(k_offset > 0.0)) {
      fail(ErrorKind::config, "LRN parameters must be positive (alpha may be 0)");
    }
  }
  std::size_t window_lo(std::size_t c) const {
    const std::size_t half = (local_size - 1) / 2;
    return c >= half ? c - half : 0;
  }
  std::size_t window_hi(std::size_t c, std::size_t channels) const {
    return std::min(channels - 1, c + local_size / 2);
  }
};

namespace detail {

// Denominator base k + alpha/n * sum a^2 for every element.
inline Tensor lrn_scale(const Tensor& input, const LrnParams& lp) {
  const std::size_t n = input.dim(0), c = input.dim(1), plane = input.dim(2) * input.dim(3);
  Tensor scale(input.shape());
  const double coef = lp.alpha / static_cast<double>(lp.local_size);
  for (std::size_t s = 0; s < n; ++s) {
    const double* a = input.data() + s * c * plane;
    double* d = scale.data() + s * c * plane;
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t lo = lp.window_lo(ch), hi = lp.window_hi(ch, c);
      for (std::size_t i = 0; i < plane; ++i) {
        double sq = 0.0;
        for (std::size_t j = lo; j <= hi; ++j) sq += a[j * plane + i] * a[j * plane + i];
        d[ch * plane + i] = lp.k_offset + coef * sq;
      }
    }
  }
  return scale;
}

}  // namespace detail

inline Tensor lrn_forward(const Tensor& input, const LrnParams& lp) {
  lp.validate();
  if (input.rank() != 4) fail(ErrorKind::shape, "LRN input must be [N,C,H,W]");
  Tensor scale = detail::lrn_scale(input, lp);
  Tensor out(input.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = input[i] * std::pow(scale[i], -lp.beta);
  return out;
}

inline Tensor lrn_backward(const Tensor& input, const LrnParams& lp, const Tensor& output_grad) {
  lp.validate();
  input.require_same_shape(output_grad, "lrn_backward");
  const std::size_t n = input.dim(0), c = input.dim(1), plane = input.dim(2) * input.dim(3);
  const Tensor scale = detail::lrn_scale(input, lp);
  // t_i = g_i * a_i * D_i^(-beta-1)
  Tensor t(input.shape());
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i] = output_grad[i] * input[i] * std::pow(scale[i], -lp.beta - 1.0);
  }
  Tensor grad(input.shape());
  const double coef = 2.0 * lp.alpha * lp.beta / static_cast<double>(lp.local_size);
  const std::size_t half_lo = (lp.local_size - 1) / 2, half_hi = lp.local_size / 2;
  for (std::size_t s = 0; s < n; ++s) {
    const std::size_t off = s * c * plane;
    for (std::size_t ch = 0; ch < c; ++ch) {
      // channels i whose window contains ch: ch - half_hi <= i <= ch + half_lo
      const std::size_t lo = ch >= half_hi ? ch - half_hi : 0;
      const std::size_t hi = std::min(c - 1, ch + half_lo);
      for (std::size_t px = 0; px < plane; ++px) {
        const std::size_t idx = off + ch * plane + px;
        double acc = 0.0;
        for (std::size_t i = lo; i <= hi; ++i) acc += t[off + i * plane + px];
        grad[idx] = output_grad[idx] * std::pow(scale[idx], -lp.beta) - coef * input[idx] * acc;
      }
    }
  }
  return grad;
}

inline Tensor relu_forward(const Tensor& input) {
  Tensor out = input;
  for (auto& v : out.values()) v = v > 0.0 ? v : 0.0;
  return out;
}

/// Gradient passes only where input > 0 (zero at the kink).
inline Tensor relu_backward(const Tensor& input, const Tensor& output_grad) {
  input.require_same_shape(output_grad, "relu_backward");
  Tensor g(input.shape());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = input[i] > 0.0 ? output_grad[i] : 0.0;
  return g;
}

namespace detail {

inline void check_fc(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  if (input.rank() != 2 || weights.rank() != 2 || bias.rank() != 1) {
    fail(ErrorKind::shape, "fc expects input [N,D], weights [D,M], bias [M]");
  }
  if (input.dim(1) != weights.dim(0) || bias.dim(0) != weights.dim(1)) {
    fail(ErrorKind::shape, "fc dimension mismatch: input " + shape_string(input.shape()) +
                               ", weights " + shape_string(weights.shape()) + ", bias " +
                               shape_string(bias.shape()));
  }
}

}  // namespace detail

inline Tensor fc_forward(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  detail::check_fc(input, weights, bias);
  const std::size_t n = input.dim(0), d = input.dim(1), m = weights.dim(1);
  Tensor out({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy(bias.data(), bias.data() + m, out.data() + i * m);
  }
  gemm::nn(n, m, d, input.data(), weights.data(), out.data());
  return out;
}

inline LayerGrad fc_backward(const Tensor& input, const Tensor& weights, const Tensor& output_grad) {
  if (weights.rank() != 2) fail(ErrorKind::shape, "fc weights must be rank 2");
  detail::check_fc(input, weights, Tensor({weights.dim(1)}));
  const std::size_t n = input.dim(0), d = input.dim(1), m = weights.dim(1);
  if (output_grad.shape() != Shape{n, m}) {
    fail(ErrorKind::shape, "fc output_grad shape " + shape_string(output_grad.shape()));
  }
  LayerGrad g;
  g.input_grad = Tensor({n, d});
  gemm::nt(n, d, m, output_grad.data(), weights.data(), g.input_grad.data());
  Tensor dw({d, m});
  gemm::tn(d, m, n, input.data(), output_grad.data(), dw.data());
  Tensor db({m});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) db[j] += output_grad.at(i, j);
  }
  g.parameter_grads.emplace("weight", std::move(dw));
  g.parameter_grads.emplace("bias", std::move(db));
  return g;
}

}  // namespace pcnn
