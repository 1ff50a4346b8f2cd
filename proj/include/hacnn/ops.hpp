// Copyright 2026 The hacnn Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hacnn/tensor.hpp"

// Differentiable primitives. Every op takes the tape first; when the tape is
// recording and any input requires a gradient, the op appends its backward
// rule and marks its output as requiring a gradient.
namespace hacnn::ops {

namespace detail {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

template <typename T, typename... Ts>
bool wants_grad(const Tape<T>& tape, const Ts&... inputs) {
  return tape.recording() && (... || (inputs.defined() && inputs.requires_grad()));
}

template <typename T>
Tensor<T> make_output(Shape shape, Buffer<T> values, bool grad) {
  return Tensor<T>(std::move(shape), std::move(values), grad);
}

inline std::uint64_t hash_bits(const std::vector<bool>& bits) {
  std::uint64_t h = 1469598103934665603ULL;
  std::uint64_t word = 0;
  std::size_t k = 0;
  for (bool b : bits) {
    word = (word << 1) | (b ? 1U : 0U);
    if (++k == 64) {
      h = (h ^ word) * 1099511628211ULL;
      word = 0;
      k = 0;
    }
  }
  return (h ^ word ^ bits.size()) * 1099511628211ULL;
}

inline std::uint64_t hash_ints(const std::vector<std::int64_t>& v) {
  std::uint64_t h = 1469598103934665603ULL;
  for (auto x : v) h = (h ^ static_cast<std::uint64_t>(x)) * 1099511628211ULL;
  return h;
}

inline void require_rank(const Shape& s, std::size_t r, const char* op) {
  if (s.size() != r) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(r) +
                     " input, got " + shape_str(s));
  }
}

struct ConvGeometry {
  std::size_t n, h, w, ci, k, co, stride, pad, oh, ow;
  std::size_t rows() const { return n * oh * ow; }
  std::size_t cols() const { return k * k * ci; }
  bool pointwise() const { return k == 1 && stride == 1 && pad == 0; }
};

template <typename T>
void im2col(const T* x, const ConvGeometry& g, Buffer<T>& col) {
  col.assign(g.rows() * g.cols(), T(0));
  T* out = col.data();
  for (std::size_t b = 0; b < g.n; ++b) {
    for (std::size_t oy = 0; oy < g.oh; ++oy) {
      for (std::size_t ox = 0; ox < g.ow; ++ox) {
        for (std::size_t ky = 0; ky < g.k; ++ky) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                          static_cast<std::ptrdiff_t>(g.pad);
          for (std::size_t kx = 0; kx < g.k; ++kx, out += g.ci) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                            static_cast<std::ptrdiff_t>(g.pad);
            if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(g.h) ||
                ix >= static_cast<std::ptrdiff_t>(g.w)) {
              continue;
            }
            const T* src = x + ((b * g.h + iy) * g.w + ix) * g.ci;
            std::copy(src, src + g.ci, out);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* dx) {
  const T* in = col;
  for (std::size_t b = 0; b < g.n; ++b) {
    for (std::size_t oy = 0; oy < g.oh; ++oy) {
      for (std::size_t ox = 0; ox < g.ow; ++ox) {
        for (std::size_t ky = 0; ky < g.k; ++ky) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                          static_cast<std::ptrdiff_t>(g.pad);
          for (std::size_t kx = 0; kx < g.k; ++kx, in += g.ci) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                            static_cast<std::ptrdiff_t>(g.pad);
            if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(g.h) ||
                ix >= static_cast<std::ptrdiff_t>(g.w)) {
              continue;
            }
            T* dst = dx + ((b * g.h + iy) * g.w + ix) * g.ci;
            for (std::size_t c = 0; c < g.ci; ++c) dst[c] += in[c];
          }
        }
      }
    }
  }
}

// Align-corners source coordinate for output index i of n over an input
// extent of len.
inline double align_corners_coord(std::size_t i, std::size_t n, std::size_t len) {
  if (n <= 1 || len <= 1) return 0.0;
  return static_cast<double>(i) * static_cast<double>(len - 1) /
         static_cast<double>(n - 1);
}

}  // namespace detail

inline std::size_t conv_output_extent(std::size_t in, std::size_t k, std::size_t stride,
                                      std::size_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

/// 2-D convolution. input N x H x W x Cin, weights K x K x Cin x Cout.
template <typename T>
Tensor<T> conv2d(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& weights,
                 const Tensor<T>& bias, std::size_t stride, std::size_t padding) {
  detail::require_rank(input.shape(), 4, "conv2d");
  detail::require_rank(weights.shape(), 4, "conv2d weights");
  const auto& xs = input.shape();
  const auto& ws = weights.shape();
  if (ws[0] != ws[1]) {
    throw ShapeError("conv2d: kernel must be square, weights " + shape_str(ws));
  }
  if (ws[2] != xs[3]) {
    throw ShapeError("conv2d: input " + shape_str(xs) + " has " + std::to_string(xs[3]) +
                     " channels but weights " + shape_str(ws) + " expect " +
                     std::to_string(ws[2]));
  }
  if (stride == 0) throw std::invalid_argument("conv2d: stride must be positive");
  const std::size_t k = ws[0];
  if (k > xs[1] + 2 * padding || k > xs[2] + 2 * padding) {
    throw ShapeError("conv2d: kernel " + std::to_string(k) + " exceeds padded input " +
                     shape_str(xs));
  }
  if (bias.defined() && bias.size() != ws[3]) {
    throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " vs weights " +
                     shape_str(ws));
  }
  detail::ConvGeometry g{xs[0], xs[1], xs[2], xs[3], k, ws[3], stride, padding,
                         conv_output_extent(xs[1], k, stride, padding),
                         conv_output_extent(xs[2], k, stride, padding)};

  Buffer<T> out(g.rows() * g.co);
  detail::MatMap<T> y(out.data(), g.rows(), g.co);
  detail::ConstMatMap<T> wm(weights.data(), g.cols(), g.co);
  if (g.pointwise()) {
    detail::ConstMatMap<T> xm(input.data(), g.rows(), g.cols());
    y.noalias() = xm * wm;
  } else {
    Buffer<T> col;
    detail::im2col(input.data(), g, col);
    detail::ConstMatMap<T> cm(col.data(), g.rows(), g.cols());
    y.noalias() = cm * wm;
  }
  if (bias.defined()) {
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bv(bias.data(), g.co);
    y.rowwise() += bv;
  }

  const bool grad = detail::wants_grad(tape, input, weights, bias);
  auto result = detail::make_output<T>({g.n, g.oh, g.ow, g.co}, std::move(out), grad);
  if (grad) {
    tape.record([xn = input.node(), wn = weights.node(),
                 bn = bias.defined() ? bias.node() : nullptr, yn = result.node(), g]() {
      if (yn->grad.empty()) return;
      detail::ConstMatMap<T> dy(yn->grad.data(), g.rows(), g.co);
      Buffer<T> col;
      const T* colp = xn->value.data();
      if (!g.pointwise() && wn->requires_grad) {
        detail::im2col(xn->value.data(), g, col);
        colp = col.data();
      }
      if (wn->requires_grad) {
        detail::ConstMatMap<T> cm(colp, g.rows(), g.cols());
        detail::MatMap<T> dw(wn->ensure_grad().data(), g.cols(), g.co);
        dw.noalias() += cm.transpose() * dy;
      }
      if (bn && bn->requires_grad) {
        Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> db(bn->ensure_grad().data(), g.co);
        db += dy.colwise().sum();
      }
      if (xn->requires_grad) {
        detail::ConstMatMap<T> wm2(wn->value.data(), g.cols(), g.co);
        if (g.pointwise()) {
          detail::MatMap<T> dx(xn->ensure_grad().data(), g.rows(), g.cols());
          dx.noalias() += dy * wm2.transpose();
        } else {
          Buffer<T> dcol(g.rows() * g.cols());
          detail::MatMap<T> dc(dcol.data(), g.rows(), g.cols());
          dc.noalias() = dy * wm2.transpose();
          detail::col2im_add(dcol.data(), g, xn->ensure_grad().data());
        }
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> conv2d(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& weights,
                 std::size_t stride, std::size_t padding) {
  return conv2d(tape, input, weights, Tensor<T>(), stride, padding);
}

/// Per-channel running statistics owned by a batch-norm layer.
template <typename T>
struct BatchNormStats {
  Tensor<T> mean;
  Tensor<T> var;

  explicit BatchNormStats(std::size_t channels = 0)
      : mean(Tensor<T>::zeros({channels})), var(Tensor<T>::filled({channels}, T(1))) {}
};

enum class Mode { train, infer };

/// Batch normalisation over every axis except the last (channel) axis.
/// Train mode normalises by batch statistics and folds them into `stats`
/// with an exponential moving average.
template <typename T>
Tensor<T> batch_norm(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& gamma,
                     const Tensor<T>& beta, BatchNormStats<T>& stats, Mode mode,
                     double momentum = 0.9, double epsilon = 1e-5) {
  if (input.rank() < 1) throw ShapeError("batch_norm: scalar input");
  const std::size_t c = input.shape().back();
  if (gamma.size() != c || beta.size() != c) {
    throw ShapeError("batch_norm: input " + shape_str(input.shape()) + " with gamma " +
                     shape_str(gamma.shape()) + " and beta " + shape_str(beta.shape()));
  }
  const std::size_t m = c ? input.size() / c : 0;
  if (mode == Mode::train && m == 0) {
    throw std::invalid_argument("batch_norm: empty batch in train mode");
  }
  const T* x = input.data();
  std::vector<double> mean(c, 0.0), inv_std(c, 0.0);
  if (mode == Mode::train) {
    std::vector<double> var(c, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      const T* row = x + i * c;
      for (std::size_t j = 0; j < c; ++j) mean[j] += row[j];
    }
    for (auto& v : mean) v /= static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i) {
      const T* row = x + i * c;
      for (std::size_t j = 0; j < c; ++j) {
        const double d = row[j] - mean[j];
        var[j] += d * d;
      }
    }
    auto rm = stats.mean.mutable_values();
    auto rv = stats.var.mutable_values();
    for (std::size_t j = 0; j < c; ++j) {
      const double biased = var[j] / static_cast<double>(m);
      const double unbiased = m > 1 ? var[j] / static_cast<double>(m - 1) : biased;
      inv_std[j] = 1.0 / std::sqrt(biased + epsilon);
      rm[j] = static_cast<T>(momentum * rm[j] + (1.0 - momentum) * mean[j]);
      rv[j] = static_cast<T>(momentum * rv[j] + (1.0 - momentum) * unbiased);
    }
  } else {
    auto rm = stats.mean.values();
    auto rv = stats.var.values();
    for (std::size_t j = 0; j < c; ++j) {
      mean[j] = rm[j];
      inv_std[j] = 1.0 / std::sqrt(static_cast<double>(rv[j]) + epsilon);
    }
  }
  Buffer<T> out(input.size());
  Buffer<T> scale(c), shift(c);
  for (std::size_t j = 0; j < c; ++j) {
    scale[j] = static_cast<T>(gamma.values()[j] * inv_std[j]);
    shift[j] = static_cast<T>(beta.values()[j] - gamma.values()[j] * inv_std[j] * mean[j]);
  }
  for (std::size_t i = 0; i < m; ++i) {
    const T* row = x + i * c;
    T* o = out.data() + i * c;
    for (std::size_t j = 0; j < c; ++j) o[j] = row[j] * scale[j] + shift[j];
  }
  const bool grad = detail::wants_grad(tape, input, gamma, beta);
  auto result = detail::make_output<T>(input.shape(), std::move(out), grad);
  if (grad) {
    tape.record([xn = input.node(), gn = gamma.node(), bn = beta.node(),
                 yn = result.node(), mean = std::move(mean), inv_std = std::move(inv_std), m,
                 c, train = mode == Mode::train]() {
      if (yn->grad.empty()) return;
      const T* dy = yn->grad.data();
      const T* xv = xn->value.data();
      std::vector<double> sum_dy(c, 0.0), sum_dy_xhat(c, 0.0);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
          const double xhat = (xv[i * c + j] - mean[j]) * inv_std[j];
          sum_dy[j] += dy[i * c + j];
          sum_dy_xhat[j] += dy[i * c + j] * xhat;
        }
      }
      if (gn->requires_grad) {
        auto& dg = gn->ensure_grad();
        for (std::size_t j = 0; j < c; ++j) dg[j] += static_cast<T>(sum_dy_xhat[j]);
      }
      if (bn->requires_grad) {
        auto& db = bn->ensure_grad();
        for (std::size_t j = 0; j < c; ++j) db[j] += static_cast<T>(sum_dy[j]);
      }
      if (xn->requires_grad) {
        // dx = A dy + B x + C per channel.
        auto& dx = xn->ensure_grad();
        const double inv_m = 1.0 / static_cast<double>(m);
        Buffer<T> ca(c), cb(c), cc(c);
        for (std::size_t j = 0; j < c; ++j) {
          const double a = gn->value[j] * inv_std[j];
          const double b = train ? -a * inv_std[j] * sum_dy_xhat[j] * inv_m : 0.0;
          ca[j] = static_cast<T>(a);
          cb[j] = static_cast<T>(b);
          cc[j] = static_cast<T>(train ? -a * sum_dy[j] * inv_m - b * mean[j] : 0.0);
        }
        for (std::size_t i = 0; i < m; ++i) {
          T* d = dx.data() + i * c;
          const T* g = dy + i * c;
          const T* xr = xv + i * c;
          for (std::size_t j = 0; j < c; ++j) d[j] += ca[j] * g[j] + cb[j] * xr[j] + cc[j];
        }
      }
    });
  }
  return result;
}

enum class Activation { relu, sigmoid, tanh };

template <typename T>
Tensor<T> activation(Tape<T>& tape, const Tensor<T>& input, Activation kind) {
  const auto x = input.values();
  Buffer<T> out(x.size());
  switch (kind) {
    case Activation::relu:
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
      if (tape.tracking_kinks()) {
        std::vector<bool> mask(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) mask[i] = x[i] > T(0);
        tape.mix_kink(detail::hash_bits(mask));
      }
      break;
    case Activation::sigmoid:
      for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] >= T(0)) {
          out[i] = T(1) / (T(1) + std::exp(-x[i]));
        } else {
          const T e = std::exp(x[i]);
          out[i] = e / (T(1) + e);
        }
      }
      break;
    case Activation::tanh:
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::tanh(x[i]);
      break;
  }
  const bool grad = detail::wants_grad(tape, input);
  auto result = detail::make_output<T>(input.shape(), std::move(out), grad);
  if (grad) {
    tape.record([xn = input.node(), yn = result.node(), kind]() {
      if (yn->grad.empty() || !xn->requires_grad) return;
      auto& dx = xn->ensure_grad();
      const auto& dy = yn->grad;
      const auto& y = yn->value;
      const auto& xv = xn->value;
      const std::size_t len = dy.size();
      switch (kind) {
        case Activation::relu:
          for (std::size_t i = 0; i < len; ++i) dx[i] += xv[i] > T(0) ? dy[i] : T(0);
          break;
        case Activation::sigmoid:
          for (std::size_t i = 0; i < len; ++i) dx[i] += dy[i] * y[i] * (T(1) - y[i]);
          break;
        case Activation::tanh:
          for (std::size_t i = 0; i < len; ++i) dx[i] += dy[i] * (T(1) - y[i] * y[i]);
          break;
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> relu(Tape<T>& tape, const Tensor<T>& x) {
  return activation(tape, x, Activation::relu);
}
template <typename T>
Tensor<T> sigmoid(Tape<T>& tape, const Tensor<T>& x) {
  return activation(tape, x, Activation::sigmoid);
}
template <typename T>
Tensor<T> tanh(Tape<T>& tape, const Tensor<T>& x) {
  return activation(tape, x, Activation::tanh);
}

/// N x H x W x C -> N x 1 x 1 x C, mean over pixels.
template <typename T>
Tensor<T> global_avg_pool(Tape<T>& tape, const Tensor<T>& input) {
  detail::require_rank(input.shape(), 4, "global_avg_pool");
  const auto& s = input.shape();
  const std::size_t n = s[0], hw = s[1] * s[2], c = s[3];
  Buffer<T> out(n * c, T(0));
  const T* x = input.data();
  for (std::size_t b = 0; b < n; ++b) {
    std::vector<double> acc(c, 0.0);
    for (std::size_t p = 0; p < hw; ++p) {
      const T* row = x + (b * hw + p) * c;
      for (std::size_t j = 0; j < c; ++j) acc[j] += row[j];
    }
    for (std::size_t j = 0; j < c; ++j) out[b * c + j] = static_cast<T>(acc[j] / hw);
  }
  const bool grad = detail::wants_grad(tape, input);
  auto result = detail::make_output<T>({n, 1, 1, c}, std::move(out), grad);
  if (grad) {
    tape.record([xn = input.node(), yn = result.node(), n, hw, c]() {
      if (yn->grad.empty() || !xn->requires_grad) return;
      auto& dx = xn->ensure_grad();
      const T inv = T(1) / static_cast<T>(hw);
      for (std::size_t b = 0; b < n; ++b) {
        const T* dy = yn->grad.data() + b * c;
        for (std::size_t p = 0; p < hw; ++p) {
          T* row = dx.data() + (b * hw + p) * c;
          for (std::size_t j = 0; j < c; ++j) row[j] += dy[j] * inv;
        }
      }
    });
  }
  return result;
}

/// N x H x W x C -> N x H x W x 1, mean over channels.
template <typename T>
Tensor<T> cross_channel_avg_pool(Tape<T>& tape, const Tensor<T>& input) {
  detail::require_rank(input.shape(), 4, "cross_channel_avg_pool");
  const auto& s = input.shape();
  const std::size_t pixels = s[0] * s[1] * s[2], c = s[3];
  Buffer<T> out(pixels);
  const T* x = input.data();
  for (std::size_t p = 0; p < pixels; ++p) {
    double acc = 0.0;
    for (std::size_t j = 0; j < c; ++j) acc += x[p * c + j];
    out[p] = static_cast<T>(acc / c);
  }
  const bool grad = detail::wants_grad(tape, input);
  auto result = detail::make_output<T>({s[0], s[1], s[2], 1}, std::move(out), grad);
  if (grad) {
    tape.record([xn = input.node(), yn = result.node(), pixels, c]() {
      if (yn->grad.empty() || !xn->requires_grad) return;
      auto& dx = xn->ensure_grad();
      const T inv = T(1) / static_cast<T>(c);
      for (std::size_t p = 0; p < pixels; ++p) {
        const T g = yn->grad[p] * inv;
        for (std::size_t j = 0; j < c; ++j) dx[p * c + j] += g;
      }
    });
  }
  return result;
}

enum class PoolKind { max, average };

/// Windowed pooling. Average pooling divides by the number of in-bounds taps.
template <typename T>
Tensor<T> pool2d(Tape<T>& tape, const Tensor<T>& input, PoolKind kind, std::size_t k,
                 std::size_t stride, std::size_t pad) {
  detail::require_rank(input.shape(), 4, "pool2d");
  const auto& s = input.shape();
  const std::size_t n = s[0], h = s[1], w = s[2], c = s[3];
  if (k > h + 2 * pad || k > w + 2 * pad || stride == 0) {
    throw ShapeError("pool2d: window " + std::to_string(k) + " on " + shape_str(s));
  }
  const std::size_t oh = conv_output_extent(h, k, stride, pad);
  const std::size_t ow = conv_output_extent(w, k, stride, pad);
  Buffer<T> out(n * oh * ow * c);
  std::vector<std::int64_t> arg;  // winning flat input index, max pooling only
  if (kind == PoolKind::max) arg.assign(out.size(), -1);
  const T* x = input.data();
  const auto sh = static_cast<std::ptrdiff_t>(h), sw = static_cast<std::ptrdiff_t>(w);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      const auto y0 = static_cast<std::ptrdiff_t>(oy * stride) - static_cast<std::ptrdiff_t>(pad);
      const auto ylo = std::max<std::ptrdiff_t>(y0, 0);
      const auto yhi = std::min<std::ptrdiff_t>(y0 + static_cast<std::ptrdiff_t>(k), sh);
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const auto x0 =
            static_cast<std::ptrdiff_t>(ox * stride) - static_cast<std::ptrdiff_t>(pad);
        const auto xlo = std::max<std::ptrdiff_t>(x0, 0);
        const auto xhi = std::min<std::ptrdiff_t>(x0 + static_cast<std::ptrdiff_t>(k), sw);
        T* o = out.data() + ((b * oh + oy) * ow + ox) * c;
        std::int64_t* a = kind == PoolKind::max ? arg.data() + ((b * oh + oy) * ow + ox) * c : nullptr;
        bool first = true;
        for (auto iy = ylo; iy < yhi; ++iy) {
          for (auto ix = xlo; ix < xhi; ++ix) {
            const auto base = static_cast<std::int64_t>(((b * h + iy) * w + ix) * c);
            const T* v = x + base;
            if (kind == PoolKind::max) {
              for (std::size_t j = 0; j < c; ++j) {
                if (first || v[j] > o[j]) {
                  o[j] = v[j];
                  a[j] = base + static_cast<std::int64_t>(j);
                }
              }
            } else {
              for (std::size_t j = 0; j < c; ++j) o[j] += v[j];
            }
            first = false;
          }
        }
        if (kind == PoolKind::average) {
          const T inv = T(1) / static_cast<T>((yhi - ylo) * (xhi - xlo));
          for (std::size_t j = 0; j < c; ++j) o[j] *= inv;
        }
      }
    }
  }
  if (kind == PoolKind::max && tape.tracking_kinks()) tape.mix_kink(detail::hash_ints(arg));
  const bool grad = detail::wants_grad(tape, input);
  auto result = detail::make_output<T>({n, oh, ow, c}, std::move(out), grad);
  if (grad) {
    tape.record([xn = input.node(), yn = result.node(), arg = std::move(arg), kind, n, h, w,
                 c, oh, ow, k, stride, pad]() {
      if (yn->grad.empty() || !xn->requires_grad) return;
      auto& dx = xn->ensure_grad();
      const auto& dy = yn->grad;
      if (kind == PoolKind::max) {
        for (std::size_t i = 0; i < dy.size(); ++i) dx[arg[i]] += dy[i];
        return;
      }
      for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const auto y0 =
              static_cast<std::ptrdiff_t>(oy * stride) - static_cast<std::ptrdiff_t>(pad);
          const auto ylo = std::max<std::ptrdiff_t>(y0, 0);
          const auto yhi = std::min<std::ptrdiff_t>(y0 + static_cast<std::ptrdiff_t>(k),
                                                    static_cast<std::ptrdiff_t>(h));
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const auto x0 =
                static_cast<std::ptrdiff_t>(ox * stride) - static_cast<std::ptrdiff_t>(pad);
            const auto xlo = std::max<std::ptrdiff_t>(x0, 0);
            const auto xhi = std::min<std::ptrdiff_t>(x0 + static_cast<std::ptrdiff_t>(k),
                                                      static_cast<std::ptrdiff_t>(w));
            const T inv = T(1) / static_cast<T>((yhi - ylo) * (xhi - xlo));
            const T* g = dy.data() + ((b * oh + oy) * ow + ox) * c;
            for (auto iy = ylo; iy < yhi; ++iy) {
              for (auto ix = xlo; ix < xhi; ++ix) {
                T* d = dx.data() + ((b * h + iy) * w + ix) * c;
                for (std::size_t j = 0; j < c; ++j) d[j] += g[j] * inv;
              }
            }
          }
        }
      }
    });
  }
  return result;
}

/// Affine map input (N x M) -> N x n with weights n x m.
template <typename T>
Tensor<T> linear(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& weights,
                 const Tensor<T>& bias = Tensor<T>()) {
  detail::require_rank(weights.shape(), 2, "linear weights");
  const std::size_t n_out = weights.dim(0), m = weights.dim(1);
  if (input.rank() == 0 || input.shape().back() != m) {
    throw ShapeError("linear: input " + shape_str(input.shape()) + " has length " +
                     (input.rank() ? std::to_string(input.shape().back()) : "0") +
                     " but weights " + shape_str(weights.shape()) + " expect " +
                     std::to_string(m));
  }
  if (bias.defined() && bias.size() != n_out) {
    throw ShapeError("linear: bias " + shape_str(bias.shape()) + " vs weights " +
                     shape_str(weights.shape()));
  }
  const std::size_t rows = input.size() / m;
  Buffer<T> out(rows * n_out);
  detail::MatMap<T> y(out.data(), rows, n_out);
  detail::ConstMatMap<T> xm(input.data(), rows, m);
  detail::ConstMatMap<T> wm(weights.data(), n_out, m);
  y.noalias() = xm * wm.transpose();
  if (bias.defined()) {
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bv(bias.data(), n_out);
    y.rowwise() += bv;
  }
  Shape out_shape = input.shape();
  out_shape.back() = n_out;
  const bool grad = detail::wants_grad(tape, input, weights, bias);
  auto result = detail::make_output<T>(std::move(out_shape), std::move(out), grad);
  if (grad) {
    tape.record([xn = input.node(), wn = weights.node(),
                 bn = bias.defined() ? bias.node() : nullptr, yn = result.node(), rows, m,
                 n_out]() {
      if (yn->grad.empty()) return;
      detail::ConstMatMap<T> dy(yn->grad.data(), rows, n_out);
      if (wn->requires_grad) {
        detail::ConstMatMap<T> xm2(xn->value.data(), rows, m);
        detail::MatMap<T> dw(wn->ensure_grad().data(), n_out, m);
        dw.noalias() += dy.transpose() * xm2;
      }
      if (bn && bn->requires_grad) {
        Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> db(bn->ensure_grad().data(), n_out);
        db += dy.colwise().sum();
      }
      if (xn->requires_grad) {
        detail::ConstMatMap<T> wm2(wn->value.data(), n_out, m);
        detail::MatMap<T> dx(xn->ensure_grad().data(), rows, m);
        dx.noalias() += dy * wm2;
      }
    });
  }
  return result;
}

/// Align-corners bilinear resize of N x H x W x C to N x out_h x out_w x C.
template <typename T>
Tensor<T> bilinear_resize(Tape<T>& tape, const Tensor<T>& input, std::size_t out_h,
                          std::size_t out_w) {
  detail::require_rank(input.shape(), 4, "bilinear_resize");
  if (out_h == 0 || out_w == 0) throw ShapeError("bilinear_resize: empty output size");
  const auto& s = input.shape();
  const std::size_t n = s[0], h = s[1], w = s[2], c = s[3];
  struct Tap {
    std::size_t i0, i1;
    T f;
  };
  auto taps = [](std::size_t out, std::size_t len) {
    std::vector<Tap> t(out);
    for (std::size_t i = 0; i < out; ++i) {
      const double src = detail::align_corners_coord(i, out, len);
      auto i0 = static_cast<std::size_t>(std::floor(src));
      i0 = std::min(i0, len - 1);
      const std::size_t i1 = std::min(i0 + 1, len - 1);
      t[i] = {i0, i1, static_cast<T>(src - static_cast<double>(i0))};
    }
    return t;
  };
  auto ty = taps(out_h, h);
  auto tx = taps(out_w, w);
  Buffer<T> out(n * out_h * out_w * c);
  const T* x = input.data();
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const auto& a = ty[oy];
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const auto& e = tx[ox];
        const T* p00 = x + ((b * h + a.i0) * w + e.i0) * c;
        const T* p01 = x + ((b * h + a.i0) * w + e.i1) * c;
        const T* p10 = x + ((b * h + a.i1) * w + e.i0) * c;
        const T* p11 = x + ((b * h + a.i1) * w + e.i1) * c;
        T* o = out.data() + ((b * out_h + oy) * out_w + ox) * c;
        const T w00 = (T(1) - a.f) * (T(1) - e.f), w01 = (T(1) - a.f) * e.f;
        const T w10 = a.f * (T(1) - e.f), w11 = a.f * e.f;
        for (std::size_t j = 0; j < c; ++j) {
          o[j] = w00 * p00[j] + w01 * p01[j] + w10 * p10[j] + w11 * p11[j];
        }
      }
    }
  }
  const bool grad = detail::wants_grad(tape, input);
  auto result = detail::make_output<T>({n, out_h, out_w, c}, std::move(out), grad);
  if (grad) {
    tape.record([xn = input.node(), yn = result.node(), ty = std::move(ty),
                 tx = std::move(tx), n, h, w, c, out_h, out_w]() {
      if (yn->grad.empty() || !xn->requires_grad) return;
      auto& dx = xn->ensure_grad();
      for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const auto& a = ty[oy];
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const auto& e = tx[ox];
            const T* g = yn->grad.data() + ((b * out_h + oy) * out_w + ox) * c;
            T* d00 = dx.data() + ((b * h + a.i0) * w + e.i0) * c;
            T* d01 = dx.data() + ((b * h + a.i0) * w + e.i1) * c;
            T* d10 = dx.data() + ((b * h + a.i1) * w + e.i0) * c;
            T* d11 = dx.data() + ((b * h + a.i1) * w + e.i1) * c;
            const T w00 = (T(1) - a.f) * (T(1) - e.f), w01 = (T(1) - a.f) * e.f;
            const T w10 = a.f * (T(1) - e.f), w11 = a.f * e.f;
            for (std::size_t j = 0; j < c; ++j) {
              d00[j] += w00 * g[j];
              d01[j] += w01 * g[j];
              d10[j] += w10 * g[j];
              d11[j] += w11 * g[j];
            }
          }
        }
      }
    });
  }
  return result;
}

/// Affine bilinear sampler with zero padding outside the input.
///
/// theta is (N*G) x 2 x 3; sample i reads input item i / G. Output
/// coordinates (u_h, u_w) span [-1, 1] with aligned corners and map to
///   src_h = theta[0][0] u_h + theta[0][1] u_w + theta[0][2]
///   src_w = theta[1][0] u_h + theta[1][1] u_w + theta[1][2]
/// so row 0 drives the height axis and row 1 the width axis.
template <typename T>
Tensor<T> grid_sample_affine(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& theta,
                             std::size_t out_h, std::size_t out_w) {
  detail::require_rank(input.shape(), 4, "grid_sample_affine");
  detail::require_rank(theta.shape(), 3, "grid_sample_affine theta");
  const auto& s = input.shape();
  const std::size_t n = s[0], h = s[1], w = s[2], c = s[3];
  const std::size_t samples = theta.dim(0);
  if (theta.dim(1) != 2 || theta.dim(2) != 3 || n == 0 || samples % n != 0) {
    throw ShapeError("grid_sample_affine: theta " + shape_str(theta.shape()) +
                     " incompatible with input " + shape_str(s));
  }
  if (out_h == 0 || out_w == 0) throw ShapeError("grid_sample_affine: empty output");
  const std::size_t groups = samples / n;
  const T sy_scale = static_cast<T>(h - 1) / T(2);
  const T sx_scale = static_cast<T>(w - 1) / T(2);
  auto unit = [](std::size_t i, std::size_t len) {
    return len > 1 ? T(-1) + T(2) * static_cast<T>(i) / static_cast<T>(len - 1) : T(0);
  };

  Buffer<T> out(samples * out_h * out_w * c, T(0));
  std::vector<std::int64_t> cells;
  if (tape.tracking_kinks()) cells.reserve(samples * out_h * out_w * 2);
  const T* x = input.data();
  const T* th = theta.data();
  for (std::size_t i = 0; i < samples; ++i) {
    const T* t = th + i * 6;
    const std::size_t b = i / groups;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const T uh = unit(oy, out_h);
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const T uw = unit(ox, out_w);
        const T py = (t[0] * uh + t[1] * uw + t[2] + T(1)) * sy_scale;
        const T px = (t[3] * uh + t[4] * uw + t[5] + T(1)) * sx_scale;
        const T fy = std::floor(py), fx = std::floor(px);
        const auto y0 = static_cast<std::int64_t>(fy), x0 = static_cast<std::int64_t>(fx);
        if (tape.tracking_kinks()) {
          cells.push_back(y0);
          cells.push_back(x0);
        }
        const T ay = py - fy, ax = px - fx;
        T* o = out.data() + ((i * out_h + oy) * out_w + ox) * c;
        for (int dy = 0; dy < 2; ++dy) {
          const auto yy = y0 + dy;
          if (yy < 0 || yy >= static_cast<std::int64_t>(h)) continue;
          const T wy = dy ? ay : T(1) - ay;
          for (int dxi = 0; dxi < 2; ++dxi) {
            const auto xx = x0 + dxi;
            if (xx < 0 || xx >= static_cast<std::int64_t>(w)) continue;
            const T wgt = wy * (dxi ? ax : T(1) - ax);
            const T* p = x + ((b * h + yy) * w + xx) * c;
            for (std::size_t j = 0; j < c; ++j) o[j] += wgt * p[j];
          }
        }
      }
    }
  }
  if (tape.tracking_kinks()) tape.mix_kink(detail::hash_ints(cells));
  const bool grad = detail::wants_grad(tape, input, theta);
  auto result = detail::make_output<T>({samples, out_h, out_w, c}, std::move(out), grad);
  if (grad) {
    tape.record([xn = input.node(), tn = theta.node(), yn = result.node(), h, w, c, samples,
                 groups, out_h, out_w, sy_scale, sx_scale, unit]() {
      if (yn->grad.empty()) return;
      const bool want_x = xn->requires_grad, want_t = tn->requires_grad;
      T* dx = want_x ? xn->ensure_grad().data() : nullptr;
      T* dt = want_t ? tn->ensure_grad().data() : nullptr;
      const T* x = xn->value.data();
      for (std::size_t i = 0; i < samples; ++i) {
        const T* t = tn->value.data() + i * 6;
        const std::size_t b = i / groups;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const T uh = unit(oy, out_h);
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const T uw = unit(ox, out_w);
            const T py = (t[0] * uh + t[1] * uw + t[2] + T(1)) * sy_scale;
            const T px = (t[3] * uh + t[4] * uw + t[5] + T(1)) * sx_scale;
            const T fy = std::floor(py), fx = std::floor(px);
            const auto y0 = static_cast<std::int64_t>(fy), x0 = static_cast<std::int64_t>(fx);
            const T ay = py - fy, ax = px - fx;
            const T* g = yn->grad.data() + ((i * out_h + oy) * out_w + ox) * c;
            T dpy = T(0), dpx = T(0);
            for (int dy = 0; dy < 2; ++dy) {
              const auto yy = y0 + dy;
              if (yy < 0 || yy >= static_cast<std::int64_t>(h)) continue;
              const T wy = dy ? ay : T(1) - ay;
              const T dwy = dy ? T(1) : T(-1);
              for (int dxi = 0; dxi < 2; ++dxi) {
                const auto xx = x0 + dxi;
                if (xx < 0 || xx >= static_cast<std::int64_t>(w)) continue;
                const T wx = dxi ? ax : T(1) - ax;
                const T dwx = dxi ? T(1) : T(-1);
                const std::size_t base = ((b * h + yy) * w + xx) * c;
                T dot = T(0);
                for (std::size_t j = 0; j < c; ++j) {
                  dot += g[j] * x[base + j];
                  if (dx) dx[base + j] += wy * wx * g[j];
                }
                dpy += dwy * wx * dot;
                dpx += wy * dwx * dot;
              }
            }
            if (dt) {
              const T gy = dpy * sy_scale, gx = dpx * sx_scale;
              T* d = dt + i * 6;
              d[0] += gy * uh;
              d[1] += gy * uw;
              d[2] += gy;
              d[3] += gx * uh;
              d[4] += gx * uw;
              d[5] += gx;
            }
          }
        }
      }
    });
  }
  return result;
}

/// Builds per-region affine matrices [[s_h, 0, t_h], [0, s_w, t_w]] from an
/// N x T x 2 offset tensor, giving (N*T) x 2 x 3.
template <typename T>
Tensor<T> offsets_to_theta(Tape<T>& tape, const Tensor<T>& offsets, T scale_h, T scale_w) {
  detail::require_rank(offsets.shape(), 3, "offsets_to_theta");
  if (offsets.dim(2) != 2) {
    throw ShapeError("offsets_to_theta: expected N x T x 2, got " + shape_str(offsets.shape()));
  }
  const std::size_t count = offsets.dim(0) * offsets.dim(1);
  Buffer<T> out(count * 6, T(0));
  for (std::size_t i = 0; i < count; ++i) {
    out[i * 6 + 0] = scale_h;
    out[i * 6 + 2] = offsets.values()[i * 2];
    out[i * 6 + 4] = scale_w;
    out[i * 6 + 5] = offsets.values()[i * 2 + 1];
  }
  const bool grad = detail::wants_grad(tape, offsets);
  auto result = detail::make_output<T>({count, 2, 3}, std::move(out), grad);
  if (grad) {
    tape.record([on = offsets.node(), yn = result.node(), count]() {
      if (yn->grad.empty() || !on->requires_grad) return;
      auto& d = on->ensure_grad();
      for (std::size_t i = 0; i < count; ++i) {
        d[i * 2] += yn->grad[i * 6 + 2];
        d[i * 2 + 1] += yn->grad[i * 6 + 5];
      }
    });
  }
  return result;
}

/// Mean softmax cross-entropy over the rows of an N x K logit matrix.
template <typename T>
Tensor<T> softmax_cross_entropy(Tape<T>& tape, const Tensor<T>& logits,
                                std::span<const std::size_t> labels) {
  const std::size_t k = logits.rank() ? logits.shape().back() : 0;
  if (k == 0) throw ShapeError("softmax_cross_entropy: empty logits");
  const std::size_t n = logits.size() / k;
  if (labels.size() != n) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(n) + " rows but " +
                     std::to_string(labels.size()) + " labels");
  }
  for (auto l : labels) {
    if (l >= k) {
      throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(l) +
                              " outside [0, " + std::to_string(k) + ")");
    }
  }
  Buffer<T> probs(logits.size());
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const T* z = logits.data() + r * k;
    const T zmax = *std::max_element(z, z + k);
    double denom = 0.0;
    for (std::size_t j = 0; j < k; ++j) denom += std::exp(static_cast<double>(z[j] - zmax));
    const double log_denom = std::log(denom);
    for (std::size_t j = 0; j < k; ++j) {
      probs[r * k + j] = static_cast<T>(std::exp(static_cast<double>(z[j] - zmax) - log_denom));
    }
    total += log_denom - static_cast<double>(z[labels[r]] - zmax);
  }
  const bool grad = detail::wants_grad(tape, logits);
  auto result = Tensor<T>(Shape{}, Buffer<T>{static_cast<T>(total / n)}, grad);
  if (grad) {
    std::vector<std::size_t> lab(labels.begin(), labels.end());
    tape.record([zn = logits.node(), yn = result.node(), probs = std::move(probs),
                 lab = std::move(lab), n, k]() {
      if (yn->grad.empty() || !zn->requires_grad) return;
      auto& dz = zn->ensure_grad();
      const T g = yn->grad[0] / static_cast<T>(n);
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t j = 0; j < k; ++j) {
          const T target = j == lab[r] ? T(1) : T(0);
          dz[r * k + j] += g * (probs[r * k + j] - target);
        }
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> softmax_cross_entropy(Tape<T>& tape, const Tensor<T>& logits, std::size_t label) {
  const std::size_t one[1] = {label};
  return softmax_cross_entropy(tape, logits, std::span<const std::size_t>(one, 1));
}

/// Elementwise sum of equally shaped tensors.
template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  Buffer<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  const bool grad = detail::wants_grad(tape, a, b);
  auto result = detail::make_output<T>(a.shape(), std::move(out), grad);
  if (grad) {
    tape.record([an = a.node(), bn = b.node(), yn = result.node()]() {
      if (yn->grad.empty()) return;
      for (auto* node : {an.get(), bn.get()}) {
        if (!node->requires_grad) continue;
        auto& d = node->ensure_grad();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += yn->grad[i];
      }
    });
  }
  return result;
}

/// Elementwise product with broadcasting over extents equal to 1. Operands
/// must have equal rank.
template <typename T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (as.size() != bs.size()) {
    throw ShapeError("mul: rank mismatch " + shape_str(as) + " vs " + shape_str(bs));
  }
  const std::size_t r = as.size();
  Shape os(r);
  for (std::size_t d = 0; d < r; ++d) {
    if (as[d] != bs[d] && as[d] != 1 && bs[d] != 1) {
      throw ShapeError("mul: cannot broadcast " + shape_str(as) + " with " + shape_str(bs));
    }
    os[d] = std::max(as[d], bs[d]);
  }
  const std::size_t total = shape_numel(os);
  // Flat operand offsets per output element.
  std::vector<std::size_t> ia, ib;
  const bool same = as == bs;
  if (!same) {
    ia.resize(total);
    ib.resize(total);
    std::vector<std::size_t> sa(r, 0), sb(r, 0);
    std::size_t acc_a = 1, acc_b = 1;
    for (std::size_t d = r; d-- > 0;) {
      sa[d] = as[d] == 1 ? 0 : acc_a;
      sb[d] = bs[d] == 1 ? 0 : acc_b;
      acc_a *= as[d];
      acc_b *= bs[d];
    }
    std::vector<std::size_t> idx(r, 0);
    std::size_t oa = 0, ob = 0;
    for (std::size_t i = 0; i < total; ++i) {
      ia[i] = oa;
      ib[i] = ob;
      for (std::size_t d = r; d-- > 0;) {
        ++idx[d];
        oa += sa[d];
        ob += sb[d];
        if (idx[d] < os[d]) break;
        oa -= sa[d] * idx[d];
        ob -= sb[d] * idx[d];
        idx[d] = 0;
      }
    }
  }
  Buffer<T> out(total);
  const T* av = a.data();
  const T* bv = b.data();
  if (same) {
    for (std::size_t i = 0; i < total; ++i) out[i] = av[i] * bv[i];
  } else {
    for (std::size_t i = 0; i < total; ++i) out[i] = av[ia[i]] * bv[ib[i]];
  }
  const bool grad = detail::wants_grad(tape, a, b);
  auto result = detail::make_output<T>(std::move(os), std::move(out), grad);
  if (grad) {
    tape.record([an = a.node(), bn = b.node(), yn = result.node(), ia = std::move(ia),
                 ib = std::move(ib), same, total]() {
      if (yn->grad.empty()) return;
      const auto& g = yn->grad;
      if (an->requires_grad) {
        auto& d = an->ensure_grad();
        for (std::size_t i = 0; i < total; ++i) {
          d[same ? i : ia[i]] += g[i] * bn->value[same ? i : ib[i]];
        }
      }
      if (bn->requires_grad) {
        auto& d = bn->ensure_grad();
        for (std::size_t i = 0; i < total; ++i) {
          d[same ? i : ib[i]] += g[i] * an->value[same ? i : ia[i]];
        }
      }
    });
  }
  return result;
}

/// scale * x + shift with constant coefficients.
template <typename T>
Tensor<T> affine(Tape<T>& tape, const Tensor<T>& x, T scale, T shift) {
  Buffer<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = scale * x.values()[i] + shift;
  const bool grad = detail::wants_grad(tape, x);
  auto result = detail::make_output<T>(x.shape(), std::move(out), grad);
  if (grad) {
    tape.record([xn = x.node(), yn = result.node(), scale]() {
      if (yn->grad.empty() || !xn->requires_grad) return;
      auto& d = xn->ensure_grad();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += scale * yn->grad[i];
    });
  }
  return result;
}

template <typename T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& x, T factor) {
  return affine(tape, x, factor, T(0));
}

template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& x) {
  double acc = 0.0;
  for (auto v : x.values()) acc += v;
  const bool grad = detail::wants_grad(tape, x);
  auto result = Tensor<T>(Shape{}, Buffer<T>{static_cast<T>(acc)}, grad);
  if (grad) {
    tape.record([xn = x.node(), yn = result.node()]() {
      if (yn->grad.empty() || !xn->requires_grad) return;
      auto& d = xn->ensure_grad();
      for (auto& v : d) v += yn->grad[0];
    });
  }
  return result;
}

/// Concatenation along the last axis; all leading extents must agree.
template <typename T>
Tensor<T> concat_last(Tape<T>& tape, const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_last: no inputs");
  Shape lead = parts.front().shape();
  lead.pop_back();
  std::size_t total_c = 0;
  bool grad = false;
  for (const auto& p : parts) {
    Shape l = p.shape();
    const std::size_t c = l.back();
    l.pop_back();
    if (l != lead) {
      throw ShapeError("concat_last: " + shape_str(p.shape()) + " vs " +
                       shape_str(parts.front().shape()));
    }
    total_c += c;
    grad = grad || detail::wants_grad(tape, p);
  }
  const std::size_t rows = shape_numel(lead);
  Buffer<T> out(rows * total_c);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t c = p.shape().back();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(p.data() + r * c, c, out.data() + r * total_c + offset);
    }
    offset += c;
  }
  Shape os = lead;
  os.push_back(total_c);
  auto result = detail::make_output<T>(std::move(os), std::move(out), grad);
  if (grad) {
    std::vector<std::shared_ptr<TensorNode<T>>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    tape.record([nodes = std::move(nodes), yn = result.node(), rows, total_c]() {
      if (yn->grad.empty()) return;
      std::size_t off = 0;
      for (const auto& node : nodes) {
        const std::size_t c = node->shape.back();
        if (node->requires_grad) {
          auto& d = node->ensure_grad();
          for (std::size_t r = 0; r < rows; ++r) {
            const T* g = yn->grad.data() + r * total_c + off;
            for (std::size_t j = 0; j < c; ++j) d[r * c + j] += g[j];
          }
        }
        off += c;
      }
    });
  }
  return result;
}

/// Same values under a new shape of equal size.
template <typename T>
Tensor<T> reshape(Tape<T>& tape, const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.size()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  Buffer<T> out(x.values().begin(), x.values().end());
  const bool grad = detail::wants_grad(tape, x);
  auto result = detail::make_output<T>(std::move(shape), std::move(out), grad);
  if (grad) {
    tape.record([xn = x.node(), yn = result.node()]() {
      if (yn->grad.empty() || !xn->requires_grad) return;
      auto& d = xn->ensure_grad();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += yn->grad[i];
    });
  }
  return result;
}

}  // namespace hacnn::ops
