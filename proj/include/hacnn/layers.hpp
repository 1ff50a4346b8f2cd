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

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "hacnn/ops.hpp"
#include "hacnn/tensor.hpp"

namespace hacnn {

using ops::Mode;

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

/// One row of the model inventory used for parameter/FLOP/depth accounting.
struct LayerInfo {
  std::string name;
  std::string component;
  std::string kind;
  std::size_t in_h = 0, in_w = 0, in_c = 0;
  std::size_t out_h = 0, out_w = 0, out_c = 0;
  std::size_t params = 0;
  // Forward floating-point operations per image, all local streams included.
  double flops = 0.0;
};

inline std::uint64_t mix_seed(std::uint64_t seed, const std::string& name) {
  std::uint64_t h = 1469598103934665603ULL ^ seed;
  for (unsigned char ch : name) h = (h ^ ch) * 1099511628211ULL;
  // splitmix64 finaliser
  h += 0x9e3779b97f4a7c15ULL;
  h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ULL;
  h = (h ^ (h >> 27)) * 0x94d049bb133111ebULL;
  return h ^ (h >> 31);
}

/// Seeded parameter factory. Each module owns one, keyed by its name, so a
/// module's initial weights do not depend on which other modules exist.
template <typename T>
class Initializer {
 public:
  Initializer(std::uint64_t seed, const std::string& scope)
      : seed_(seed), scope_(scope) {}

  /// Each parameter draws from its own stream, so removing one leaves the
  /// others unchanged.
  Tensor<T> normal(Shape shape, double stddev, const std::string& name) {
    std::mt19937_64 rng(mix_seed(seed_, scope_ + "." + name));
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<T> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<T>(dist(rng));
    return named(Tensor<T>(std::move(shape), std::move(v), true), name);
  }

  Tensor<T> constant(Shape shape, T value, const std::string& name) {
    return named(Tensor<T>::filled(std::move(shape), value, true), name);
  }

  const std::string& scope() const { return scope_; }

 private:
  Tensor<T> named(Tensor<T> t, const std::string& name) {
    t.set_name(scope_ + "." + name);
    return t;
  }

  std::uint64_t seed_;
  std::string scope_;
};

/// conv -> batch norm -> relu, no conv bias.
template <typename T>
class ConvBN {
 public:
  ConvBN() = default;
  ConvBN(Initializer<T>& init, const std::string& name, std::size_t in_c, std::size_t out_c,
         std::size_t kernel, std::size_t stride = 1)
      : name_(init.scope() + "." + name),
        in_c_(in_c),
        out_c_(out_c),
        kernel_(kernel),
        stride_(stride),
        pad_(kernel / 2),
        weight_(init.normal({kernel, kernel, in_c, out_c},
                            std::sqrt(2.0 / static_cast<double>(kernel * kernel * in_c)),
                            name + ".weight")),
        gamma_(init.constant({out_c}, T(1), name + ".gamma")),
        beta_(init.constant({out_c}, T(0), name + ".beta")),
        stats_(out_c) {}

  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x, Mode mode) {
    auto y = ops::conv2d(tape, x, weight_, stride_, pad_);
    y = ops::batch_norm(tape, y, gamma_, beta_, stats_, mode);
    return ops::relu(tape, y);
  }

  std::size_t out_extent(std::size_t in) const {
    return ops::conv_output_extent(in, kernel_, stride_, pad_);
  }
  std::size_t out_channels() const { return out_c_; }
  std::size_t parameter_count() const {
    return kernel_ * kernel_ * in_c_ * out_c_ + 2 * out_c_;
  }

  LayerInfo describe(const std::string& component, std::size_t h, std::size_t w,
                     std::size_t multiplicity = 1) const {
    LayerInfo li;
    li.name = name_;
    li.component = component;
    li.kind = "conv" + std::to_string(kernel_) + "x" + std::to_string(kernel_) +
              (stride_ > 1 ? "/s" + std::to_string(stride_) : "") + "+bn";
    li.in_h = h;
    li.in_w = w;
    li.in_c = in_c_;
    li.out_h = out_extent(h);
    li.out_w = out_extent(w);
    li.out_c = out_c_;
    li.params = parameter_count();
    li.flops = 2.0 * kernel_ * kernel_ * in_c_ * out_c_ * li.out_h * li.out_w *
               static_cast<double>(multiplicity);
    return li;
  }

  void collect(std::vector<NamedTensor<T>>& params, std::vector<NamedTensor<T>>& buffers) {
    params.push_back({weight_.name(), weight_});
    params.push_back({gamma_.name(), gamma_});
    params.push_back({beta_.name(), beta_});
    buffers.push_back({name_ + ".running_mean", stats_.mean});
    buffers.push_back({name_ + ".running_var", stats_.var});
  }

  const Tensor<T>& weight() const { return weight_; }

 private:
  std::string name_;
  std::size_t in_c_ = 0, out_c_ = 0, kernel_ = 1, stride_ = 1, pad_ = 0;
  Tensor<T> weight_, gamma_, beta_;
  ops::BatchNormStats<T> stats_;
};

inline std::size_t ceil_half(std::size_t v) { return (v + 1) / 2; }

/// Four stride-1 branches of width d/4: 1x1; 1x1-3x3; 1x1-3x3-3x3;
/// 3x3 average pool-1x1.
template <typename T>
class InceptionA {
 public:
  InceptionA() = default;
  InceptionA(std::uint64_t seed, const std::string& name, std::size_t in_c, std::size_t width,
             std::size_t mid)
      : name_(name), in_c_(in_c), width_(width) {
    if (width == 0 || width % 4 != 0) {
      throw std::invalid_argument("inception-a width " + std::to_string(width) +
                                  " is not divisible by 4");
    }
    Initializer<T> init(seed, name);
    const std::size_t q = width / 4;
    b1_ = ConvBN<T>(init, "b1_1x1", in_c, q, 1);
    b2a_ = ConvBN<T>(init, "b2_1x1", in_c, mid, 1);
    b2b_ = ConvBN<T>(init, "b2_3x3", mid, q, 3);
    b3a_ = ConvBN<T>(init, "b3_1x1", in_c, mid, 1);
    b3b_ = ConvBN<T>(init, "b3_3x3a", mid, mid, 3);
    b3c_ = ConvBN<T>(init, "b3_3x3b", mid, q, 3);
    b4_ = ConvBN<T>(init, "b4_1x1", in_c, q, 1);
  }

  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x, Mode mode) {
    auto y1 = b1_.forward(tape, x, mode);
    auto y2 = b2b_.forward(tape, b2a_.forward(tape, x, mode), mode);
    auto y3 = b3c_.forward(tape, b3b_.forward(tape, b3a_.forward(tape, x, mode), mode), mode);
    auto pooled = ops::pool2d(tape, x, ops::PoolKind::average, 3, 1, 1);
    auto y4 = b4_.forward(tape, pooled, mode);
    return ops::concat_last(tape, std::vector<Tensor<T>>{y1, y2, y3, y4});
  }

  static constexpr std::size_t depth() { return 3; }
  std::size_t width() const { return width_; }

  void describe(std::vector<LayerInfo>& out, std::size_t h, std::size_t w,
                std::size_t mult = 1) const {
    for (const auto* c : {&b1_, &b2a_, &b2b_, &b3a_, &b3b_, &b3c_, &b4_}) {
      out.push_back(c->describe(name_, h, w, mult));
    }
    LayerInfo pool;
    pool.name = name_ + ".b4_avgpool";
    pool.component = name_;
    pool.kind = "avgpool3x3";
    pool.in_h = pool.out_h = h;
    pool.in_w = pool.out_w = w;
    pool.in_c = pool.out_c = in_c_;
    pool.flops = 9.0 * h * w * in_c_ * mult;
    out.push_back(pool);
  }

  void collect(std::vector<NamedTensor<T>>& p, std::vector<NamedTensor<T>>& b) {
    for (auto* c : {&b1_, &b2a_, &b2b_, &b3a_, &b3b_, &b3c_, &b4_}) c->collect(p, b);
  }

 private:
  std::string name_;
  std::size_t in_c_ = 0, width_ = 0;
  ConvBN<T> b1_, b2a_, b2b_, b3a_, b3b_, b3c_, b4_;
};

/// Three stride-2 branches: 1x1-3x3/2 (d/4); 1x1-3x3-3x3/2 (d/4);
/// 3x3/2 max pool-1x1 (d/2). Spatial extents halve with ceil division.
template <typename T>
class InceptionB {
 public:
  InceptionB() = default;
  InceptionB(std::uint64_t seed, const std::string& name, std::size_t in_c,
             std::size_t out_width, std::size_t mid)
      : name_(name), in_c_(in_c), width_(out_width) {
    if (out_width == 0 || out_width % 4 != 0) {
      throw std::invalid_argument("inception-b width " + std::to_string(out_width) +
                                  " is not divisible by 4");
    }
    Initializer<T> init(seed, name);
    const std::size_t q = out_width / 4;
    b1a_ = ConvBN<T>(init, "b1_1x1", in_c, mid, 1);
    b1b_ = ConvBN<T>(init, "b1_3x3s2", mid, q, 3, 2);
    b2a_ = ConvBN<T>(init, "b2_1x1", in_c, mid, 1);
    b2b_ = ConvBN<T>(init, "b2_3x3", mid, mid, 3);
    b2c_ = ConvBN<T>(init, "b2_3x3s2", mid, q, 3, 2);
    b3_ = ConvBN<T>(init, "b3_1x1", in_c, out_width / 2, 1);
  }

  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x, Mode mode) {
    auto y1 = b1b_.forward(tape, b1a_.forward(tape, x, mode), mode);
    auto y2 = b2c_.forward(tape, b2b_.forward(tape, b2a_.forward(tape, x, mode), mode), mode);
    auto pooled = ops::pool2d(tape, x, ops::PoolKind::max, 3, 2, 1);
    auto y3 = b3_.forward(tape, pooled, mode);
    return ops::concat_last(tape, std::vector<Tensor<T>>{y1, y2, y3});
  }

  static constexpr std::size_t depth() { return 3; }
  std::size_t width() const { return width_; }

  void describe(std::vector<LayerInfo>& out, std::size_t h, std::size_t w,
                std::size_t mult = 1) const {
    out.push_back(b1a_.describe(name_, h, w, mult));
    out.push_back(b1b_.describe(name_, h, w, mult));
    out.push_back(b2a_.describe(name_, h, w, mult));
    out.push_back(b2b_.describe(name_, h, w, mult));
    out.push_back(b2c_.describe(name_, h, w, mult));
    LayerInfo pool;
    pool.name = name_ + ".b3_maxpool";
    pool.component = name_;
    pool.kind = "maxpool3x3/s2";
    pool.in_h = h;
    pool.in_w = w;
    pool.in_c = pool.out_c = in_c_;
    pool.out_h = ceil_half(h);
    pool.out_w = ceil_half(w);
    pool.flops = 9.0 * pool.out_h * pool.out_w * in_c_ * mult;
    out.push_back(pool);
    out.push_back(b3_.describe(name_, pool.out_h, pool.out_w, mult));
  }

  void collect(std::vector<NamedTensor<T>>& p, std::vector<NamedTensor<T>>& b) {
    for (auto* c : {&b1a_, &b1b_, &b2a_, &b2b_, &b2c_, &b3_}) c->collect(p, b);
  }

 private:
  std::string name_;
  std::size_t in_c_ = 0, width_ = 0;
  ConvBN<T> b1a_, b1b_, b2a_, b2b_, b2c_, b3_;
};

/// Fully connected layer, weights out x in, optional bias.
template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(Initializer<T>& init, const std::string& name, std::size_t in, std::size_t out,
         bool bias = true)
      : name_(init.scope() + "." + name),
        in_(in),
        out_(out),
        weight_(init.normal({out, in}, std::sqrt(1.0 / static_cast<double>(in)),
                            name + ".weight")) {
    if (bias) bias_ = init.constant({out}, T(0), name + ".bias");
  }

  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x) const {
    return ops::linear(tape, x, weight_, bias_);
  }

  std::size_t parameter_count() const { return in_ * out_ + (bias_.defined() ? out_ : 0); }

  LayerInfo describe(const std::string& component) const {
    LayerInfo li;
    li.name = name_;
    li.component = component;
    li.kind = "fc";
    li.in_h = li.in_w = li.out_h = li.out_w = 1;
    li.in_c = in_;
    li.out_c = out_;
    li.params = parameter_count();
    li.flops = 2.0 * in_ * out_;
    return li;
  }

  void collect(std::vector<NamedTensor<T>>& p) {
    p.push_back({weight_.name(), weight_});
    if (bias_.defined()) p.push_back({bias_.name(), bias_});
  }

  const Tensor<T>& weight() const { return weight_; }

 private:
  std::string name_;
  std::size_t in_ = 0, out_ = 0;
  Tensor<T> weight_, bias_;
};

/// FC feature layer followed by batch norm and relu.
template <typename T>
class FeatureHead {
 public:
  FeatureHead() = default;
  FeatureHead(std::uint64_t seed, const std::string& name, std::size_t in, std::size_t out)
      : name_(name), out_(out) {
    Initializer<T> init(seed, name);
    fc_ = Linear<T>(init, "fc", in, out);
    gamma_ = init.constant({out}, T(1), "bn.gamma");
    beta_ = init.constant({out}, T(0), "bn.beta");
    stats_ = ops::BatchNormStats<T>(out);
  }

  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x, Mode mode) {
    auto y = fc_.forward(tape, x);
    y = ops::batch_norm(tape, y, gamma_, beta_, stats_, mode);
    return ops::relu(tape, y);
  }

  void describe(std::vector<LayerInfo>& out) const {
    auto li = fc_.describe(name_);
    li.params += 2 * out_;
    li.kind = "fc+bn";
    out.push_back(li);
  }

  void collect(std::vector<NamedTensor<T>>& p, std::vector<NamedTensor<T>>& b) {
    fc_.collect(p);
    p.push_back({gamma_.name(), gamma_});
    p.push_back({beta_.name(), beta_});
    b.push_back({name_ + ".bn.running_mean", stats_.mean});
    b.push_back({name_ + ".bn.running_var", stats_.var});
  }

 private:
  std::string name_;
  std::size_t out_ = 0;
  Linear<T> fc_;
  Tensor<T> gamma_, beta_;
  ops::BatchNormStats<T> stats_;
};

}  // namespace hacnn
