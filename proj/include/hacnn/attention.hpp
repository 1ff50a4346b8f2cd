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
#include <string>
#include <vector>

#include "hacnn/layers.hpp"
#include "hacnn/ops.hpp"

namespace hacnn {

/// Fixed region placement for one attention level: regions of
/// region_h x region_w are sampled from a host_h x host_w map with scales
/// region / host along each axis.
struct RegionGeometry {
  std::size_t host_h = 0, host_w = 0;
  std::size_t region_h = 0, region_w = 0;

  double scale_h() const { return static_cast<double>(region_h) / host_h; }
  double scale_w() const { return static_cast<double>(region_w) / host_w; }
};

struct AttentionSwitches {
  bool spatial = true;
  bool channel = true;
  bool hard = true;

  bool soft() const { return spatial || channel; }
};

/// Outputs of one harmonious attention invocation.
template <typename T>
struct AttentionBundle {
  Tensor<T> spatial;    // N x h x w x 1, raw; undefined when disabled
  Tensor<T> channel;    // N x 1 x 1 x c, raw; undefined when disabled
  Tensor<T> full;       // N x h x w x c in [0.5, 1]; all ones when soft attention is off
  Tensor<T> offsets;    // N x T x 2 in [-1, 1]; zeros when hard attention is off
  Tensor<T> signature;  // N x c squeeze output shared by channel and hard attention
};

/// Squeeze: per-channel spatial mean, N x h x w x c -> N x c.
template <typename T>
Tensor<T> squeeze(Tape<T>& tape, const Tensor<T>& x) {
  auto pooled = ops::global_avg_pool(tape, x);
  return ops::reshape(tape, pooled, {x.dim(0), x.dim(3)});
}

/// A0 = S x C by broadcasting, 1x1 fusion conv, then 0.5 + 0.5 sigmoid.
/// Either factor may be undefined, in which case it acts as all ones.
template <typename T>
Tensor<T> fuse_soft_attention(Tape<T>& tape, const Tensor<T>& spatial,
                              const Tensor<T>& channel, const Tensor<T>& fusion_weights) {
  Tensor<T> product;
  if (spatial.defined() && channel.defined()) {
    if (spatial.dim(0) != channel.dim(0) || spatial.dim(3) != 1 || channel.dim(1) != 1 ||
        channel.dim(2) != 1) {
      throw ShapeError("fuse_soft_attention: spatial " + shape_str(spatial.shape()) +
                       " and channel " + shape_str(channel.shape()));
    }
    product = ops::mul(tape, spatial, channel);
  } else if (spatial.defined()) {
    const std::size_t c = fusion_weights.dim(2);
    auto ones = Tensor<T>::filled({spatial.dim(0), 1, 1, c}, T(1));
    product = ops::mul(tape, spatial, ones);
  } else if (channel.defined()) {
    throw std::invalid_argument(
        "fuse_soft_attention: channel-only fusion needs the map size; use the module");
  } else {
    throw std::invalid_argument("fuse_soft_attention: no attention factor given");
  }
  auto z = ops::conv2d(tape, product, fusion_weights, 1, 0);
  return ops::affine(tape, ops::sigmoid(tape, z), T(0.5), T(0.5));
}

/// Elementwise X (.) A.
template <typename T>
Tensor<T> apply_soft_attention(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& full) {
  if (x.shape() != full.shape()) {
    throw ShapeError("apply_soft_attention: features " + shape_str(x.shape()) +
                     " vs attention " + shape_str(full.shape()));
  }
  return ops::mul(tape, x, full);
}

/// Samples T regions per item with theta_k = [[s_h, 0, t_h], [0, s_w, t_w]].
/// Returns (N*T) x region_h x region_w x c, regions of item n contiguous.
template <typename T>
Tensor<T> extract_regions(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& offsets,
                          const RegionGeometry& g) {
  if (offsets.rank() != 3 || offsets.dim(0) != x.dim(0) || offsets.dim(2) != 2) {
    throw ShapeError("extract_regions: offsets " + shape_str(offsets.shape()) +
                     " for features " + shape_str(x.shape()));
  }
  auto theta = ops::offsets_to_theta(tape, offsets, static_cast<T>(g.scale_h()),
                                     static_cast<T>(g.scale_w()));
  return ops::grid_sample_affine(tape, x, theta, g.region_h, g.region_w);
}

/// The harmonious attention module: soft spatial + soft channel attention
/// fused into one map, plus hard regional offsets from the shared squeeze.
template <typename T>
class HarmoniousAttention {
 public:
  HarmoniousAttention() = default;
  HarmoniousAttention(std::uint64_t seed, const std::string& name, std::size_t channels,
                      std::size_t streams, std::size_t reduction, AttentionSwitches switches)
      : name_(name),
        channels_(channels),
        streams_(streams),
        reduction_(reduction),
        switches_(switches) {
    if (reduction == 0 || channels % reduction != 0) {
      throw std::invalid_argument("attention: channels " + std::to_string(channels) +
                                  " not divisible by reduction rate " +
                                  std::to_string(reduction));
    }
    Initializer<T> init(seed, name);
    const std::size_t mid = channels / reduction;
    if (switches.spatial) {
      spatial_conv_ = init.normal({3, 3, 1, 1}, std::sqrt(2.0 / 9.0), "spatial.conv");
      spatial_scale_ = init.constant({1, 1, 1, 1}, T(1), "spatial.scale");
    }
    if (switches.channel) {
      excite_reduce_ = init.normal({mid, channels}, std::sqrt(2.0 / channels), "channel.reduce");
      excite_expand_ = init.normal({channels, mid}, std::sqrt(2.0 / mid), "channel.expand");
    }
    if (switches.soft()) {
      fusion_ = init.normal({1, 1, channels, channels}, std::sqrt(1.0 / channels),
                            "fusion.weight");
    }
    if (switches.hard) {
      hard_ = init.normal({2 * streams, channels}, std::sqrt(1.0 / channels), "hard.weight");
    }
  }

  /// Cross-channel mean, 3x3/2 conv, bilinear resize back to h x w, scalar scale.
  Tensor<T> spatial_attention(Tape<T>& tape, const Tensor<T>& x) const {
    if (x.dim(1) < 2 || x.dim(2) < 2) {
      throw ShapeError("spatial_attention: map " + shape_str(x.shape()) + " smaller than 2x2");
    }
    auto pooled = ops::cross_channel_avg_pool(tape, x);
    auto reduced = ops::conv2d(tape, pooled, spatial_conv_, 2, 1);
    auto resized = ops::bilinear_resize(tape, reduced, x.dim(1), x.dim(2));
    return ops::mul(tape, resized, spatial_scale_);
  }

  /// relu(W2 relu(W1 s)) on a squeeze signature, returned as N x 1 x 1 x c.
  Tensor<T> excite(Tape<T>& tape, const Tensor<T>& signature) const {
    auto hidden = ops::relu(tape, ops::linear(tape, signature, excite_reduce_));
    auto gates = ops::relu(tape, ops::linear(tape, hidden, excite_expand_));
    return ops::reshape(tape, gates, {signature.dim(0), 1, 1, channels_});
  }

  Tensor<T> channel_attention(Tape<T>& tape, const Tensor<T>& x) const {
    return excite(tape, squeeze(tape, x));
  }

  /// tanh(W_hard s) reshaped to N x T x 2.
  Tensor<T> hard_offsets(Tape<T>& tape, const Tensor<T>& signature) const {
    auto t = ops::tanh(tape, ops::linear(tape, signature, hard_));
    return ops::reshape(tape, t, {signature.dim(0), streams_, 2});
  }

  AttentionBundle<T> forward(Tape<T>& tape, const Tensor<T>& x) const {
    if (x.rank() != 4 || x.dim(3) != channels_) {
      throw ShapeError(name_ + ": expected N x h x w x " + std::to_string(channels_) +
                       " input, got " + shape_str(x.shape()));
    }
    const std::size_t n = x.dim(0);
    AttentionBundle<T> out;
    out.signature = squeeze(tape, x);
    if (switches_.spatial) out.spatial = spatial_attention(tape, x);
    if (switches_.channel) out.channel = excite(tape, out.signature);
    if (switches_.soft()) {
      Tensor<T> s = out.spatial;
      if (!s.defined()) s = Tensor<T>::filled({n, x.dim(1), x.dim(2), 1}, T(1));
      out.full = fuse_soft_attention(tape, s, out.channel, fusion_);
    } else {
      out.full = Tensor<T>::filled(x.shape(), T(1));
    }
    if (switches_.hard) {
      out.offsets = hard_offsets(tape, out.signature);
    } else {
      out.offsets = Tensor<T>::zeros({n, streams_, 2});
    }
    return out;
  }

  const AttentionSwitches& switches() const { return switches_; }
  std::size_t channels() const { return channels_; }
  std::size_t streams() const { return streams_; }

  std::size_t spatial_parameter_count() const { return switches_.spatial ? 10 : 0; }
  std::size_t channel_parameter_count() const {
    return switches_.channel ? 2 * channels_ * channels_ / reduction_ : 0;
  }
  std::size_t fusion_parameter_count() const {
    return switches_.soft() ? channels_ * channels_ : 0;
  }
  std::size_t hard_parameter_count() const {
    return switches_.hard ? 2 * streams_ * channels_ : 0;
  }

  /// Inventory rows for a module attending an h x w x c map.
  void describe(std::vector<LayerInfo>& out, std::size_t h, std::size_t w) const {
    const double c = static_cast<double>(channels_);
    const double hw = static_cast<double>(h) * w;
    auto row = [&](const std::string& sub, const std::string& kind, std::size_t params,
                   double flops) {
      LayerInfo li;
      li.name = name_ + "." + sub + "." + kind;
      li.component = name_ + "." + sub;
      li.kind = kind;
      li.in_h = h;
      li.in_w = w;
      li.in_c = channels_;
      li.params = params;
      li.flops = flops;
      out.push_back(li);
    };
    row("channel", "squeeze", 0, hw * c);
    if (switches_.spatial) {
      const double sh = static_cast<double>(ceil_half(h)), sw = static_cast<double>(ceil_half(w));
      row("spatial", "channel_mean", 0, hw * c);
      row("spatial", "conv3x3/s2", 9, 2.0 * 9.0 * sh * sw);
      row("spatial", "resize", 0, 8.0 * hw);
      row("spatial", "scale", 1, 2.0 * hw);
    }
    if (switches_.channel) {
      const double mid = c / static_cast<double>(reduction_);
      row("channel", "fc_reduce", channels_ * channels_ / reduction_, 2.0 * c * mid);
      row("channel", "fc_expand", channels_ * channels_ / reduction_, 2.0 * c * mid);
    }
    if (switches_.soft()) {
      row("fusion", "product", 0, hw * c);
      row("fusion", "conv1x1", channels_ * channels_, 2.0 * c * c * hw);
      row("fusion", "apply", 0, hw * c);
    }
    if (switches_.hard) {
      row("hard", "fc", 2 * streams_ * channels_, 2.0 * 2.0 * streams_ * c);
    }
  }

  void collect(std::vector<NamedTensor<T>>& p) {
    for (auto* t : {&spatial_conv_, &spatial_scale_, &excite_reduce_, &excite_expand_, &fusion_,
                    &hard_}) {
      if (t->defined()) p.push_back({t->name(), *t});
    }
  }

  const Tensor<T>& spatial_conv() const { return spatial_conv_; }
  const Tensor<T>& spatial_scale() const { return spatial_scale_; }
  const Tensor<T>& excite_reduce() const { return excite_reduce_; }
  const Tensor<T>& excite_expand() const { return excite_expand_; }
  const Tensor<T>& fusion() const { return fusion_; }
  const Tensor<T>& hard() const { return hard_; }

 private:
  std::string name_;
  std::size_t channels_ = 0, streams_ = 0, reduction_ = 1;
  AttentionSwitches switches_;
  Tensor<T> spatial_conv_, spatial_scale_;
  Tensor<T> excite_reduce_, excite_expand_;
  Tensor<T> fusion_;
  Tensor<T> hard_;
};

}  // namespace hacnn
