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

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hacnn/attention.hpp"
#include "hacnn/config.hpp"
#include "hacnn/layers.hpp"
#include "hacnn/ops.hpp"

namespace hacnn {

/// Architecture hyperparameters. Level l (1-based) hosts a map of
/// ceil(input / 2^l) and samples regions of region_size / 2^(l-1).
struct ModelConfig {
  std::size_t input_height = 160;
  std::size_t input_width = 64;
  std::size_t stem_width = 32;
  std::vector<std::size_t> widths{128, 256, 384};
  std::size_t streams = 4;
  std::size_t reduction = 16;
  std::size_t region_height = 24;
  std::size_t region_width = 28;
  std::size_t feature_dim = 512;
  std::size_t num_classes = 751;
  std::size_t bottleneck_divisor = 8;
  bool use_spatial = true;
  bool use_channel = true;
  bool use_hard = true;
  bool use_cail = true;
  std::uint64_t seed = 1;

  std::size_t levels() const { return widths.size(); }

  RegionGeometry geometry(std::size_t level) const {
    RegionGeometry g;
    g.host_h = input_height;
    g.host_w = input_width;
    for (std::size_t i = 0; i < level; ++i) {
      g.host_h = ceil_half(g.host_h);
      g.host_w = ceil_half(g.host_w);
    }
    g.region_h = region_height >> (level - 1);
    g.region_w = region_width >> (level - 1);
    return g;
  }

  std::size_t mid_width(std::size_t width) const {
    return std::max<std::size_t>(1, width / bottleneck_divisor);
  }

  AttentionSwitches switches() const { return {use_spatial, use_channel, use_hard}; }

  void validate() const {
    auto fail = [](const std::string& msg) { throw std::invalid_argument("model config: " + msg); };
    if (widths.empty()) fail("at least one level is required");
    if (streams == 0) fail("streams must be positive");
    if (num_classes == 0) fail("num_classes must be positive");
    if (feature_dim == 0 || stem_width == 0 || bottleneck_divisor == 0) fail("zero width");
    for (std::size_t i = 0; i < widths.size(); ++i) {
      if (widths[i] == 0 || widths[i] % 4 != 0) fail("width " + std::to_string(widths[i]) + " not divisible by 4");
      if (reduction == 0 || widths[i] % reduction != 0) {
        fail("width " + std::to_string(widths[i]) + " not divisible by reduction " +
             std::to_string(reduction));
      }
      if (i && widths[i] < widths[i - 1]) fail("widths must be non-decreasing");
    }
    const std::size_t halvings = std::size_t{1} << (widths.size() - 1);
    if (region_height % halvings != 0 || region_width % halvings != 0 || region_height == 0 ||
        region_width == 0) {
      fail("region size " + std::to_string(region_height) + "x" + std::to_string(region_width) +
           " cannot be halved exactly across " + std::to_string(widths.size()) + " levels");
    }
    for (std::size_t l = 1; l <= widths.size(); ++l) {
      const auto g = geometry(l);
      if (g.host_h < 2 || g.host_w < 2) fail("level " + std::to_string(l) + " map is smaller than 2x2");
      if (g.region_h > g.host_h || g.region_w > g.host_w) {
        fail("level " + std::to_string(l) + " region " + std::to_string(g.region_h) + "x" +
             std::to_string(g.region_w) + " exceeds host map " + std::to_string(g.host_h) + "x" +
             std::to_string(g.host_w));
      }
    }
  }

  kv::Map to_kv() const {
    kv::Map m;
    m["input_height"] = kv::format(input_height);
    m["input_width"] = kv::format(input_width);
    m["stem_width"] = kv::format(stem_width);
    m["widths"] = kv::format(widths);
    m["streams"] = kv::format(streams);
    m["reduction"] = kv::format(reduction);
    m["region_height"] = kv::format(region_height);
    m["region_width"] = kv::format(region_width);
    m["feature_dim"] = kv::format(feature_dim);
    m["num_classes"] = kv::format(num_classes);
    m["bottleneck_divisor"] = kv::format(bottleneck_divisor);
    m["use_spatial"] = kv::format(use_spatial);
    m["use_channel"] = kv::format(use_channel);
    m["use_hard"] = kv::format(use_hard);
    m["use_cail"] = kv::format(use_cail);
    m["seed"] = kv::format(seed);
    return m;
  }

  void apply(const kv::Map& m) {
    kv::read(m, "input_height", input_height);
    kv::read(m, "input_width", input_width);
    kv::read(m, "stem_width", stem_width);
    kv::read(m, "widths", widths);
    kv::read(m, "streams", streams);
    kv::read(m, "reduction", reduction);
    kv::read(m, "region_height", region_height);
    kv::read(m, "region_width", region_width);
    kv::read(m, "feature_dim", feature_dim);
    kv::read(m, "num_classes", num_classes);
    kv::read(m, "bottleneck_divisor", bottleneck_divisor);
    kv::read(m, "use_spatial", use_spatial);
    kv::read(m, "use_channel", use_channel);
    kv::read(m, "use_hard", use_hard);
    kv::read(m, "use_cail", use_cail);
    kv::read(m, "seed", seed);
  }

  static ModelConfig from_kv(const kv::Map& m) {
    ModelConfig c;
    c.apply(m);
    return c;
  }

  bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct ForwardOutputs {
  Tensor<T> global_logits;    // N x num_classes
  Tensor<T> local_logits;     // N x num_classes
  Tensor<T> global_features;  // N x feature_dim
  Tensor<T> local_features;   // N x feature_dim
  std::vector<AttentionBundle<T>> attention;
  std::vector<Tensor<T>> global_blocks;  // block outputs before soft attention
  std::vector<Tensor<T>> attended;       // block outputs after soft attention
  std::vector<Tensor<T>> local_blocks;   // (N*T) x h x w x c per level
  // 1-based global levels whose features entered the local path.
  std::vector<std::size_t> global_levels_read_by_local;
};

/// Diagnostic overrides; used to check that ablated models equal the full
/// model with attention neutralised.
struct ForwardOptions {
  bool unit_soft_attention = false;
  bool centered_regions = false;
};

/// Local/global interaction: elementwise sum of a local stream
/// feature and the matching crop of the attended global feature.
template <typename T>
Tensor<T> cross_attention_add(Tape<T>& tape, const Tensor<T>& local, const Tensor<T>& crop) {
  if (local.shape() != crop.shape()) {
    throw ShapeError("cross_attention_add: local " + shape_str(local.shape()) +
                     " vs global crop " + shape_str(crop.shape()));
  }
  return ops::add(tape, local, crop);
}

template <typename T>
class Model {
 public:
  explicit Model(ModelConfig config) : config_(std::move(config)) {
    config_.validate();
    const auto seed = config_.seed;
    const auto& d = config_.widths;
    const std::size_t levels = config_.levels();
    {
      Initializer<T> init(seed, "stem");
      stem_ = ConvBN<T>(init, "conv", 3, config_.stem_width, 3);
    }
    std::size_t in_c = config_.stem_width;
    for (std::size_t l = 0; l < levels; ++l) {
      const std::string lvl = std::to_string(l + 1);
      global_b_.emplace_back(seed, "global" + lvl + ".inception_b", in_c, d[l],
                             config_.mid_width(d[l]));
      global_a_.emplace_back(seed, "global" + lvl + ".inception_a", d[l], d[l],
                             config_.mid_width(d[l]));
      attention_.emplace_back(seed, "ha" + lvl, d[l], config_.streams, config_.reduction,
                              config_.switches());
      in_c = d[l];
    }
    for (std::size_t l = 0; l < levels; ++l) {
      const std::size_t out = l + 1 < levels ? d[l + 1] : d[l];
      local_.emplace_back(seed, "local" + std::to_string(l + 1) + ".inception_b", d[l], out,
                          config_.mid_width(d[l]));
    }
    global_head_ = FeatureHead<T>(seed, "global_head", d.back(), config_.feature_dim);
    local_head_ = FeatureHead<T>(seed, "local_head", config_.streams * d.back(),
                                 config_.feature_dim);
    {
      Initializer<T> init(seed, "global_classifier");
      global_cls_ = Linear<T>(init, "fc", config_.feature_dim, config_.num_classes);
    }
    {
      Initializer<T> init(seed, "local_classifier");
      local_cls_ = Linear<T>(init, "fc", config_.feature_dim, config_.num_classes);
    }
    stem_.collect(params_, buffers_);
    for (std::size_t l = 0; l < levels; ++l) {
      global_b_[l].collect(params_, buffers_);
      global_a_[l].collect(params_, buffers_);
      attention_[l].collect(params_);
    }
    for (auto& blk : local_) blk.collect(params_, buffers_);
    global_head_.collect(params_, buffers_);
    local_head_.collect(params_, buffers_);
    global_cls_.collect(params_);
    local_cls_.collect(params_);
  }

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const { return config_; }

  ForwardOutputs<T> forward(Tape<T>& tape, const Tensor<T>& images, Mode mode,
                            const ForwardOptions& opt = {}) {
    if (images.rank() != 4 || images.dim(1) != config_.input_height ||
        images.dim(2) != config_.input_width || images.dim(3) != 3 || images.dim(0) == 0) {
      throw ShapeError("model expects N x " + std::to_string(config_.input_height) + " x " +
                       std::to_string(config_.input_width) + " x 3 images, got " +
                       shape_str(images.shape()));
    }
    const std::size_t n = images.dim(0);
    const std::size_t levels = config_.levels();
    const std::size_t streams = config_.streams;
    ForwardOutputs<T> out;

    auto x = stem_.forward(tape, images, mode);
    for (std::size_t l = 0; l < levels; ++l) {
      auto g = global_a_[l].forward(tape, global_b_[l].forward(tape, x, mode), mode);
      auto bundle = attention_[l].forward(tape, g);
      if (opt.unit_soft_attention) bundle.full = Tensor<T>::filled(g.shape(), T(1));
      if (opt.centered_regions) bundle.offsets = Tensor<T>::zeros({n, streams, 2});
      auto attended = (config_.switches().soft() || opt.unit_soft_attention)
                          ? apply_soft_attention(tape, g, bundle.full)
                          : g;
      out.global_blocks.push_back(g);
      out.attended.push_back(attended);
      out.attention.push_back(std::move(bundle));
      x = attended;
    }

    out.global_features = global_head_.forward(tape, squeeze(tape, x), mode);
    out.global_logits = global_cls_.forward(tape, out.global_features);

    auto s = extract_regions(tape, out.attended[0], out.attention[0].offsets,
                             config_.geometry(1));
    out.global_levels_read_by_local.push_back(1);
    for (std::size_t l = 0; l < levels; ++l) {
      s = local_[l].forward(tape, s, mode);
      if (config_.use_cail && l + 1 < levels) {
        auto crop = extract_regions(tape, out.attended[l + 1], out.attention[l + 1].offsets,
                                    config_.geometry(l + 2));
        s = cross_attention_add(tape, s, crop);
        out.global_levels_read_by_local.push_back(l + 2);
      }
      out.local_blocks.push_back(s);
    }
    auto pooled = ops::global_avg_pool(tape, s);
    auto fused = ops::reshape(tape, pooled, {n, streams * s.dim(3)});
    out.local_features = local_head_.forward(tape, fused, mode);
    out.local_logits = local_cls_.forward(tape, out.local_features);
    return out;
  }

  /// Trainable tensors in a fixed order with stable names.
  const std::vector<NamedTensor<T>>& parameters() const { return params_; }
  /// Batch-norm running statistics.
  const std::vector<NamedTensor<T>>& buffers() const { return buffers_; }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.size();
    return n;
  }

  ConvBN<T>& stem() { return stem_; }
  InceptionA<T>& global_inception_a(std::size_t level) { return global_a_.at(level - 1); }
  InceptionB<T>& global_inception_b(std::size_t level) { return global_b_.at(level - 1); }
  HarmoniousAttention<T>& attention(std::size_t level) { return attention_.at(level - 1); }
  const HarmoniousAttention<T>& attention(std::size_t level) const {
    return attention_.at(level - 1);
  }
  InceptionB<T>& local_block(std::size_t level) { return local_.at(level - 1); }

  /// Per-layer inventory for one input image.
  std::vector<LayerInfo> layers() const {
    std::vector<LayerInfo> rows;
    const std::size_t levels = config_.levels();
    const std::size_t t = config_.streams;
    std::size_t h = config_.input_height, w = config_.input_width;
    rows.push_back(stem_.describe("stem", h, w));
    for (std::size_t l = 0; l < levels; ++l) {
      global_b_[l].describe(rows, h, w);
      h = ceil_half(h);
      w = ceil_half(w);
      global_a_[l].describe(rows, h, w);
      attention_[l].describe(rows, h, w);
    }
    {
      LayerInfo pool;
      pool.name = pool.component = "global_head.pool";
      pool.kind = "global_avgpool";
      pool.in_h = h;
      pool.in_w = w;
      pool.in_c = pool.out_c = config_.widths.back();
      pool.out_h = pool.out_w = 1;
      pool.flops = static_cast<double>(h) * w * pool.in_c;
      rows.push_back(pool);
    }
    global_head_.describe(rows);
    rows.push_back(global_cls_.describe("global_classifier"));

    auto crop_row = [&](std::size_t level, const std::string& kind, double per_value) {
      const auto g = config_.geometry(level);
      LayerInfo li;
      li.name = li.component = "local" + std::to_string(level) + "." + kind;
      li.kind = kind;
      li.in_h = g.host_h;
      li.in_w = g.host_w;
      li.in_c = li.out_c = config_.widths[level - 1];
      li.out_h = g.region_h;
      li.out_w = g.region_w;
      li.flops = per_value * g.region_h * g.region_w * li.out_c * t;
      rows.push_back(li);
    };
    crop_row(1, "crop", 8.0);
    for (std::size_t l = 0; l < levels; ++l) {
      const auto g = config_.geometry(l + 1);
      local_[l].describe(rows, g.region_h, g.region_w, t);
      if (config_.use_cail && l + 1 < levels) {
        crop_row(l + 2, "crop", 8.0);
        crop_row(l + 2, "cross_add", 1.0);
      }
    }
    {
      const auto g = config_.geometry(levels);
      LayerInfo pool;
      pool.name = pool.component = "local_head.pool";
      pool.kind = "global_avgpool";
      pool.in_h = ceil_half(g.region_h);
      pool.in_w = ceil_half(g.region_w);
      pool.in_c = config_.widths.back();
      pool.out_c = pool.in_c * t;
      pool.out_h = pool.out_w = 1;
      pool.flops = static_cast<double>(pool.in_h) * pool.in_w * pool.in_c * t;
      rows.push_back(pool);
    }
    local_head_.describe(rows);
    rows.push_back(local_cls_.describe("local_classifier"));
    return rows;
  }

  /// Longest input-to-logit path. With `attention_layers`, the parameter-free
  /// pooling and resizing layers inside the attention sub-networks count as
  /// layers; otherwise only conv and FC layers count.
  std::size_t depth(bool attention_layers = true) const {
    const auto sw = config_.switches();
    std::size_t soft = 0;
    if (sw.spatial) soft = attention_layers ? 5 : 3;  // [mean], conv, [resize], scale, fusion
    if (sw.channel) soft = std::max<std::size_t>(soft, attention_layers ? 4 : 3);
    const std::size_t hard = sw.hard ? (attention_layers ? 2 : 1) : 0;
    const std::size_t levels = config_.levels();
    std::vector<std::size_t> attended(levels), region(levels);
    std::size_t d = 1;  // stem
    for (std::size_t l = 0; l < levels; ++l) {
      const std::size_t g = d + InceptionB<T>::depth() + InceptionA<T>::depth();
      attended[l] = g + soft;
      region[l] = std::max(attended[l], g + hard);
      d = attended[l];
    }
    const std::size_t global_path = d + 2;
    std::size_t s = region[0];
    for (std::size_t l = 0; l < levels; ++l) {
      s += InceptionB<T>::depth();
      if (config_.use_cail && l + 1 < levels) s = std::max(s, region[l + 1]);
    }
    return std::max(global_path, s + 2);
  }

 private:
  ModelConfig config_;
  ConvBN<T> stem_;
  std::vector<InceptionB<T>> global_b_;
  std::vector<InceptionA<T>> global_a_;
  std::vector<HarmoniousAttention<T>> attention_;
  std::vector<InceptionB<T>> local_;
  FeatureHead<T> global_head_, local_head_;
  Linear<T> global_cls_, local_cls_;
  std::vector<NamedTensor<T>> params_;
  std::vector<NamedTensor<T>> buffers_;
};

struct ComponentTotal {
  std::string component;
  std::size_t params = 0;
  double flops = 0.0;
};

struct ModelSummary {
  std::vector<LayerInfo> layers;
  std::vector<ComponentTotal> components;  // in first-appearance order
  std::size_t total_params = 0;
  double total_flops = 0.0;
  std::size_t depth = 0;
  std::size_t conv_fc_depth = 0;
};

template <typename T>
ModelSummary summarize(const Model<T>& model) {
  ModelSummary s;
  s.layers = model.layers();
  std::map<std::string, std::size_t> index;
  for (const auto& li : s.layers) {
    auto [it, fresh] = index.try_emplace(li.component, s.components.size());
    if (fresh) s.components.push_back({li.component, 0, 0.0});
    auto& c = s.components[it->second];
    c.params += li.params;
    c.flops += li.flops;
    s.total_params += li.params;
    s.total_flops += li.flops;
  }
  s.depth = model.depth(true);
  s.conv_fc_depth = model.depth(false);
  return s;
}

template <typename T>
std::size_t count_parameters(const Model<T>& model) {
  return summarize(model).total_params;
}

template <typename T>
double count_flops(const Model<T>& model) {
  return summarize(model).total_flops;
}

}  // namespace hacnn
