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
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "hacnn/attention.hpp"
#include "hacnn/gradcheck.hpp"
#include "hacnn/network.hpp"
#include "hacnn/random.hpp"
#include "hacnn/training.hpp"

// Randomised finite-difference suites in double precision: one per
// primitive, one for the attention module, one for a miniature network.
namespace hacnn::gradcheck {

using D = double;

struct SuiteResult {
  std::string name;
  std::size_t instances = 0;
  double max_rel_error = 0.0;
  std::string worst;  // "<parameter>[index] instance k"
  std::size_t checked = 0;
  std::size_t skipped_at_kinks = 0;
};

struct SuiteOptions {
  std::size_t instances = 20;
  std::uint64_t seed = 2024;
  GradCheckOptions check{1e-5, 1e-6, 0, 0};
  // Entry cap per tensor for the network-scale suites.
  std::size_t network_entries_per_tensor = 6;
};

inline Tensor<D> random_tensor(SplitMix& rng, Shape shape, double lo = -1.0, double hi = 1.0,
                               bool grad = true) {
  std::vector<D> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor<D>(std::move(shape), std::move(v), grad);
}

inline std::size_t pick(SplitMix& rng, std::size_t lo, std::size_t hi) {
  return lo + rng.below(hi - lo + 1);
}

/// sum(y * r) with a fixed random r, so every output entry carries weight.
inline Tensor<D> probe_loss(Tape<D>& tape, const Tensor<D>& y, const Tensor<D>& r) {
  return ops::sum(tape, ops::mul(tape, y, r));
}

/// A case builds its inputs from `rng` and returns the scalar function and
/// the tensors to perturb.
struct Case {
  ScalarFunction<D> f;
  std::vector<Tensor<D>> params;
};

using CaseFactory = std::function<Case(SplitMix&)>;

inline SuiteResult run_suite(const std::string& name, const CaseFactory& make,
                             const SuiteOptions& opt, std::size_t entries_per_tensor = 0) {
  SuiteResult res;
  res.name = name;
  for (std::size_t k = 0; k < opt.instances; ++k) {
    SplitMix rng(hash_seed({mix_seed(opt.seed, name), k}));
    Case c = make(rng);
    auto check = opt.check;
    check.max_entries_per_tensor = entries_per_tensor;
    check.seed = hash_seed({opt.seed, k});
    const auto r = check_gradients<D>(c.f, c.params, check);
    ++res.instances;
    res.checked += r.checked;
    res.skipped_at_kinks += r.skipped_at_kinks;
    if (r.max_rel_error > res.max_rel_error || res.worst.empty()) {
      res.max_rel_error = std::max(res.max_rel_error, r.max_rel_error);
      res.worst = r.worst_parameter + "[" + std::to_string(r.worst_index) + "] instance " +
                  std::to_string(k);
    }
  }
  return res;
}

inline std::vector<std::pair<std::string, CaseFactory>> primitive_cases() {
  std::vector<std::pair<std::string, CaseFactory>> out;
  auto named = [](Tensor<D> t, const char* n) {
    t.set_name(n);
    return t;
  };

  out.emplace_back("conv2d", [named](SplitMix& rng) {
    const std::size_t n = pick(rng, 1, 2), h = pick(rng, 3, 6), w = pick(rng, 3, 6);
    const std::size_t ci = pick(rng, 1, 3), co = pick(rng, 1, 3);
    const std::size_t k = rng.uniform() < 0.5 ? 1 : 3, stride = pick(rng, 1, 2), pad = k / 2;
    auto x = named(random_tensor(rng, {n, h, w, ci}), "x");
    auto wt = named(random_tensor(rng, {k, k, ci, co}), "weight");
    auto b = named(random_tensor(rng, {co}), "bias");
    const std::size_t oh = ops::conv_output_extent(h, k, stride, pad);
    const std::size_t ow = ops::conv_output_extent(w, k, stride, pad);
    auto r = random_tensor(rng, {n, oh, ow, co}, -1, 1, false);
    return Case{[=](Tape<D>& t) { return probe_loss(t, ops::conv2d(t, x, wt, b, stride, pad), r); },
                {x, wt, b}};
  });
  for (auto mode : {ops::Mode::train, ops::Mode::infer}) {
    out.emplace_back(mode == ops::Mode::train ? "batch_norm_train" : "batch_norm_infer",
                     [named, mode](SplitMix& rng) {
                       const std::size_t n = pick(rng, 2, 3), h = pick(rng, 1, 3), c = pick(rng, 1, 4);
                       auto x = named(random_tensor(rng, {n, h, 2, c}, -2, 2), "x");
                       auto g = named(random_tensor(rng, {c}, 0.5, 1.5), "gamma");
                       auto b = named(random_tensor(rng, {c}), "beta");
                       auto r = random_tensor(rng, {n, h, 2, c}, -1, 1, false);
                       ops::BatchNormStats<D> stats(c);
                       for (auto& v : stats.var.mutable_values()) v = rng.uniform(0.5, 2.0);
                       for (auto& v : stats.mean.mutable_values()) v = rng.uniform(-0.5, 0.5);
                       return Case{[=](Tape<D>& t) mutable {
                                     // Fresh stats copy: running averages never feed back.
                                     ops::BatchNormStats<D> s(c);
                                     std::copy(stats.mean.values().begin(), stats.mean.values().end(),
                                               s.mean.mutable_values().begin());
                                     std::copy(stats.var.values().begin(), stats.var.values().end(),
                                               s.var.mutable_values().begin());
                                     return probe_loss(t, ops::batch_norm(t, x, g, b, s, mode), r);
                                   },
                                   {x, g, b}};
                     });
  }
  for (auto kind : {ops::Activation::relu, ops::Activation::sigmoid, ops::Activation::tanh}) {
    const char* label = kind == ops::Activation::relu      ? "relu"
                        : kind == ops::Activation::sigmoid ? "sigmoid"
                                                           : "tanh";
    out.emplace_back(label, [named, kind](SplitMix& rng) {
      const std::size_t n = pick(rng, 1, 3), m = pick(rng, 2, 6);
      auto x = named(random_tensor(rng, {n, m}, -3, 3), "x");
      auto r = random_tensor(rng, {n, m}, -1, 1, false);
      return Case{[=](Tape<D>& t) { return probe_loss(t, ops::activation(t, x, kind), r); }, {x}};
    });
  }
  out.emplace_back("global_avg_pool", [named](SplitMix& rng) {
    const std::size_t n = pick(rng, 1, 2), h = pick(rng, 1, 4), w = pick(rng, 1, 4), c = pick(rng, 1, 4);
    auto x = named(random_tensor(rng, {n, h, w, c}), "x");
    auto r = random_tensor(rng, {n, 1, 1, c}, -1, 1, false);
    return Case{[=](Tape<D>& t) { return probe_loss(t, ops::global_avg_pool(t, x), r); }, {x}};
  });
  out.emplace_back("cross_channel_avg_pool", [named](SplitMix& rng) {
    const std::size_t n = pick(rng, 1, 2), h = pick(rng, 1, 4), w = pick(rng, 1, 4), c = pick(rng, 1, 4);
    auto x = named(random_tensor(rng, {n, h, w, c}), "x");
    auto r = random_tensor(rng, {n, h, w, 1}, -1, 1, false);
    return Case{[=](Tape<D>& t) { return probe_loss(t, ops::cross_channel_avg_pool(t, x), r); }, {x}};
  });
  for (auto kind : {ops::PoolKind::max, ops::PoolKind::average}) {
    out.emplace_back(kind == ops::PoolKind::max ? "max_pool" : "avg_pool", [named, kind](SplitMix& rng) {
      const std::size_t n = pick(rng, 1, 2), h = pick(rng, 2, 6), w = pick(rng, 2, 6), c = pick(rng, 1, 3);
      const std::size_t stride = pick(rng, 1, 2);
      auto x = named(random_tensor(rng, {n, h, w, c}), "x");
      const std::size_t oh = ops::conv_output_extent(h, 3, stride, 1);
      const std::size_t ow = ops::conv_output_extent(w, 3, stride, 1);
      auto r = random_tensor(rng, {n, oh, ow, c}, -1, 1, false);
      return Case{[=](Tape<D>& t) { return probe_loss(t, ops::pool2d(t, x, kind, 3, stride, 1), r); }, {x}};
    });
  }
  out.emplace_back("linear", [named](SplitMix& rng) {
    const std::size_t n = pick(rng, 1, 3), m = pick(rng, 1, 6), k = pick(rng, 1, 6);
    auto x = named(random_tensor(rng, {n, m}), "x");
    auto w = named(random_tensor(rng, {k, m}), "weight");
    auto b = named(random_tensor(rng, {k}), "bias");
    auto r = random_tensor(rng, {n, k}, -1, 1, false);
    return Case{[=](Tape<D>& t) { return probe_loss(t, ops::linear(t, x, w, b), r); }, {x, w, b}};
  });
  out.emplace_back("bilinear_resize", [named](SplitMix& rng) {
    const std::size_t n = pick(rng, 1, 2), h = pick(rng, 1, 4), w = pick(rng, 1, 4), c = pick(rng, 1, 3);
    const std::size_t oh = pick(rng, 1, 8), ow = pick(rng, 1, 8);
    auto x = named(random_tensor(rng, {n, h, w, c}), "x");
    auto r = random_tensor(rng, {n, oh, ow, c}, -1, 1, false);
    return Case{[=](Tape<D>& t) { return probe_loss(t, ops::bilinear_resize(t, x, oh, ow), r); }, {x}};
  });
  out.emplace_back("grid_sample_affine", [named](SplitMix& rng) {
    const std::size_t n = pick(rng, 1, 2), g = pick(rng, 1, 3), h = pick(rng, 3, 7), w = pick(rng, 3, 7);
    const std::size_t c = pick(rng, 1, 3), oh = pick(rng, 2, 4), ow = pick(rng, 2, 4);
    auto x = named(random_tensor(rng, {n, h, w, c}), "x");
    std::vector<D> th(n * g * 6);
    for (std::size_t i = 0; i < n * g; ++i) {
      th[i * 6 + 0] = rng.uniform(0.3, 0.9);
      th[i * 6 + 1] = rng.uniform(-0.2, 0.2);
      th[i * 6 + 2] = rng.uniform(-0.6, 0.6);
      th[i * 6 + 3] = rng.uniform(-0.2, 0.2);
      th[i * 6 + 4] = rng.uniform(0.3, 0.9);
      th[i * 6 + 5] = rng.uniform(-0.6, 0.6);
    }
    auto theta = named(Tensor<D>({n * g, 2, 3}, th, true), "theta");
    auto r = random_tensor(rng, {n * g, oh, ow, c}, -1, 1, false);
    return Case{[=](Tape<D>& t) { return probe_loss(t, ops::grid_sample_affine(t, x, theta, oh, ow), r); },
                {x, theta}};
  });
  out.emplace_back("offsets_to_theta", [named](SplitMix& rng) {
    const std::size_t n = pick(rng, 1, 3), streams = pick(rng, 1, 4);
    auto o = named(random_tensor(rng, {n, streams, 2}), "offsets");
    const D sh = rng.uniform(0.1, 0.9), sw = rng.uniform(0.1, 0.9);
    auto r = random_tensor(rng, {n * streams, 2, 3}, -1, 1, false);
    return Case{[=](Tape<D>& t) { return probe_loss(t, ops::offsets_to_theta(t, o, sh, sw), r); }, {o}};
  });
  out.emplace_back("softmax_cross_entropy", [named](SplitMix& rng) {
    const std::size_t n = pick(rng, 1, 4), k = pick(rng, 2, 6);
    auto z = named(random_tensor(rng, {n, k}, -3, 3), "logits");
    std::vector<std::size_t> labels(n);
    for (auto& l : labels) l = rng.below(k);
    return Case{[=](Tape<D>& t) { return ops::softmax_cross_entropy(t, z, std::span<const std::size_t>(labels)); },
                {z}};
  });
  out.emplace_back("add", [named](SplitMix& rng) {
    const std::size_t n = pick(rng, 1, 3), m = pick(rng, 1, 5);
    auto a = named(random_tensor(rng, {n, m}), "a");
    auto b = named(random_tensor(rng, {n, m}), "b");
    auto r = random_tensor(rng, {n, m}, -1, 1, false);
    return Case{[=](Tape<D>& t) { return probe_loss(t, ops::add(t, a, b), r); }, {a, b}};
  });
  out.emplace_back("mul_broadcast", [named](SplitMix& rng) {
    const std::size_t n = pick(rng, 1, 2), h = pick(rng, 1, 4), w = pick(rng, 1, 4), c = pick(rng, 1, 4);
    auto a = named(random_tensor(rng, {n, h, w, 1}), "spatial");
    auto b = named(random_tensor(rng, {n, 1, 1, c}), "channel");
    auto r = random_tensor(rng, {n, h, w, c}, -1, 1, false);
    return Case{[=](Tape<D>& t) { return probe_loss(t, ops::mul(t, a, b), r); }, {a, b}};
  });
  out.emplace_back("affine_scale", [named](SplitMix& rng) {
    const std::size_t m = pick(rng, 1, 6);
    auto x = named(random_tensor(rng, {m}), "x");
    const D a = rng.uniform(-2, 2), b = rng.uniform(-2, 2), s = rng.uniform(-2, 2);
    auto r = random_tensor(rng, {m}, -1, 1, false);
    return Case{[=](Tape<D>& t) { return probe_loss(t, ops::scale(t, ops::affine(t, x, a, b), s), r); }, {x}};
  });
  out.emplace_back("concat_reshape", [named](SplitMix& rng) {
    const std::size_t n = pick(rng, 1, 2), h = pick(rng, 1, 3), w = pick(rng, 1, 3);
    const std::size_t c1 = pick(rng, 1, 3), c2 = pick(rng, 1, 3);
    auto a = named(random_tensor(rng, {n, h, w, c1}), "a");
    auto b = named(random_tensor(rng, {n, h, w, c2}), "b");
    auto r = random_tensor(rng, {n, h * w * (c1 + c2)}, -1, 1, false);
    return Case{[=](Tape<D>& t) {
                  auto y = ops::concat_last(t, std::vector<Tensor<D>>{a, b});
                  return probe_loss(t, ops::reshape(t, y, {n, h * w * (c1 + c2)}), r);
                },
                {a, b}};
  });
  return out;
}

/// Every parameter of the attention module plus its input, through the
/// full soft map, the offsets and the sampled regions.
inline Case attention_case(SplitMix& rng) {
  const std::size_t n = 2, streams = pick(rng, 1, 3), reduction = 2;
  const std::size_t c = 2 * pick(rng, 1, 3), h = pick(rng, 3, 6), w = pick(rng, 3, 5);
  const auto ha = std::make_shared<HarmoniousAttention<D>>(rng.next(), "ha", c, streams, reduction,
                                                           AttentionSwitches{});
  std::vector<NamedTensor<D>> named;
  ha->collect(named);
  std::vector<Tensor<D>> params;
  for (auto& p : named) params.push_back(p.tensor);
  auto x = random_tensor(rng, {n, h, w, c}, 0.0, 2.0);
  x.set_name("input");
  params.push_back(x);
  RegionGeometry geo{h, w, std::max<std::size_t>(1, h / 2), std::max<std::size_t>(1, w / 2)};
  auto r_full = random_tensor(rng, {n, h, w, c}, -1, 1, false);
  auto r_off = random_tensor(rng, {n, streams, 2}, -1, 1, false);
  auto r_reg = random_tensor(rng, {n * streams, geo.region_h, geo.region_w, c}, -1, 1, false);
  return Case{[=](Tape<D>& t) {
                auto b = ha->forward(t, x);
                auto attended = apply_soft_attention(t, x, b.full);
                auto regions = extract_regions(t, attended, b.offsets, geo);
                auto l = ops::add(t, probe_loss(t, b.full, r_full), probe_loss(t, b.offsets, r_off));
                return ops::add(t, l, probe_loss(t, regions, r_reg));
              },
              params};
}

/// Two-level network small enough for exhaustive-ish checking.
inline ModelConfig mini_config(std::uint64_t seed) {
  ModelConfig c;
  c.input_height = 12;
  c.input_width = 8;
  c.stem_width = 4;
  c.widths = {8, 16};
  c.streams = 2;
  c.reduction = 4;
  c.region_height = 4;
  c.region_width = 4;
  c.feature_dim = 6;
  c.num_classes = 3;
  c.bottleneck_divisor = 4;
  c.seed = seed;
  return c;
}

inline Case network_case(SplitMix& rng) {
  const auto model = std::make_shared<Model<D>>(mini_config(rng.next()));
  const std::size_t n = 3;
  auto x = random_tensor(rng, {n, 12, 8, 3}, 0.0, 1.0, false);
  std::vector<std::size_t> labels(n);
  for (auto& l : labels) l = rng.below(3);
  std::vector<Tensor<D>> params;
  for (auto& p : model->parameters()) params.push_back(p.tensor);
  return Case{[=](Tape<D>& t) {
                auto out = model->forward(t, x, Mode::train);
                return compute_loss<D>(t, out, labels).total;
              },
              params};
}

inline std::vector<SuiteResult> run_all(const SuiteOptions& opt = {}) {
  std::vector<SuiteResult> out;
  for (const auto& [name, make] : primitive_cases()) out.push_back(run_suite(name, make, opt));
  out.push_back(run_suite("harmonious_attention", attention_case, opt));
  out.push_back(run_suite("mini_network", network_case, opt, opt.network_entries_per_tensor));
  return out;
}

}  // namespace hacnn::gradcheck
