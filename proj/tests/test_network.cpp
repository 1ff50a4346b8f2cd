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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "hacnn/gradcheck_suites.hpp"
#include "hacnn/network.hpp"
#include "test_util.hpp"

namespace hacnn {
namespace {

using testing::uniform;
using D = Tensor<double>;

ModelConfig small_config() {
  ModelConfig c;
  c.input_height = 32;
  c.input_width = 16;
  c.stem_width = 8;
  c.widths = {16, 16, 32};
  c.reduction = 4;
  c.region_height = 8;
  c.region_width = 4;
  c.feature_dim = 10;
  c.num_classes = 5;
  c.bottleneck_divisor = 4;
  return c;
}

std::size_t conv_params(std::size_t k, std::size_t in, std::size_t out) {
  return k * k * in * out + 2 * out;  // weights plus BN gamma/beta
}

std::size_t sum_params(const std::vector<NamedTensor<double>>& ps) {
  std::size_t n = 0;
  for (const auto& p : ps) n += p.tensor.size();
  return n;
}

TEST(Inception, AKeepsSizeAndWidth) {
  InceptionA<double> a(1, "a", 24, 32, 4);
  Tape<double> tape(false);
  const auto y = a.forward(tape, uniform({2, 7, 5, 24}, 1), ops::Mode::train);
  EXPECT_EQ(y.shape(), (Shape{2, 7, 5, 32}));
  std::vector<NamedTensor<double>> p, b;
  a.collect(p, b);
  const std::size_t expect = conv_params(1, 24, 8) + conv_params(1, 24, 4) + conv_params(3, 4, 8) +
                             conv_params(1, 24, 4) + conv_params(3, 4, 4) + conv_params(3, 4, 8) +
                             conv_params(1, 24, 8);
  EXPECT_EQ(sum_params(p), expect);
}

TEST(Inception, BHalvesWithCeilDivision) {
  InceptionB<double> b(1, "b", 8, 16, 4);
  Tape<double> tape(false);
  const auto y = b.forward(tape, uniform({1, 7, 5, 8}, 2), ops::Mode::train);
  EXPECT_EQ(y.shape(), (Shape{1, 4, 3, 16}));
  std::vector<NamedTensor<double>> p, s;
  b.collect(p, s);
  const std::size_t expect = conv_params(1, 8, 4) + conv_params(3, 4, 4) + conv_params(1, 8, 4) +
                             conv_params(3, 4, 4) + conv_params(3, 4, 4) + conv_params(1, 8, 8);
  EXPECT_EQ(sum_params(p), expect);
}

TEST(Inception, WidthMustBeDivisibleByFour) {
  EXPECT_THROW(InceptionA<double>(1, "a", 8, 10, 2), std::invalid_argument);
  EXPECT_THROW(InceptionB<double>(1, "b", 8, 6, 2), std::invalid_argument);
}

TEST(ModelGeometry, DefaultHostAndRegionSizes) {
  const ModelConfig c;
  const std::size_t host[3][2] = {{80, 32}, {40, 16}, {20, 8}};
  const std::size_t region[3][2] = {{24, 28}, {12, 14}, {6, 7}};
  for (std::size_t l = 1; l <= 3; ++l) {
    const auto g = c.geometry(l);
    EXPECT_EQ(g.host_h, host[l - 1][0]);
    EXPECT_EQ(g.host_w, host[l - 1][1]);
    EXPECT_EQ(g.region_h, region[l - 1][0]);
    EXPECT_EQ(g.region_w, region[l - 1][1]);
  }
}

TEST(ModelGeometry, InvalidConfigurationsRejected) {
  auto c = small_config();
  c.region_height = 32;
  EXPECT_THROW(Model<double>{c}, std::invalid_argument);
  c = small_config();
  c.widths = {32, 16, 32};
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = small_config();
  c.widths = {16, 18, 32};
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = small_config();
  c.region_width = 6;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(ModelConfigText, RoundTripsThroughKeyValue) {
  auto c = small_config();
  c.use_hard = false;
  c.seed = 99;
  EXPECT_EQ(ModelConfig::from_kv(kv::parse(kv::serialize(c.to_kv()))), c);
}

TEST(ModelAccounting, DefaultDepthNearThirtyNine) {
  const Model<float> m{ModelConfig{}};
  const auto depth = static_cast<long>(m.depth());
  EXPECT_LE(std::abs(depth - 39), 2);
  EXPECT_LT(m.depth(false), m.depth(true));
}

TEST(ModelAccounting, AttentionBudgetsPerLevel) {
  const ModelConfig c;
  const Model<float> m{c};
  const auto s = summarize(m);
  auto component = [&](const std::string& name) {
    for (const auto& ct : s.components) {
      if (ct.component == name) return ct.params;
    }
    ADD_FAILURE() << "missing component " << name;
    return std::size_t{0};
  };
  for (std::size_t l = 1; l <= 3; ++l) {
    const std::size_t d = c.widths[l - 1];
    const std::string ha = "ha" + std::to_string(l);
    EXPECT_EQ(component(ha + ".spatial"), 10u);
    EXPECT_EQ(component(ha + ".channel"), 2 * d * d / 16);
    EXPECT_EQ(component(ha + ".fusion"), d * d);
    EXPECT_EQ(component(ha + ".hard"), 2 * 4 * d);
  }
  EXPECT_EQ(component("ha2.channel"), 8192u);
  EXPECT_EQ(component("ha3.channel"), 18432u);
  EXPECT_EQ(component("ha3.hard"), 3072u);
}

TEST(ModelAccounting, InventoryAgreesWithParameterTensors) {
  const Model<float> m{ModelConfig{}};
  EXPECT_EQ(count_parameters(m), m.parameter_count());
  EXPECT_GE(m.parameter_count(), 2'400'000u);
  EXPECT_LE(m.parameter_count(), 3'100'000u);
  const double flops = count_flops(m);
  EXPECT_GE(flops, 0.6 * 1.09e9);
  EXPECT_LE(flops, 1.6 * 1.09e9);
}

TEST(ModelAccounting, FlopConvention) {
  Initializer<double> init(1, "t");
  ConvBN<double> c(init, "c", 1, 1, 1);
  EXPECT_DOUBLE_EQ(c.describe("t", 2, 2).flops, 8.0);
  Linear<double> fc(init, "fc", 512, 751);
  EXPECT_DOUBLE_EQ(fc.describe("t").flops, 769024.0);
}

TEST(ModelAccounting, SwitchesOffLeaveNoAttentionParameters) {
  auto c = small_config();
  c.use_spatial = c.use_channel = c.use_hard = false;
  const Model<double> m{c};
  for (const auto& p : m.parameters()) EXPECT_NE(p.name.rfind("ha", 0), 0u) << p.name;
  const auto full = Model<double>{small_config()};
  EXPECT_LT(m.parameter_count(), full.parameter_count());
}

TEST(ModelForward, OutputShapesAndFiniteness) {
  const auto c = small_config();
  Model<double> m{c};
  Tape<double> tape(false);
  const auto out = m.forward(tape, uniform({3, 32, 16, 3}, 1, 0.0, 1.0), ops::Mode::train);
  EXPECT_EQ(out.global_logits.shape(), (Shape{3, 5}));
  EXPECT_EQ(out.local_logits.shape(), (Shape{3, 5}));
  EXPECT_EQ(out.global_features.shape(), (Shape{3, 10}));
  EXPECT_EQ(out.local_features.shape(), (Shape{3, 10}));
  for (const auto* t : {&out.global_logits, &out.local_logits, &out.global_features, &out.local_features}) {
    for (auto v : t->values()) EXPECT_TRUE(std::isfinite(v));
  }
  ASSERT_EQ(out.local_blocks.size(), 3u);
  EXPECT_EQ(out.local_blocks[0].shape(), (Shape{12, 4, 2, 16}));
  EXPECT_EQ(out.local_blocks[2].shape(), (Shape{12, 1, 1, 32}));
  EXPECT_EQ(out.global_levels_read_by_local, (std::vector<std::size_t>{1, 2, 3}));
}

TEST(ModelForward, WrongImageSizeRejected) {
  Model<double> m{small_config()};
  Tape<double> tape(false);
  EXPECT_THROW(m.forward(tape, D::zeros({1, 30, 16, 3}), ops::Mode::infer), ShapeError);
}

TEST(ModelForward, CailOffNeverReadsDeeperGlobalLevels) {
  auto c = small_config();
  c.use_cail = false;
  Model<double> m{c};
  Tape<double> tape(false);
  const auto out = m.forward(tape, uniform({2, 32, 16, 3}, 2, 0.0, 1.0), ops::Mode::train);
  EXPECT_EQ(out.global_levels_read_by_local, (std::vector<std::size_t>{1}));
}

TEST(ModelForward, DuplicateImagesGetIdenticalOutputs) {
  Model<double> m{small_config()};
  const auto one = uniform({1, 32, 16, 3}, 3, 0.0, 1.0);
  std::vector<double> two(one.values().begin(), one.values().end());
  two.insert(two.end(), one.values().begin(), one.values().end());
  Tape<double> tape(false);
  const auto out = m.forward(tape, D({2, 32, 16, 3}, two), ops::Mode::infer);
  for (const auto* t : {&out.global_features, &out.local_features, &out.global_logits}) {
    const std::size_t k = t->dim(1);
    for (std::size_t j = 0; j < k; ++j) EXPECT_EQ(t->values()[j], t->values()[k + j]);
  }
}

TEST(CrossAttentionAdd, ZeroOperandsAndMismatch) {
  Tape<double> tape(false);
  const auto a = uniform({2, 3, 4, 5}, 4);
  const auto b = uniform({2, 3, 4, 5}, 5);
  const auto z = D::zeros(a.shape());
  EXPECT_EQ(testing::max_abs_diff<double>(cross_attention_add(tape, a, z).values(), a.values()), 0.0);
  EXPECT_EQ(testing::max_abs_diff<double>(cross_attention_add(tape, z, b).values(), b.values()), 0.0);
  const auto s = cross_attention_add(tape, a, b);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(s.values()[i], a.values()[i] + b.values()[i]);
  try {
    cross_attention_add(tape, a, D::zeros({2, 3, 4, 6}));
    FAIL();
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2, 3, 4, 5]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[2, 3, 4, 6]"), std::string::npos) << msg;
  }
}

TEST(WeightSharing, EveryStreamSeesTheSameLocalBlock) {
  Model<double> m{small_config()};
  const ForwardOptions centred{false, true};
  const auto x = uniform({1, 32, 16, 3}, 6, 0.0, 1.0);
  auto streams_equal = [&](const ForwardOutputs<double>& out) {
    const auto& s = out.local_blocks[0];
    const std::size_t per = s.size() / s.dim(0);
    for (std::size_t k = 1; k < s.dim(0); ++k)
      for (std::size_t i = 0; i < per; ++i)
        if (s.values()[k * per + i] != s.values()[i]) return false;
    return true;
  };
  Tape<double> t1(false);
  const auto before = m.forward(t1, x, ops::Mode::infer, centred);
  EXPECT_TRUE(streams_equal(before));
  // Perturb one shared weight; all streams change together.
  auto params = m.parameters();
  const auto it = std::find_if(params.begin(), params.end(), [](const auto& p) {
    return p.name.rfind("local1.inception_b", 0) == 0 && p.name.find("weight") != std::string::npos;
  });
  ASSERT_NE(it, params.end());
  auto w = it->tensor;
  for (auto& v : w.mutable_values()) v *= 1.5;
  Tape<double> t2(false);
  const auto after = m.forward(t2, x, ops::Mode::infer, centred);
  EXPECT_TRUE(streams_equal(after));
  const std::size_t per = after.local_blocks[0].size() / 4;
  for (std::size_t k = 0; k < 4; ++k) {
    bool changed = false;
    for (std::size_t i = 0; i < per; ++i) {
      changed |= after.local_blocks[0].values()[k * per + i] != before.local_blocks[0].values()[k * per + i];
    }
    EXPECT_TRUE(changed) << "stream " << k;
  }
}

TEST(WeightSharing, StemIsOneParameterSet) {
  const Model<double> m{small_config()};
  std::size_t stems = 0;
  for (const auto& p : m.parameters()) stems += p.name.rfind("stem.", 0) == 0;
  EXPECT_EQ(stems, 3u);  // weight, gamma, beta
}

void expect_same_outputs(const ForwardOutputs<double>& a, const ForwardOutputs<double>& b) {
  for (auto [x, y] : {std::pair{&a.global_logits, &b.global_logits}, {&a.local_logits, &b.local_logits},
                      {&a.global_features, &b.global_features}, {&a.local_features, &b.local_features}}) {
    EXPECT_EQ(testing::max_abs_diff<double>(x->values(), y->values()), 0.0);
  }
}

TEST(AblationEquivalence, SoftOffEqualsUnitAttention) {
  auto off = small_config();
  off.use_spatial = off.use_channel = false;
  Model<double> ablated{off};
  Model<double> full{small_config()};
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto x = uniform({2, 32, 16, 3}, 10 + seed, 0.0, 1.0);
    Tape<double> t1(false), t2(false);
    expect_same_outputs(ablated.forward(t1, x, ops::Mode::train),
                        full.forward(t2, x, ops::Mode::train, {true, false}));
  }
}

TEST(AblationEquivalence, HardOffEqualsCentredRegions) {
  auto off = small_config();
  off.use_hard = false;
  Model<double> ablated{off};
  Model<double> full{small_config()};
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto x = uniform({2, 32, 16, 3}, 20 + seed, 0.0, 1.0);
    Tape<double> t1(false), t2(false);
    expect_same_outputs(ablated.forward(t1, x, ops::Mode::train),
                        full.forward(t2, x, ops::Mode::train, {false, true}));
  }
}

// Largest |grad| over global block 2/3 parameters with only L_L on the tape.
double deep_global_gradient(bool cail) {
  auto c = small_config();
  c.use_cail = cail;
  Model<double> m{c};
  Tape<double> tape;
  const auto out = m.forward(tape, uniform({3, 32, 16, 3}, 30, 0.0, 1.0), ops::Mode::train);
  const std::size_t labels[] = {0, 3, 1};
  tape.backward(ops::softmax_cross_entropy(tape, out.local_logits, std::span<const std::size_t>(labels)));
  double g = 0.0;
  for (const auto& p : m.parameters()) {
    if (p.name.rfind("global2.", 0) && p.name.rfind("global3.", 0)) continue;
    if (!p.tensor.has_grad()) continue;
    for (auto v : p.tensor.grad()) g = std::max(g, std::abs(v));
  }
  return g;
}

TEST(GradientFlow, LocalLossReachesDeepGlobalBlocksOnlyThroughCail) {
  EXPECT_GT(deep_global_gradient(true), 0.0);
  EXPECT_EQ(deep_global_gradient(false), 0.0);
}

TEST(GradientCheck, MiniatureNetwork) {
  gradcheck::SuiteOptions opt;
  const auto r = gradcheck::run_suite("mini_network", gradcheck::network_case, opt,
                                      opt.network_entries_per_tensor);
  EXPECT_EQ(r.instances, 20u);
  EXPECT_LE(r.max_rel_error, 1e-4) << r.worst;
}

}  // namespace
}  // namespace hacnn
