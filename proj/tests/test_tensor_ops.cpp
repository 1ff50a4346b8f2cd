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

#include <cmath>
#include <random>

#include "hacnn/gradcheck.hpp"
#include "hacnn/gradcheck_suites.hpp"
#include "hacnn/ops.hpp"
#include "test_util.hpp"

namespace hacnn {
namespace {

using testing::uniform;
using D = Tensor<double>;

D conv(const D& x, const D& w, const D& b, std::size_t stride, std::size_t pad) {
  Tape<double> tape(false);
  return ops::conv2d(tape, x, w, b, stride, pad);
}

// Plain nested-loop convolution over an N x H x W x C input.
std::vector<double> reference_conv(const D& x, const D& w, std::size_t stride, std::size_t pad,
                                   std::size_t& oh, std::size_t& ow) {
  const std::size_t n = x.dim(0), h = x.dim(1), wd = x.dim(2), ci = x.dim(3);
  const std::size_t k = w.dim(0), co = w.dim(3);
  oh = (h + 2 * pad - k) / stride + 1;
  ow = (wd + 2 * pad - k) / stride + 1;
  std::vector<double> out(n * oh * ow * co, 0.0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox)
        for (std::size_t o = 0; o < co; ++o) {
          double acc = 0.0;
          for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
              const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
              const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(wd)) continue;
              for (std::size_t c = 0; c < ci; ++c) {
                acc += x.at({b, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix), c}) *
                       w.at({ky, kx, c, o});
              }
            }
          out[((b * oh + oy) * ow + ox) * co + o] = acc;
        }
  return out;
}

TEST(Conv2d, UnitKernelIsIdentity) {
  const auto x = uniform({2, 3, 4, 1}, 1);
  const auto y = conv(x, D::filled({1, 1, 1, 1}, 1.0), D::zeros({1}), 1, 0);
  EXPECT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y.values()[i], x.values()[i]);
}

TEST(Conv2d, OnesKernelCountsNeighbours) {
  const auto y = conv(D::filled({1, 3, 3, 1}, 1.0), D::filled({3, 3, 1, 1}, 1.0), D(), 1, 1);
  EXPECT_DOUBLE_EQ(y.at({0, 1, 1, 0}), 9.0);
  for (auto [r, c] : {std::pair{0, 0}, {0, 2}, {2, 0}, {2, 2}}) {
    EXPECT_DOUBLE_EQ(y.at({0, std::size_t(r), std::size_t(c), 0}), 4.0);
  }
  EXPECT_DOUBLE_EQ(y.at({0, 0, 1, 0}), 6.0);
}

TEST(Conv2d, MatchesNestedLoopReference) {
  const auto x = uniform({1, 5, 5, 2}, 11);
  const auto w = uniform({3, 3, 2, 3}, 12);
  std::size_t oh = 0, ow = 0;
  const auto ref = reference_conv(x, w, 2, 0, oh, ow);
  const auto y = conv(x, w, D(), 2, 0);
  ASSERT_EQ(y.shape(), (Shape{1, oh, ow, 3}));
  for (std::size_t i = 0; i < ref.size(); ++i) {
    EXPECT_LE(std::abs(y.values()[i] - ref[i]), 1e-12 * std::max(1.0, std::abs(ref[i])));
  }
}

TEST(Conv2d, RandomShapesFollowTheExtentFormula) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 1 + rng() % 4, stride = 1 + rng() % 3, pad = rng() % 3;
    const std::size_t h = std::max<std::size_t>(k, 1 + rng() % 9);
    const std::size_t w = std::max<std::size_t>(k, 1 + rng() % 9);
    const std::size_t ci = 1 + rng() % 3, co = 1 + rng() % 3;
    const auto x = uniform({1, h, w, ci}, trial);
    const auto wt = uniform({k, k, ci, co}, trial + 1000);
    std::size_t oh = 0, ow = 0;
    const auto ref = reference_conv(x, wt, stride, pad, oh, ow);
    const auto y = conv(x, wt, D(), stride, pad);
    ASSERT_EQ(y.shape(), (Shape{1, (h + 2 * pad - k) / stride + 1, (w + 2 * pad - k) / stride + 1, co}));
    EXPECT_LT(testing::max_abs_diff<double>(y.values(), ref), 1e-12);
  }
}

TEST(Conv2d, ChannelMismatchNamesBothShapes) {
  try {
    conv(D::zeros({1, 4, 4, 2}), D::zeros({3, 3, 3, 1}), D(), 1, 1);
    FAIL() << "accepted mismatched channels";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[1, 4, 4, 2]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[3, 3, 3, 1]"), std::string::npos) << msg;
  }
}

struct BnFixture {
  D gamma, beta;
  ops::BatchNormStats<double> stats;
  explicit BnFixture(std::size_t c)
      : gamma(D::filled({c}, 1.0)), beta(D::zeros({c})), stats(c) {}
};

TEST(BatchNorm, StandardisedInputPassesThrough) {
  // Per channel values {-1, 1} have mean 0 and variance 1.
  const D x({4, 1, 1, 2}, std::vector<double>{-1, 1, 1, -1, -1, 1, 1, -1});
  BnFixture f(2);
  Tape<double> tape(false);
  const auto y = ops::batch_norm(tape, x, f.gamma, f.beta, f.stats, ops::Mode::train);
  EXPECT_LT(testing::max_abs_diff<double>(y.values(), x.values()), 1e-5);
}

TEST(BatchNorm, ConstantChannelGivesBeta) {
  BnFixture f(3);
  f.beta = D({3}, std::vector<double>{0.5, -2.0, 7.0});
  Tape<double> tape(false);
  const auto y = ops::batch_norm(tape, D::filled({5, 2, 2, 3}, 4.0), f.gamma, f.beta, f.stats,
                                 ops::Mode::train);
  for (std::size_t i = 0; i < y.size(); ++i) {
    EXPECT_NEAR(y.values()[i], f.beta.values()[i % 3], 1e-9);
    EXPECT_TRUE(std::isfinite(y.values()[i]));
  }
}

TEST(BatchNorm, MatchesDirectFormulaAndMovingAverage) {
  const auto x = uniform({3, 2, 2, 4}, 21, -2.0, 3.0);
  BnFixture f(4);
  f.gamma = uniform({4}, 22, 0.5, 1.5);
  f.beta = uniform({4}, 23);
  Tape<double> tape(false);
  const auto y = ops::batch_norm(tape, x, f.gamma, f.beta, f.stats, ops::Mode::train);
  const std::size_t m = 12;
  for (std::size_t c = 0; c < 4; ++c) {
    double mean = 0.0, var = 0.0;
    for (std::size_t i = 0; i < m; ++i) mean += x.values()[i * 4 + c];
    mean /= m;
    for (std::size_t i = 0; i < m; ++i) var += std::pow(x.values()[i * 4 + c] - mean, 2);
    var /= m;
    for (std::size_t i = 0; i < m; ++i) {
      const double expect = (x.values()[i * 4 + c] - mean) / std::sqrt(var + 1e-5) *
                                f.gamma.values()[c] + f.beta.values()[c];
      EXPECT_NEAR(y.values()[i * 4 + c], expect, 1e-12);
    }
    // Running mean starts at 0, running variance at 1; momentum 0.9.
    EXPECT_NEAR(f.stats.mean.values()[c], 0.1 * mean, 1e-12);
    const double unbiased = var * m / (m - 1);
    const double biased_ok = std::abs(f.stats.var.values()[c] - (0.9 + 0.1 * var));
    const double unbiased_ok = std::abs(f.stats.var.values()[c] - (0.9 + 0.1 * unbiased));
    EXPECT_LT(std::min(biased_ok, unbiased_ok), 1e-12);
  }
}

TEST(BatchNorm, InferUsesRunningStatistics) {
  BnFixture f(1);
  f.stats.mean = D({1}, std::vector<double>{2.0});
  f.stats.var = D({1}, std::vector<double>{4.0});
  Tape<double> tape(false);
  const auto y = ops::batch_norm(tape, D({1, 1, 1, 1}, std::vector<double>{6.0}), f.gamma, f.beta,
                                 f.stats, ops::Mode::infer);
  EXPECT_NEAR(y.item(), 4.0 / std::sqrt(4.0 + 1e-5), 1e-12);
}

TEST(BatchNorm, EmptyTrainBatchRejected) {
  BnFixture f(2);
  Tape<double> tape(false);
  EXPECT_THROW(ops::batch_norm(tape, D::zeros({0, 1, 1, 2}), f.gamma, f.beta, f.stats,
                               ops::Mode::train),
               std::invalid_argument);
}

TEST(Activation, KnownValues) {
  Tape<double> tape(false);
  const D x({2}, std::vector<double>{-1.0, 2.0});
  const auto r = ops::relu(tape, x);
  EXPECT_EQ(r.values()[0], 0.0);
  EXPECT_EQ(r.values()[1], 2.0);
  EXPECT_EQ(ops::sigmoid(tape, D::scalar(0.0)).item(), 0.5);
  EXPECT_EQ(ops::tanh(tape, D::scalar(0.0)).item(), 0.0);
  const auto t = ops::tanh(tape, uniform({100}, 3, -30.0, 30.0));
  for (auto v : t.values()) EXPECT_LE(std::abs(v), 1.0);
}

TEST(Pool, GlobalAndCrossChannelKnownValues) {
  Tape<double> tape(false);
  const auto g = ops::global_avg_pool(tape, D::filled({1, 4, 4, 8}, 1.0));
  EXPECT_EQ(g.size(), 8u);
  for (auto v : g.values()) EXPECT_EQ(v, 1.0);
  std::vector<double> two(4 * 4 * 2);
  for (std::size_t i = 0; i < two.size(); ++i) two[i] = i % 2 ? 3.0 : 1.0;
  const auto cc = ops::cross_channel_avg_pool(tape, D({1, 4, 4, 2}, two));
  EXPECT_EQ(cc.shape(), (Shape{1, 4, 4, 1}));
  for (auto v : cc.values()) EXPECT_EQ(v, 2.0);
}

TEST(Pool, RandomInputMatchesDirectMeans) {
  Tape<double> tape(false);
  const auto x = uniform({1, 4, 4, 8}, 31);
  const auto g = ops::global_avg_pool(tape, x);
  const auto cc = ops::cross_channel_avg_pool(tape, x);
  for (std::size_t c = 0; c < 8; ++c) {
    double s = 0.0;
    for (std::size_t p = 0; p < 16; ++p) s += x.values()[p * 8 + c];
    EXPECT_NEAR(g.values()[c], s / 16.0, 1e-12);
  }
  for (std::size_t p = 0; p < 16; ++p) {
    double s = 0.0;
    for (std::size_t c = 0; c < 8; ++c) s += x.values()[p * 8 + c];
    EXPECT_NEAR(cc.values()[p], s / 8.0, 1e-12);
  }
}

TEST(Pool, WindowShapesFollowTheExtentFormula) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 1 + rng() % 3, stride = 1 + rng() % 2, pad = rng() % 2;
    const std::size_t h = std::max<std::size_t>(k, 1 + rng() % 8);
    const std::size_t w = std::max<std::size_t>(k, 1 + rng() % 8);
    const auto x = uniform({2, h, w, 3}, trial);
    Tape<double> tape(false);
    for (auto kind : {ops::PoolKind::max, ops::PoolKind::average}) {
      const auto y = ops::pool2d(tape, x, kind, k, stride, pad);
      ASSERT_EQ(y.shape(), (Shape{2, (h + 2 * pad - k) / stride + 1, (w + 2 * pad - k) / stride + 1, 3}));
    }
  }
}

TEST(Pool, AverageExcludesPaddingAndMaxPicksLargest) {
  const D x({1, 2, 2, 1}, std::vector<double>{1, 2, 3, 4});
  Tape<double> tape(false);
  const auto avg = ops::pool2d(tape, x, ops::PoolKind::average, 3, 1, 1);
  for (auto v : avg.values()) EXPECT_DOUBLE_EQ(v, 2.5);
  const auto mx = ops::pool2d(tape, x, ops::PoolKind::max, 3, 2, 1);
  EXPECT_EQ(mx.item(), 4.0);
}

TEST(Linear, IdentityBiasAndReference) {
  Tape<double> tape(false);
  const auto x = uniform({1, 3}, 41);
  std::vector<double> eye(9, 0.0);
  eye[0] = eye[4] = eye[8] = 1.0;
  const auto id = ops::linear(tape, x, D({3, 3}, eye), D::zeros({3}));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(id.values()[i], x.values()[i]);

  const auto b = uniform({3}, 42);
  const auto zb = ops::linear(tape, D::zeros({1, 3}), uniform({3, 3}, 43), b);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(zb.values()[i], b.values()[i]);

  const auto w = uniform({3, 5}, 44);
  const auto v = uniform({2, 5}, 45);
  const auto y = ops::linear(tape, v, w);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t o = 0; o < 3; ++o) {
      double acc = 0.0;
      for (std::size_t j = 0; j < 5; ++j) acc += w.at({o, j}) * v.at({r, j});
      EXPECT_NEAR(y.at({r, o}), acc, 1e-12);
    }
}

TEST(Linear, LengthMismatchNamesBothLengths) {
  Tape<double> tape(false);
  try {
    ops::linear(tape, D::zeros({1, 4}), D::zeros({2, 6}));
    FAIL();
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find('4'), std::string::npos) << msg;
    EXPECT_NE(msg.find('6'), std::string::npos) << msg;
  }
}

TEST(BilinearResize, IdentityConstantAndHandCase) {
  Tape<double> tape(false);
  const auto x = uniform({1, 3, 5, 2}, 51);
  const auto same = ops::bilinear_resize(tape, x, 3, 5);
  EXPECT_LT(testing::max_abs_diff<double>(same.values(), x.values()), 1e-15);
  const auto c = ops::bilinear_resize(tape, D::filled({1, 2, 3, 1}, 0.7), 7, 4);
  for (auto v : c.values()) EXPECT_NEAR(v, 0.7, 1e-15);
  const auto row = ops::bilinear_resize(tape, D({1, 1, 2, 1}, std::vector<double>{0, 3}), 1, 4);
  const double expect[] = {0, 1, 2, 3};
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(row.values()[i], expect[i], 1e-12);
}

D theta_of(double sh, double th, double sw, double tw) {
  return D({1, 2, 3}, std::vector<double>{sh, 0, th, 0, sw, tw});
}

TEST(GridSample, IdentityConstantAndCentre) {
  Tape<double> tape(false);
  const auto x = uniform({1, 4, 6, 3}, 61);
  const auto id = ops::grid_sample_affine(tape, x, theta_of(1, 0, 1, 0), 4, 6);
  EXPECT_LT(testing::max_abs_diff<double>(id.values(), x.values()), 1e-6);
  const auto c = ops::grid_sample_affine(tape, D::filled({1, 5, 5, 1}, 2.0),
                                         theta_of(0.5, 0, 0.5, 0), 3, 3);
  for (auto v : c.values()) EXPECT_NEAR(v, 2.0, 1e-12);
  const auto centre = ops::grid_sample_affine(
      tape, D({1, 2, 2, 1}, std::vector<double>{0, 1, 2, 3}), theta_of(0, 0, 0, 0), 1, 1);
  EXPECT_NEAR(centre.item(), 1.5, 1e-12);
}

TEST(GridSample, OutsideTheMapIsZero) {
  Tape<double> tape(false);
  const auto x = uniform({1, 4, 4, 2}, 62, 1.0, 2.0);
  const auto y = ops::grid_sample_affine(tape, x, theta_of(0.25, 3.0, 0.25, -3.0), 3, 3);
  for (auto v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(SoftmaxCrossEntropy, UniformSaturatedAndReference) {
  Tape<double> tape(false);
  for (std::size_t k : {2, 5, 751}) {
    EXPECT_NEAR(ops::softmax_cross_entropy(tape, D::zeros({1, k}), 0).item(), std::log(double(k)), 1e-12);
  }
  std::vector<double> sat(4, 0.0);
  sat[2] = 50.0;
  EXPECT_LT(ops::softmax_cross_entropy(tape, D({1, 4}, sat), 2).item(), 1e-6);
  const auto logits = uniform({1, 5}, 71, -3.0, 3.0);
  double m = -1e300;
  for (auto v : logits.values()) m = std::max(m, v);
  double s = 0.0;
  for (auto v : logits.values()) s += std::exp(v - m);
  EXPECT_NEAR(ops::softmax_cross_entropy(tape, logits, 3).item(),
              m + std::log(s) - logits.values()[3], 1e-10);
  EXPECT_THROW(ops::softmax_cross_entropy(tape, logits, 5), std::out_of_range);
}

TEST(Backward, SumOfSquaresGivesTwoX) {
  auto x = uniform({6}, 81, -1.0, 1.0, true);
  Tape<double> tape;
  tape.backward(ops::sum(tape, ops::mul(tape, x, x)));
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(x.grad()[i], 2.0 * x.values()[i], 1e-15);
}

TEST(Backward, FanOutAccumulatesBranchGradients) {
  auto x = uniform({1, 3, 3, 2}, 91, -1.0, 1.0, true);
  const auto w = uniform({3, 3, 2, 2}, 92);
  auto branch_a = [&](Tape<double>& t) { return ops::sum(t, ops::tanh(t, x)); };
  auto branch_b = [&](Tape<double>& t) {
    return ops::sum(t, ops::sigmoid(t, ops::conv2d(t, x, w, 1, 1)));
  };
  std::vector<double> ga, gb;
  {
    Tape<double> t;
    t.backward(branch_a(t));
    ga.assign(x.grad().begin(), x.grad().end());
    x.zero_grad();
  }
  {
    Tape<double> t;
    t.backward(branch_b(t));
    gb.assign(x.grad().begin(), x.grad().end());
    x.zero_grad();
  }
  Tape<double> t;
  t.backward(ops::add(t, branch_a(t), branch_b(t)));
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(x.grad()[i], ga[i] + gb[i], 1e-14);
}

TEST(Backward, NonScalarLossRejected) {
  auto x = uniform({3}, 1, -1.0, 1.0, true);
  Tape<double> tape;
  auto y = ops::relu(tape, x);
  EXPECT_THROW(tape.backward(y), std::invalid_argument);
}

TEST(GradCheck, LinearFunctionIsExact) {
  auto w = uniform({4, 6}, 101, -1.0, 1.0, true);
  const auto x = uniform({3, 6}, 102);
  const auto res = check_gradients<double>(
      [&](Tape<double>& t) { return ops::sum(t, ops::linear(t, x, w)); }, {w});
  EXPECT_EQ(res.checked, 24u);
  EXPECT_LT(res.max_rel_error, 1e-8);  // rounding in the difference quotient only
}

TEST(GradCheck, ConvBatchNormReluStack) {
  auto x = uniform({2, 4, 4, 2}, 111, -1.0, 1.0, true);
  auto w = uniform({3, 3, 2, 3}, 112, -1.0, 1.0, true);
  auto gamma = uniform({3}, 113, 0.5, 1.5, true);
  auto beta = uniform({3}, 114, -0.5, 0.5, true);
  const auto probe = uniform({2, 4, 4, 3}, 115);
  const auto res = check_gradients<double>(
      [&](Tape<double>& t) {
        ops::BatchNormStats<double> stats(3);
        auto y = ops::batch_norm(t, ops::conv2d(t, x, w, 1, 1), gamma, beta, stats, ops::Mode::train);
        return ops::sum(t, ops::mul(t, ops::relu(t, y), probe));
      },
      {x, w, gamma, beta});
  EXPECT_GT(res.checked, 0u);
  EXPECT_LT(res.max_rel_error, 1e-4) << res.worst_parameter;
}

TEST(GradCheck, GridSampleTranslation) {
  const auto x = uniform({1, 5, 6, 2}, 121);
  auto offsets = uniform({1, 3, 2}, 122, -0.8, 0.8, true);
  const auto probe = uniform({3, 3, 4, 2}, 123);
  const auto res = check_gradients<double>(
      [&](Tape<double>& t) {
        auto theta = ops::offsets_to_theta(t, offsets, 0.5, 0.6);
        return ops::sum(t, ops::mul(t, ops::grid_sample_affine(t, x, theta, 3, 4), probe));
      },
      {offsets});
  EXPECT_LT(res.max_rel_error, 1e-4);
}

TEST(GradCheck, EveryPrimitiveOverTwentyInstances) {
  gradcheck::SuiteOptions opt;
  for (const auto& [name, make] : gradcheck::primitive_cases()) {
    const auto r = gradcheck::run_suite(name, make, opt);
    EXPECT_EQ(r.instances, 20u) << name;
    EXPECT_GT(r.checked, 0u) << name;
    EXPECT_LE(r.max_rel_error, 1e-4) << name << ": " << r.worst;
  }
}

TEST(Determinism, RepeatedForwardAndBackwardAreBitIdentical) {
  auto run = [] {
    auto x = uniform({2, 6, 5, 3}, 131, -1.0, 1.0, true);
    auto w = uniform({3, 3, 3, 4}, 132, -1.0, 1.0, true);
    Tape<double> t;
    auto y = ops::pool2d(t, ops::relu(t, ops::conv2d(t, x, w, 2, 1)), ops::PoolKind::max, 2, 1, 0);
    t.backward(ops::sum(t, ops::mul(t, y, y)));
    std::vector<double> out(y.values().begin(), y.values().end());
    out.insert(out.end(), x.grad().begin(), x.grad().end());
    out.insert(out.end(), w.grad().begin(), w.grad().end());
    return out;
  };
  EXPECT_EQ(run(), run());
}

TEST(TensorInvariants, ShapeAndGradientSlots) {
  EXPECT_THROW(D({2, 3}, std::vector<double>(5)), ShapeError);
  auto x = uniform({2, 3}, 1, -1.0, 1.0, true);
  Tape<double> tape;
  tape.backward(ops::sum(tape, ops::tanh(tape, x)));
  EXPECT_EQ(x.grad().size(), x.size());
}

}  // namespace
}  // namespace hacnn
