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
#include <filesystem>
#include <random>

#include "hacnn/reid_eval.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace hacnn {
namespace {

Descriptor make(std::vector<double> v, std::size_t id, std::size_t cam) {
  Descriptor d;
  d.values = std::move(v);
  d.id = id;
  d.camera = cam;
  d.valid = normalize_parts(d.values);
  return d;
}

TEST(Normalize, EachHalfHasUnitNorm) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n;
  std::vector<double> v(1024);
  for (auto& x : v) x = 5.0 * n(rng);
  EXPECT_TRUE(normalize_parts(v));
  for (std::size_t part = 0; part < 2; ++part) {
    double ss = 0.0;
    for (std::size_t i = 0; i < 512; ++i) ss += v[part * 512 + i] * v[part * 512 + i];
    EXPECT_NEAR(std::sqrt(ss), 1.0, 1e-6);
  }
}

TEST(Normalize, ZeroPartIsFlagged) {
  std::vector<double> v{0, 0, 1, 2};
  EXPECT_FALSE(normalize_parts(v));
}

TEST(Distances, IdentityAntipodalAndReference) {
  const auto a = make({0.6, 0.8, 1.0, 0.0}, 0, 0);
  const auto b = make({-0.6, -0.8, 1.0, 0.0}, 0, 1);
  const auto d = pairwise_distances({a}, {a, b});
  EXPECT_EQ(d(0, 0), 0.0);
  EXPECT_NEAR(d(0, 1), 2.0, 1e-15);

  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> x(10), y(10);
  for (auto& v : x) v = u(rng);
  for (auto& v : y) v = u(rng);
  Descriptor p{x, 0, 0, true}, q{y, 1, 1, true};
  double ss = 0.0;
  for (std::size_t i = 0; i < 10; ++i) ss += (x[i] - y[i]) * (x[i] - y[i]);
  EXPECT_NEAR(pairwise_distances({p}, {q})(0, 0), std::sqrt(ss), 1e-10);
}

TEST(RankAndScore, PerfectDescriptors) {
  std::vector<Descriptor> probes, gallery;
  for (std::size_t id = 0; id < 5; ++id) {
    std::vector<double> v(10, 0.0);
    v[id] = 1.0;
    v[5 + id] = 1.0;
    probes.push_back(make(v, id, 0));
    gallery.push_back(make(v, id, 1));
    gallery.push_back(make(v, id, 1));
  }
  const auto r = evaluate_descriptors(probes, gallery);
  EXPECT_EQ(r.rank(1), 1.0);
  EXPECT_EQ(r.mean_ap, 1.0);
}

TEST(RankAndScore, HandComputedAveragePrecision) {
  // Correct matches at ranks 1 and 3 of 5: AP = (1/1 + 2/3) / 2.
  DistanceMatrix d{1, 5, {0.1, 0.2, 0.3, 0.4, 0.5}};
  const Labels probe{{7}, {0}};
  const Labels gallery{{7, 1, 7, 2, 3}, {1, 1, 1, 1, 1}};
  const auto r = rank_and_score(d, probe, gallery, 5);
  EXPECT_NEAR(r.mean_ap, (1.0 + 2.0 / 3.0) / 2.0, 1e-15);
  EXPECT_NEAR(r.mean_ap, 0.8333333333, 1e-9);
  EXPECT_EQ(r.rank(1), 1.0);
}

TEST(RankAndScore, SameCameraSameIdentityIsExcluded) {
  // The same-camera copy sits at distance 0 but must not count.
  DistanceMatrix d{1, 3, {0.0, 0.5, 0.7}};
  const Labels probe{{4}, {0}};
  const Labels gallery{{4, 9, 4}, {0, 1, 1}};
  const auto r = rank_and_score(d, probe, gallery, 3);
  EXPECT_EQ(r.rank(1), 0.0);
  EXPECT_EQ(r.rank(2), 1.0);
  EXPECT_NEAR(r.mean_ap, 0.5, 1e-15);
  // Moving the excluded entry anywhere changes nothing.
  for (double v : {0.6, 1.0, 10.0}) {
    d.values[0] = v;
    const auto moved = rank_and_score(d, probe, gallery, 3);
    EXPECT_EQ(moved.cmc, r.cmc);
    EXPECT_EQ(moved.mean_ap, r.mean_ap);
  }
}

TEST(RankAndScore, TiesFollowGalleryOrder) {
  DistanceMatrix d{1, 3, {0.5, 0.5, 0.5}};
  const auto first = rank_and_score(d, Labels{{1}, {0}}, Labels{{1, 2, 3}, {1, 1, 1}}, 3);
  const auto last = rank_and_score(d, Labels{{1}, {0}}, Labels{{3, 2, 1}, {1, 1, 1}}, 3);
  EXPECT_EQ(first.rank(1), 1.0);
  EXPECT_EQ(last.rank(2), 0.0);
  EXPECT_EQ(last.rank(3), 1.0);
}

TEST(RankAndScore, UnmatchedProbesAreCountedNotScored) {
  DistanceMatrix d{2, 2, {0.1, 0.2, 0.3, 0.4}};
  const auto r = rank_and_score(d, Labels{{0, 5}, {0, 0}}, Labels{{0, 1}, {1, 1}}, 2);
  EXPECT_EQ(r.scored_probes, 1u);
  EXPECT_EQ(r.probes_without_match, 1u);
  EXPECT_EQ(r.rank(1), 1.0);
}

TEST(RankAndScore, MatchesBruteForceOnRandomInstances) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const auto in = oracle::random_instance(rng);
    const auto r = rank_and_score(in.d, in.probe, in.gallery, 20);
    const auto o = oracle::brute_force(in.d, in.probe, in.gallery, 20);
    ASSERT_EQ(r.cmc, o.cmc) << "trial " << trial;
    ASSERT_EQ(r.mean_ap, o.mean_ap) << "trial " << trial;
  }
}

TEST(RankAndScore, CmcMonotoneAndBounded) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const auto in = oracle::random_instance(rng);
    const auto r = rank_and_score(in.d, in.probe, in.gallery, 20);
    for (std::size_t k = 0; k < r.cmc.size(); ++k) {
      EXPECT_GE(r.cmc[k], 0.0);
      EXPECT_LE(r.cmc[k], 1.0);
      if (k) EXPECT_GE(r.cmc[k], r.cmc[k - 1]);
    }
    EXPECT_LE(r.mean_ap, r.cmc.back() + 1e-15);
  }
}

TEST(RankAndScore, PositiveRescalingLeavesMetricsUnchanged) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<Descriptor> p, g;
  for (int i = 0; i < 6; ++i) {
    std::vector<double> v(8);
    for (auto& x : v) x = u(rng);
    p.push_back({v, std::size_t(i % 3), 0, true});
  }
  for (int i = 0; i < 15; ++i) {
    std::vector<double> v(8);
    for (auto& x : v) x = u(rng);
    g.push_back({v, std::size_t(i % 4), 1, true});
  }
  const auto base = rank_and_score(pairwise_distances(p, g), labels_of(p), labels_of(g), 15);
  for (auto& d : p) for (auto& x : d.values) x *= 4.0;
  for (auto& d : g) for (auto& x : d.values) x *= 4.0;
  const auto scaled = rank_and_score(pairwise_distances(p, g), labels_of(p), labels_of(g), 15);
  EXPECT_EQ(base.cmc, scaled.cmc);
  EXPECT_EQ(base.mean_ap, scaled.mean_ap);
}

TEST(RankAndScore, RejectsInconsistentLabels) {
  DistanceMatrix d{1, 2, {0.1, 0.2}};
  EXPECT_THROW(rank_and_score(d, Labels{{0}, {0}}, Labels{{0}, {0}}, 2), std::invalid_argument);
}

TEST(Descriptors, ZeroNormDescriptorsAreExcluded) {
  const auto good = make({1, 0, 0, 1}, 0, 0);
  const auto zero = make({0, 0, 0, 1}, 0, 1);
  const auto match = make({1, 0, 0, 1}, 0, 1);
  ASSERT_FALSE(zero.valid);
  const auto r = evaluate_descriptors({good}, {zero, match});
  EXPECT_EQ(r.excluded_invalid, 1u);
  EXPECT_EQ(r.num_gallery, 1u);
  EXPECT_EQ(r.rank(1), 1.0);
}

TEST(Descriptors, CsvRoundTrip) {
  const auto path = (std::filesystem::temp_directory_path() / "hacnn_desc.csv").string();
  std::vector<Descriptor> ds{make({0.3, -0.4, 0.1, 0.7}, 3, 1), make({1e-3, 2, -5, 1e7}, 8, 0)};
  write_descriptors_csv(path, ds);
  const auto back = read_descriptors_csv(path);
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back[i].id, ds[i].id);
    EXPECT_EQ(back[i].camera, ds[i].camera);
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(back[i].values[j], ds[i].values[j], 1e-15);
  }
}

TEST(Descriptors, ModelDescriptorsAreUnitPartsOfLength1024) {
  Model<float> model{ModelConfig{}};
  Dataset ds;
  Sample s;
  s.image = Image(160, 64);
  for (std::size_t i = 0; i < s.image.pixels.size(); ++i) s.image.pixels[i] = static_cast<float>((i * 37) % 101) / 100.0f;
  ds.items = {s, s};
  const auto d = extract_descriptors(model, ds, {0, 1});
  ASSERT_EQ(d.size(), 2u);
  EXPECT_EQ(d[0].values.size(), 1024u);
  EXPECT_EQ(d[0].values, d[1].values);
  for (std::size_t part = 0; part < 2; ++part) {
    double ss = 0.0;
    for (std::size_t i = 0; i < 512; ++i) ss += d[0].values[part * 512 + i] * d[0].values[part * 512 + i];
    EXPECT_NEAR(std::sqrt(ss), 1.0, 1e-6);
  }
}

}  // namespace
}  // namespace hacnn
