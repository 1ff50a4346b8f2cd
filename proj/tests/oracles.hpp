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
#include <random>
#include <utility>
#include <vector>

#include "hacnn/reid_eval.hpp"

// Reference implementations kept deliberately naive; shared by the unit tests
// and the acceptance suite.
namespace hacnn::oracle {

struct Scores {
  std::vector<double> cmc;
  double mean_ap = 0.0;
  std::size_t scored = 0;
};

/// Builds each probe's ranked list explicitly as (distance, gallery index)
/// pairs, then reads CMC and AP off the list by counting.
inline Scores brute_force(const DistanceMatrix& d, const Labels& probe, const Labels& gallery,
                          std::size_t max_rank) {
  Scores s;
  s.cmc.assign(max_rank, 0.0);
  double ap_total = 0.0;
  for (std::size_t i = 0; i < d.rows; ++i) {
    std::vector<std::pair<double, std::size_t>> ranked;
    for (std::size_t j = 0; j < d.cols; ++j) {
      if (gallery.ids[j] == probe.ids[i] && gallery.cameras[j] == probe.cameras[i]) continue;
      ranked.emplace_back(d(i, j), j);
    }
    std::sort(ranked.begin(), ranked.end());
    std::vector<std::size_t> match_ranks;
    for (std::size_t r = 0; r < ranked.size(); ++r) {
      if (gallery.ids[ranked[r].second] == probe.ids[i]) match_ranks.push_back(r + 1);
    }
    if (match_ranks.empty()) continue;
    ++s.scored;
    double ap = 0.0;
    for (std::size_t m = 0; m < match_ranks.size(); ++m) {
      ap += static_cast<double>(m + 1) / static_cast<double>(match_ranks[m]);
    }
    ap_total += ap / static_cast<double>(match_ranks.size());
    for (std::size_t k = 1; k <= max_rank; ++k) {
      if (match_ranks.front() <= k) s.cmc[k - 1] += 1.0;
    }
  }
  if (s.scored) {
    for (auto& c : s.cmc) c /= static_cast<double>(s.scored);
    s.mean_ap = ap_total / static_cast<double>(s.scored);
  }
  return s;
}

struct Instance {
  DistanceMatrix d;
  Labels probe, gallery;
};

/// Random distance matrix with few identities and cameras, so ties,
/// same-camera exclusions and unmatched probes all occur. Distances are
/// drawn from a small grid to force exact ties.
inline Instance random_instance(std::mt19937_64& rng, std::size_t max_probes = 10,
                                std::size_t max_gallery = 20) {
  Instance in;
  const std::size_t p = 1 + rng() % max_probes, g = 1 + rng() % max_gallery;
  const std::size_t ids = 2 + rng() % 5, cams = 1 + rng() % 3;
  in.d.rows = p;
  in.d.cols = g;
  for (std::size_t i = 0; i < p * g; ++i) in.d.values.push_back(static_cast<double>(rng() % 7) * 0.25);
  for (std::size_t i = 0; i < p; ++i) {
    in.probe.ids.push_back(rng() % ids);
    in.probe.cameras.push_back(rng() % cams);
  }
  for (std::size_t j = 0; j < g; ++j) {
    in.gallery.ids.push_back(rng() % ids);
    in.gallery.cameras.push_back(rng() % cams);
  }
  return in;
}

}  // namespace hacnn::oracle
