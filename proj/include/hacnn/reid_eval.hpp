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
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "hacnn/data.hpp"
#include "hacnn/network.hpp"

namespace hacnn {

/// Joint matching vector [x_g; x_l], each part L2-normalised independently.
struct Descriptor {
  std::vector<double> values;
  std::size_t id = 0;
  std::size_t camera = 0;
  bool valid = true;  // false when a part had zero norm
};

/// Normalises both halves in place; returns false if either half is zero.
inline bool normalize_parts(std::vector<double>& v) {
  if (v.size() % 2 != 0) throw std::invalid_argument("descriptor length must be even");
  const std::size_t half = v.size() / 2;
  bool ok = true;
  for (std::size_t part = 0; part < 2; ++part) {
    double ss = 0.0;
    for (std::size_t i = 0; i < half; ++i) ss += v[part * half + i] * v[part * half + i];
    const double norm = std::sqrt(ss);
    if (norm == 0.0 || !std::isfinite(norm)) {
      ok = false;
      continue;
    }
    for (std::size_t i = 0; i < half; ++i) v[part * half + i] /= norm;
  }
  return ok;
}

/// Inference-mode descriptors for the selected samples.
template <typename T>
std::vector<Descriptor> extract_descriptors(Model<T>& model, const Dataset& ds,
                                            const std::vector<std::size_t>& indices,
                                            std::size_t batch_size = 32) {
  std::vector<Descriptor> out;
  out.reserve(indices.size());
  for (std::size_t b = 0; b < indices.size(); b += batch_size) {
    std::vector<std::size_t> idx(indices.begin() + b,
                                 indices.begin() + std::min(indices.size(), b + batch_size));
    Tape<T> tape(false);
    const auto fo = model.forward(tape, make_batch<T>(ds, idx), Mode::infer);
    const std::size_t f = fo.global_features.dim(1);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      Descriptor d;
      d.values.resize(2 * f);
      for (std::size_t j = 0; j < f; ++j) {
        d.values[j] = fo.global_features.data()[r * f + j];
        d.values[f + j] = fo.local_features.data()[r * f + j];
      }
      d.valid = normalize_parts(d.values);
      d.id = ds.items[idx[r]].id;
      d.camera = ds.items[idx[r]].camera;
      out.push_back(std::move(d));
    }
  }
  return out;
}

/// Row-major probe x gallery matrix of L2 distances.
struct DistanceMatrix {
  std::size_t rows = 0, cols = 0;
  std::vector<double> values;

  double operator()(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
};

inline DistanceMatrix pairwise_distances(const std::vector<Descriptor>& probes,
                                         const std::vector<Descriptor>& gallery) {
  DistanceMatrix d{probes.size(), gallery.size(), std::vector<double>(probes.size() * gallery.size())};
  for (std::size_t i = 0; i < probes.size(); ++i) {
    for (std::size_t j = 0; j < gallery.size(); ++j) {
      const auto& a = probes[i].values;
      const auto& b = gallery[j].values;
      if (a.size() != b.size()) throw std::invalid_argument("descriptor lengths differ");
      double ss = 0.0;
      for (std::size_t k = 0; k < a.size(); ++k) ss += (a[k] - b[k]) * (a[k] - b[k]);
      d.values[i * d.cols + j] = std::sqrt(ss);
    }
  }
  return d;
}

struct EvalReport {
  std::vector<double> cmc;  // cmc[k - 1] = CMC at rank k
  double mean_ap = 0.0;
  std::size_t num_probes = 0;
  std::size_t num_gallery = 0;
  std::size_t scored_probes = 0;
  std::size_t probes_without_match = 0;
  std::size_t excluded_invalid = 0;  // zero-norm descriptors dropped before ranking
  std::string protocol = "single-query, same identity and camera excluded";

  double rank(std::size_t k) const { return cmc.at(k - 1); }
};

struct Labels {
  std::vector<std::size_t> ids;
  std::vector<std::size_t> cameras;
};

inline Labels labels_of(const std::vector<Descriptor>& d) {
  Labels l;
  for (const auto& x : d) {
    l.ids.push_back(x.id);
    l.cameras.push_back(x.camera);
  }
  return l;
}

/// Ranks the gallery for every probe by ascending distance (ties by gallery
/// index), skipping same-identity same-camera entries, and scores CMC up to
/// `max_rank` and mAP.
inline EvalReport rank_and_score(const DistanceMatrix& d, const Labels& probe, const Labels& gallery,
                                 std::size_t max_rank = 20) {
  if (probe.ids.size() != d.rows || gallery.ids.size() != d.cols ||
      probe.cameras.size() != d.rows || gallery.cameras.size() != d.cols) {
    throw std::invalid_argument("rank_and_score: label counts do not match the distance matrix");
  }
  if (max_rank == 0) throw std::invalid_argument("rank_and_score: max_rank must be positive");
  EvalReport rep;
  rep.num_probes = d.rows;
  rep.num_gallery = d.cols;
  std::vector<double> hits(max_rank, 0.0);
  double ap_sum = 0.0;
  std::vector<std::size_t> order(d.cols);
  for (std::size_t i = 0; i < d.rows; ++i) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return d(i, a) < d(i, b); });
    std::size_t position = 0, correct = 0, first = 0;
    double precision_sum = 0.0;
    for (auto j : order) {
      const bool same_id = gallery.ids[j] == probe.ids[i];
      if (same_id && gallery.cameras[j] == probe.cameras[i]) continue;
      ++position;
      if (same_id) {
        ++correct;
        if (!first) first = position;
        precision_sum += static_cast<double>(correct) / position;
      }
    }
    if (!correct) {
      ++rep.probes_without_match;
      continue;
    }
    ++rep.scored_probes;
    ap_sum += precision_sum / correct;
    for (std::size_t k = first; k <= max_rank; ++k) hits[k - 1] += 1.0;
  }
  rep.cmc.assign(max_rank, 0.0);
  if (rep.scored_probes) {
    for (std::size_t k = 0; k < max_rank; ++k) rep.cmc[k] = hits[k] / rep.scored_probes;
    rep.mean_ap = ap_sum / rep.scored_probes;
  }
  return rep;
}

/// Drops flagged descriptors, then distances and scores.
inline EvalReport evaluate_descriptors(const std::vector<Descriptor>& probes,
                                       const std::vector<Descriptor>& gallery,
                                       std::size_t max_rank = 20) {
  std::vector<Descriptor> p, g;
  std::size_t dropped = 0;
  for (const auto& x : probes) x.valid ? p.push_back(x) : void(++dropped);
  for (const auto& x : gallery) x.valid ? g.push_back(x) : void(++dropped);
  auto rep = rank_and_score(pairwise_distances(p, g), labels_of(p), labels_of(g), max_rank);
  rep.excluded_invalid = dropped;
  return rep;
}

template <typename T>
EvalReport evaluate_model(Model<T>& model, const Dataset& ds, std::size_t max_rank = 20) {
  const auto q = extract_descriptors(model, ds, ds.indices(Split::query));
  const auto g = extract_descriptors(model, ds, ds.indices(Split::gallery));
  return evaluate_descriptors(q, g, max_rank);
}

inline std::string format_report(const EvalReport& r) {
  std::ostringstream os;
  os << "protocol        " << r.protocol << '\n'
     << "probes          " << r.num_probes << '\n'
     << "gallery         " << r.num_gallery << '\n'
     << "scored probes   " << r.scored_probes << '\n'
     << "no valid match  " << r.probes_without_match << '\n'
     << "zero-norm       " << r.excluded_invalid << '\n'
     << std::fixed << std::setprecision(4) << "mAP             " << r.mean_ap << '\n';
  for (std::size_t k : {1, 5, 10, 20}) {
    if (k <= r.cmc.size()) os << "rank-" << std::left << std::setw(10) << k << r.rank(k) << '\n';
  }
  return os.str();
}

inline std::string format_cmc_csv(const EvalReport& r) {
  std::ostringstream os;
  os << "rank,cmc\n" << std::setprecision(17);
  for (std::size_t k = 0; k < r.cmc.size(); ++k) os << k + 1 << ',' << r.cmc[k] << '\n';
  os << "mAP," << r.mean_ap << '\n';
  return os.str();
}

inline void write_descriptors_csv(const std::string& path, const std::vector<Descriptor>& ds) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << std::setprecision(17);
  for (const auto& d : ds) {
    f << d.id << ',' << d.camera;
    for (double v : d.values) f << ',' << v;
    f << '\n';
  }
}

/// Reads rows of `id,cam,v1,...,vD`; descriptors are re-normalised per half.
inline std::vector<Descriptor> read_descriptors_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::vector<Descriptor> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream in(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(in, cell, ',')) cells.push_back(cell);
    try {
      if (cells.size() < 4) throw std::invalid_argument("too few columns");
      Descriptor d;
      d.id = std::stoul(cells[0]);
      d.camera = std::stoul(cells[1]);
      for (std::size_t i = 2; i < cells.size(); ++i) d.values.push_back(std::stod(cells[i]));
      if (!out.empty() && d.values.size() != out.front().values.size()) {
        throw std::invalid_argument("descriptor length differs from earlier rows");
      }
      d.valid = normalize_parts(d.values);
      out.push_back(std::move(d));
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace hacnn
