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
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "hacnn/tensor.hpp"

namespace hacnn {

struct GradCheckOptions {
  double epsilon = 1e-5;
  // Relative error denominator is max(|analytic|, |numeric|, floor).
  double floor = 1e-6;
  // 0 checks every entry; otherwise a seeded random subset per tensor.
  std::size_t max_entries_per_tensor = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
  // Entries whose perturbation flipped a relu mask, max-pool winner or
  // sampling cell; central differences are meaningless across a kink.
  std::size_t skipped_at_kinks = 0;
};

template <typename T>
using ScalarFunction = std::function<Tensor<T>(Tape<T>&)>;

/// Compares reverse-mode gradients of `f` against central differences
/// (f(p + eps) - f(p - eps)) / (2 eps), entry by entry over `params`.
template <typename T>
GradCheckResult check_gradients(const ScalarFunction<T>& f, std::vector<Tensor<T>> params,
                                const GradCheckOptions& opt = {}) {
  for (auto& p : params) p.zero_grad();
  Tape<T> tape;
  tape.track_kinks(true);
  const Tensor<T> loss = f(tape);
  tape.backward(loss);
  const std::uint64_t base_signature = tape.kink_signature();

  auto evaluate = [&](std::uint64_t& signature) {
    Tape<T> probe(false);
    probe.track_kinks(true);
    const T v = f(probe).item();
    signature = probe.kink_signature();
    return static_cast<double>(v);
  };

  GradCheckResult result;
  std::mt19937_64 rng(opt.seed);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    std::vector<T> analytic(p.size(), T(0));
    if (p.has_grad()) std::copy(p.grad().begin(), p.grad().end(), analytic.begin());

    std::vector<std::size_t> entries(p.size());
    std::iota(entries.begin(), entries.end(), std::size_t{0});
    if (opt.max_entries_per_tensor && entries.size() > opt.max_entries_per_tensor) {
      std::shuffle(entries.begin(), entries.end(), rng);
      entries.resize(opt.max_entries_per_tensor);
    }
    auto values = p.mutable_values();
    for (auto i : entries) {
      const T saved = values[i];
      std::uint64_t sig_plus = 0, sig_minus = 0;
      values[i] = saved + static_cast<T>(opt.epsilon);
      const double f_plus = evaluate(sig_plus);
      values[i] = saved - static_cast<T>(opt.epsilon);
      const double f_minus = evaluate(sig_minus);
      values[i] = saved;
      if (sig_plus != base_signature || sig_minus != base_signature) {
        ++result.skipped_at_kinks;
        continue;
      }
      const double numeric = (f_plus - f_minus) / (2.0 * opt.epsilon);
      const double a = analytic[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), opt.floor});
      const double rel = std::abs(a - numeric) / denom;
      ++result.checked;
      if (rel > result.max_rel_error || result.worst_parameter.empty()) {
        result.max_rel_error = std::max(rel, result.max_rel_error);
        result.worst_parameter = p.name().empty() ? "param" + std::to_string(pi) : p.name();
        result.worst_index = i;
        result.worst_analytic = a;
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace hacnn
