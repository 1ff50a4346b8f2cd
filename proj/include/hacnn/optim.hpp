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
#include <span>
#include <stdexcept>
#include <vector>

#include "hacnn/layers.hpp"

namespace hacnn {

struct AdamConfig {
  double learning_rate = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First and second moments, one buffer per parameter tensor, plus the
/// shared step counter used for bias correction.
template <typename T>
struct AdamState {
  std::uint64_t step = 0;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;

  void reset(const std::vector<NamedTensor<T>>& params) {
    step = 0;
    m.assign(params.size(), {});
    v.assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) {
      m[i].assign(params[i].tensor.size(), T(0));
      v[i].assign(params[i].tensor.size(), T(0));
    }
  }

  bool matches(const std::vector<NamedTensor<T>>& params) const {
    if (m.size() != params.size() || v.size() != params.size()) return false;
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (m[i].size() != params[i].tensor.size() || v[i].size() != params[i].tensor.size()) {
        return false;
      }
    }
    return true;
  }
};

/// One bias-corrected update of a flat buffer; `step` is the 1-based index
/// of this update.
template <typename T>
void adam_update(std::span<T> theta, std::span<const T> grad, std::span<T> m, std::span<T> v,
                 std::uint64_t step, const AdamConfig& cfg) {
  if (grad.size() != theta.size() || m.size() != theta.size() || v.size() != theta.size()) {
    throw std::invalid_argument("adam_update: buffer sizes differ");
  }
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double g = grad[i];
    const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
    const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    const double mhat = mi / c1;
    const double vhat = vi / c2;
    theta[i] = static_cast<T>(theta[i] - cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon));
  }
}

/// Applies one step to every parameter. Parameters without a gradient slot
/// are updated with a zero gradient so their moments keep decaying.
template <typename T>
void adam_step(const std::vector<NamedTensor<T>>& params, AdamState<T>& state,
               const AdamConfig& cfg) {
  if (!state.matches(params)) state.reset(params);
  ++state.step;
  std::vector<T> zeros;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].tensor;
    std::span<const T> g;
    if (p.has_grad()) {
      g = std::span<const T>(p.grad());
    } else {
      zeros.assign(p.size(), T(0));
      g = std::span<const T>(zeros);
    }
    adam_update<T>(p.mutable_values(), g, state.m[i], state.v[i], state.step, cfg);
  }
}

}  // namespace hacnn
