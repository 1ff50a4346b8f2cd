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
#include <array>
#include <cmath>
#include <vector>

#include "hacnn/attention.hpp"
#include "hacnn/data.hpp"

namespace hacnn {

/// Outline colours for regions 1..4: head-shoulder, upper body, upper leg,
/// lower leg.
inline constexpr std::array<std::array<float, 3>, 4> kRegionColors{
    {{1.0f, 0.0f, 0.0f}, {0.0f, 1.0f, 0.0f}, {0.0f, 0.0f, 1.0f}, {1.0f, 1.0f, 0.0f}}};

/// Min-max normalised grayscale rendering of an h x w map (row-major),
/// bilinearly upscaled to out_h x out_w. A constant map renders black.
inline Image heatmap(const std::vector<double>& map, std::size_t h, std::size_t w,
                     std::size_t out_h, std::size_t out_w) {
  if (map.size() != h * w || map.empty()) throw ImageError("heatmap: map size mismatch");
  const auto [lo, hi] = std::minmax_element(map.begin(), map.end());
  const double range = *hi - *lo;
  Image small(h, w);
  for (std::size_t i = 0; i < map.size(); ++i) {
    const float v = range > 0 ? static_cast<float>((map[i] - *lo) / range) : 0.0f;
    for (std::size_t c = 0; c < 3; ++c) small.pixels[i * 3 + c] = v;
  }
  return resize_bilinear(small, out_h, out_w);
}

/// Pixel box [y0, y1] x [x0, x1] on an image of the given size.
struct Box {
  double y0 = 0, x0 = 0, y1 = 0, x1 = 0;
};

/// Image-space footprint of a region sampled with translation (t_h, t_w):
/// normalised extent [t - s, t + s] per axis, corners aligned.
inline Box region_box(double t_h, double t_w, const RegionGeometry& g, std::size_t img_h,
                      std::size_t img_w) {
  auto to_px = [](double u, std::size_t n) { return (u + 1.0) * 0.5 * (static_cast<double>(n) - 1.0); };
  return {to_px(t_h - g.scale_h(), img_h), to_px(t_w - g.scale_w(), img_w),
          to_px(t_h + g.scale_h(), img_h), to_px(t_w + g.scale_w(), img_w)};
}

inline void draw_box(Image& img, const Box& b, const std::array<float, 3>& color) {
  auto clampi = [](double v, std::size_t n) {
    return static_cast<std::ptrdiff_t>(std::clamp(std::lround(v), 0L, static_cast<long>(n) - 1));
  };
  const auto y0 = clampi(b.y0, img.height), y1 = clampi(b.y1, img.height);
  const auto x0 = clampi(b.x0, img.width), x1 = clampi(b.x1, img.width);
  auto put = [&](std::ptrdiff_t y, std::ptrdiff_t x) {
    for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = color[c];
  };
  for (auto x = x0; x <= x1; ++x) {
    put(y0, x);
    put(y1, x);
  }
  for (auto y = y0; y <= y1; ++y) {
    put(y, x0);
    put(y, x1);
  }
}

}  // namespace hacnn
