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
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <regex>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#ifdef HACNN_HAVE_PNG
#include <png.h>
#endif

#include "hacnn/config.hpp"
#include "hacnn/random.hpp"
#include "hacnn/tensor.hpp"

namespace hacnn {

inline constexpr std::size_t kImageHeight = 160;
inline constexpr std::size_t kImageWidth = 64;

/// Interleaved RGB image with values in [0, 1].
struct Image {
  std::size_t height = 0, width = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, float fill = 0.0f)
      : height(h), width(w), pixels(h * w * 3, fill) {}

  float& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * 3 + c]; }
  float at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels[(y * width + x) * 3 + c];
  }
  bool operator==(const Image&) const = default;
};

class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bilinear resampling with corner pixels aligned.
inline Image resize_bilinear(const Image& src, std::size_t h, std::size_t w) {
  if (src.height == h && src.width == w) return src;
  if (src.height == 0 || src.width == 0) throw ImageError("resize of an empty image");
  Image out(h, w);
  auto coord = [](std::size_t i, std::size_t n_out, std::size_t n_in) {
    return n_out > 1 ? static_cast<double>(i) * (n_in - 1) / (n_out - 1) : 0.0;
  };
  for (std::size_t y = 0; y < h; ++y) {
    const double sy = coord(y, h, src.height);
    const std::size_t y0 = static_cast<std::size_t>(sy);
    const std::size_t y1 = std::min(y0 + 1, src.height - 1);
    const double fy = sy - y0;
    for (std::size_t x = 0; x < w; ++x) {
      const double sx = coord(x, w, src.width);
      const std::size_t x0 = static_cast<std::size_t>(sx);
      const std::size_t x1 = std::min(x0 + 1, src.width - 1);
      const double fx = sx - x0;
      for (std::size_t c = 0; c < 3; ++c) {
        const double top = src.at(y0, x0, c) * (1 - fx) + src.at(y0, x1, c) * fx;
        const double bot = src.at(y1, x0, c) * (1 - fx) + src.at(y1, x1, c) * fx;
        out.at(y, x, c) = static_cast<float>(top * (1 - fy) + bot * fy);
      }
    }
  }
  return out;
}

inline std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

inline std::string encode_ppm(const Image& img) {
  std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  out.reserve(out.size() + img.pixels.size());
  for (float v : img.pixels) out.push_back(static_cast<char>(to_byte(v)));
  return out;
}

inline Image decode_ppm(const std::string& bytes, const std::string& label = "image") {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&] {
    skip_space();
    std::size_t v = 0, digits = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      v = v * 10 + static_cast<std::size_t>(bytes[pos++] - '0');
      if (++digits > 9) throw ImageError(label + ": PPM header value too large");
    }
    if (!digits) throw ImageError(label + ": malformed PPM header");
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') {
    throw ImageError(label + ": not a binary PPM (P6) file");
  }
  pos = 2;
  const std::size_t w = number(), h = number(), maxval = number();
  if (w == 0 || h == 0 || maxval == 0 || maxval > 65535) {
    throw ImageError(label + ": invalid PPM dimensions or maxval");
  }
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw ImageError(label + ": malformed PPM header");
  }
  ++pos;
  const std::size_t bps = maxval < 256 ? 1 : 2;
  if (bytes.size() - pos < w * h * 3 * bps) throw ImageError(label + ": truncated PPM data");
  Image img(h, w);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
  for (std::size_t i = 0; i < w * h * 3; ++i) {
    const std::size_t v = bps == 1 ? p[i] : (std::size_t{p[2 * i]} << 8) | p[2 * i + 1];
    img.pixels[i] = static_cast<float>(static_cast<double>(v) / maxval);
  }
  return img;
}

inline std::string read_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ImageError("cannot open " + path);
  return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

inline void write_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ImageError("cannot write " + path);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline void write_ppm(const std::string& path, const Image& img) { write_bytes(path, encode_ppm(img)); }

inline bool png_supported() {
#ifdef HACNN_HAVE_PNG
  return true;
#else
  return false;
#endif
}

inline Image read_png(const std::string& path) {
#ifdef HACNN_HAVE_PNG
  png_image im;
  std::memset(&im, 0, sizeof(im));
  im.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&im, path.c_str())) {
    throw ImageError(path + ": " + im.message);
  }
  im.format = PNG_FORMAT_RGB;
  std::vector<unsigned char> buf(PNG_IMAGE_SIZE(im));
  if (!png_image_finish_read(&im, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&im);
    throw ImageError(path + ": " + im.message);
  }
  Image img(im.height, im.width);
  for (std::size_t i = 0; i < buf.size(); ++i) img.pixels[i] = buf[i] / 255.0f;
  return img;
#else
  throw ImageError(path + ": PNG support was not compiled in");
#endif
}

inline Image read_image(const std::string& path) {
  const auto ext = std::filesystem::path(path).extension().string();
  if (ext == ".png") return read_png(path);
  return decode_ppm(read_bytes(path), path);
}

enum class Split { train, query, gallery };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::query: return "query";
    case Split::gallery: return "gallery";
  }
  return "?";
}

struct Sample {
  Image image;
  std::size_t id = 0;      // dense label in [0, num_ids)
  std::size_t camera = 0;
  Split split = Split::train;
  std::string source;
};

struct Dataset {
  std::vector<Sample> items;
  std::size_t num_ids = 0;
  std::string provenance;
  std::vector<std::string> id_names;  // original identity per dense label
  std::size_t skipped_files = 0;

  std::vector<std::size_t> indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (items[i].split == s) out.push_back(i);
    }
    return out;
  }
};

/// Stacks the selected images into an N x H x W x 3 batch; all of them must
/// share one size.
template <typename T>
Tensor<T> make_batch(const Dataset& ds, const std::vector<std::size_t>& idx) {
  if (idx.empty()) throw std::invalid_argument("make_batch: empty selection");
  const std::size_t h = ds.items.at(idx[0]).image.height, w = ds.items.at(idx[0]).image.width;
  Buffer<T> v;
  v.reserve(idx.size() * h * w * 3);
  for (auto i : idx) {
    const auto& img = ds.items.at(i).image;
    if (img.height != h || img.width != w) {
      throw ImageError("sample " + ds.items[i].source + " is " + std::to_string(img.height) + "x" +
                       std::to_string(img.width) + ", batch is " + std::to_string(h) + "x" +
                       std::to_string(w));
    }
    for (float p : img.pixels) v.push_back(static_cast<T>(p));
  }
  return Tensor<T>({idx.size(), h, w, 3}, std::move(v));
}

struct SynthConfig {
  std::size_t ids = 20;
  std::size_t images_per_id_per_cam = 8;
  std::size_t cameras = 2;
  std::uint64_t seed = 1;
  double train_fraction = 0.5;  // leading share of identities used for training
  double translate = 0.2;       // max shift as a fraction of each dimension
  double scale_jitter = 0.2;    // scale drawn from [1 - j, 1 + j]
  std::size_t clutter = 4;      // background rectangles per image
  double occlusion = 0.3;       // probability of an occlusion bar
  double noise = 0.02;          // pixel noise standard deviation
  double camera_shift = 0.15;   // per-camera colour gain/offset amplitude

  void validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("synthetic data: " + m); };
    if (ids < 2) fail("need at least 2 identities");
    if (cameras < 2) fail("need at least 2 cameras for cross-camera matching");
    if (images_per_id_per_cam < 1) fail("need at least 1 image per identity and camera");
    if (!(train_fraction >= 0.0 && train_fraction < 1.0)) fail("train_fraction must lie in [0, 1)");
    if (train_ids() >= ids) fail("no identities left for query/gallery");
    if (translate < 0 || translate > 0.45 || scale_jitter < 0 || scale_jitter > 0.5) {
      fail("jitter amplitudes out of range");
    }
    if (occlusion < 0 || occlusion > 1 || noise < 0 || camera_shift < 0 || camera_shift > 0.5) {
      fail("appearance perturbations out of range");
    }
  }

  std::size_t train_ids() const {
    return static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(ids) + 0.5));
  }

  kv::Map to_kv() const {
    return {{"synth_ids", kv::format(ids)},
            {"synth_images_per_id_per_cam", kv::format(images_per_id_per_cam)},
            {"synth_cameras", kv::format(cameras)},
            {"synth_seed", kv::format(seed)},
            {"synth_train_fraction", kv::format(train_fraction)},
            {"synth_translate", kv::format(translate)},
            {"synth_scale_jitter", kv::format(scale_jitter)},
            {"synth_clutter", kv::format(clutter)},
            {"synth_occlusion", kv::format(occlusion)},
            {"synth_noise", kv::format(noise)},
            {"synth_camera_shift", kv::format(camera_shift)}};
  }

  void apply(const kv::Map& m) {
    kv::read(m, "synth_ids", ids);
    kv::read(m, "synth_images_per_id_per_cam", images_per_id_per_cam);
    kv::read(m, "synth_cameras", cameras);
    kv::read(m, "synth_seed", seed);
    kv::read(m, "synth_train_fraction", train_fraction);
    kv::read(m, "synth_translate", translate);
    kv::read(m, "synth_scale_jitter", scale_jitter);
    kv::read(m, "synth_clutter", clutter);
    kv::read(m, "synth_occlusion", occlusion);
    kv::read(m, "synth_noise", noise);
    kv::read(m, "synth_camera_shift", camera_shift);
  }
};

inline constexpr std::array<std::array<float, 3>, 10> kPalette{{{0.85f, 0.15f, 0.15f},
                                                                {0.15f, 0.65f, 0.20f},
                                                                {0.15f, 0.25f, 0.85f},
                                                                {0.90f, 0.85f, 0.20f},
                                                                {0.70f, 0.25f, 0.75f},
                                                                {0.20f, 0.75f, 0.80f},
                                                                {0.95f, 0.55f, 0.10f},
                                                                {0.10f, 0.10f, 0.10f},
                                                                {0.92f, 0.92f, 0.92f},
                                                                {0.50f, 0.32f, 0.18f}}};

/// Persistent appearance of one identity.
struct Appearance {
  std::size_t head = 0, torso = 0, legs = 0;  // palette indices
  std::size_t stripe_period = 0;              // 0 = plain torso
  double stripe_phase = 0.0;
};

inline std::vector<Appearance> make_appearances(std::size_t n, std::uint64_t seed) {
  constexpr std::size_t kPeriods[] = {0, 6, 11};
  const std::size_t k = kPalette.size();
  const std::size_t space = k * k * k * std::size(kPeriods);
  if (n > space) throw std::invalid_argument("synthetic data: too many identities for the palette");
  SplitMix rng(hash_seed({seed, 0xA11CEULL}));
  std::set<std::size_t> used;
  std::vector<Appearance> out;
  while (out.size() < n) {
    Appearance a;
    a.head = rng.below(k);
    a.torso = rng.below(k);
    a.legs = rng.below(k);
    const std::size_t p = rng.below(std::size(kPeriods));
    a.stripe_period = kPeriods[p];
    a.stripe_phase = rng.uniform();
    const std::size_t key = ((a.head * k + a.torso) * k + a.legs) * std::size(kPeriods) + p;
    if (a.torso == a.legs || !used.insert(key).second) continue;
    out.push_back(a);
  }
  return out;
}

/// Renders one view of an identity. Everything random is drawn from a
/// stream keyed by (seed, id, camera, index).
inline Image render_person(const SynthConfig& cfg, const Appearance& look, std::size_t id,
                           std::size_t camera, std::size_t index) {
  const std::size_t H = kImageHeight, W = kImageWidth;
  SplitMix cam_rng(hash_seed({cfg.seed, 0xCA3ULL, camera}));
  std::array<float, 3> gain{}, offset{}, backdrop{};
  for (std::size_t c = 0; c < 3; ++c) {
    gain[c] = static_cast<float>(1.0 + cfg.camera_shift * cam_rng.uniform(-1.0, 1.0));
    offset[c] = static_cast<float>(0.5 * cfg.camera_shift * cam_rng.uniform(-1.0, 1.0));
  }
  const float shade = static_cast<float>(cam_rng.uniform(0.35, 0.6));
  for (std::size_t c = 0; c < 3; ++c) {
    backdrop[c] = shade + static_cast<float>(0.08 * cam_rng.uniform(-1.0, 1.0));
  }

  SplitMix rng(hash_seed({cfg.seed, id, camera, index}));
  Image img(H, W);
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = backdrop[c];
    }
  }
  auto fill_rect = [&](double y0, double x0, double y1, double x1, const std::array<float, 3>& col) {
    const auto ya = static_cast<std::ptrdiff_t>(std::floor(std::max(0.0, y0)));
    const auto yb = static_cast<std::ptrdiff_t>(std::ceil(std::min<double>(H, y1)));
    const auto xa = static_cast<std::ptrdiff_t>(std::floor(std::max(0.0, x0)));
    const auto xb = static_cast<std::ptrdiff_t>(std::ceil(std::min<double>(W, x1)));
    for (auto y = ya; y < yb; ++y) {
      for (auto x = xa; x < xb; ++x) {
        for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = col[c];
      }
    }
  };
  for (std::size_t k = 0; k < cfg.clutter; ++k) {
    const double y0 = rng.uniform(0, H), x0 = rng.uniform(0, W);
    const double h = rng.uniform(6, 30), w = rng.uniform(4, 20);
    fill_rect(y0, x0, y0 + h, x0 + w, kPalette[rng.below(kPalette.size())]);
  }

  // Person box in pixels: height 0.8 H and width 0.55 W at unit scale.
  const double scale = 1.0 + cfg.scale_jitter * rng.uniform(-1.0, 1.0);
  const double ph = 0.8 * H * scale, pw = 0.55 * W * scale;
  const double cy = 0.5 * H + cfg.translate * H * rng.uniform(-1.0, 1.0);
  const double cx = 0.5 * W + cfg.translate * W * rng.uniform(-1.0, 1.0);
  const double top = cy - 0.5 * ph, left = cx - 0.5 * pw;
  const auto& head = kPalette[look.head];
  const auto& torso = kPalette[look.torso];
  const auto& legs = kPalette[look.legs];
  for (std::size_t y = 0; y < H; ++y) {
    const double v = (y + 0.5 - top) / ph;
    if (v < 0.0 || v >= 1.0) continue;
    for (std::size_t x = 0; x < W; ++x) {
      const double u = (x + 0.5 - left) / pw - 0.5;  // [-0.5, 0.5) across the person box
      const std::array<float, 3>* col = nullptr;
      std::array<float, 3> striped{};
      if (v < 0.17) {
        const double dy = (v - 0.085) / 0.085, dx = u / 0.2;
        if (dx * dx + dy * dy <= 1.0) col = &head;
      } else if (v < 0.56) {
        if (std::abs(u) <= 0.5) {
          col = &torso;
          if (look.stripe_period) {
            const double phase = (v - 0.17) * ph / look.stripe_period + look.stripe_phase;
            if (phase - std::floor(phase) < 0.5) {
              for (std::size_t c = 0; c < 3; ++c) striped[c] = 0.55f * torso[c] + 0.2f;
              col = &striped;
            }
          }
        }
      } else if (std::abs(u) <= 0.36 && std::abs(u) >= 0.04) {
        col = &legs;
      }
      if (col) {
        for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = (*col)[c];
      }
    }
  }
  if (rng.uniform() < cfg.occlusion) {
    const auto& col = kPalette[rng.below(kPalette.size())];
    if (rng.uniform() < 0.5) {
      const double y0 = rng.uniform(0.2 * H, 0.8 * H);
      fill_rect(y0, 0, y0 + rng.uniform(10, 24), W, col);
    } else {
      const double x0 = rng.uniform(0, 0.7 * W);
      fill_rect(0, x0, H, x0 + rng.uniform(6, 14), col);
    }
  }
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        float& p = img.at(y, x, c);
        const double n = cfg.noise > 0 ? cfg.noise * rng.normal() : 0.0;
        p = std::clamp(static_cast<float>(p * gain[c] + offset[c] + n), 0.0f, 1.0f);
      }
    }
  }
  return img;
}

/// Seeded misaligned-identity benchmark. The first train_ids() identities
/// form the training split; for the rest, the first half of each camera's
/// views are queries and the remainder gallery (with a single view per
/// camera, camera 0 is the query).
inline Dataset generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  const auto looks = make_appearances(cfg.ids, cfg.seed);
  Dataset ds;
  ds.num_ids = cfg.ids;
  ds.provenance = "synthetic seed=" + std::to_string(cfg.seed);
  const std::size_t n_train = cfg.train_ids();
  const std::size_t k = cfg.images_per_id_per_cam;
  for (std::size_t id = 0; id < cfg.ids; ++id) {
    ds.id_names.push_back(std::to_string(id));
    for (std::size_t cam = 0; cam < cfg.cameras; ++cam) {
      for (std::size_t i = 0; i < k; ++i) {
        Sample s;
        s.image = render_person(cfg, looks[id], id, cam, i);
        s.id = id;
        s.camera = cam;
        if (id < n_train) {
          s.split = Split::train;
        } else if (k == 1) {
          s.split = cam == 0 ? Split::query : Split::gallery;
        } else {
          s.split = i < k / 2 ? Split::query : Split::gallery;
        }
        s.source = "synthetic/" + std::to_string(id) + "_" + std::to_string(cam) + "_" + std::to_string(i);
        ds.items.push_back(std::move(s));
      }
    }
  }
  return ds;
}

struct LoadOptions {
  std::size_t height = kImageHeight;
  std::size_t width = kImageWidth;
  std::vector<std::string>* warnings = nullptr;
};

/// Reads `<personID>_<camID>_<seq>.{ppm,png}` files. Files under train/,
/// query/ and gallery/ take that split; files directly under `root` are
/// training images. Unparseable names are skipped and counted.
inline Dataset load_directory(const std::string& root, const LoadOptions& opt = {}) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw ImageError("dataset directory " + root + " does not exist");
  static const std::regex kName(R"(^([^_]+)_(\d+)_([^.]+)\.(ppm|png)$)");
  struct Entry {
    std::string path, person;
    std::size_t camera;
    Split split;
  };
  std::vector<Entry> entries;
  Dataset ds;
  ds.provenance = "directory " + root;
  auto scan = [&](const fs::path& dir, Split split) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.is_regular_file()) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      std::smatch m;
      const std::string name = f.filename().string();
      if (!std::regex_match(name, m, kName)) {
        ++ds.skipped_files;
        if (opt.warnings) opt.warnings->push_back("skipped " + f.string() + ": unrecognised file name");
        continue;
      }
      entries.push_back({f.string(), m[1].str(), std::stoul(m[2].str()), split});
    }
  };
  scan(root, Split::train);
  for (Split s : {Split::train, Split::query, Split::gallery}) {
    const fs::path sub = fs::path(root) / split_name(s);
    if (fs::is_directory(sub)) scan(sub, s);
  }
  std::set<std::string> persons;
  for (const auto& e : entries) persons.insert(e.person);
  // Numeric identities sort numerically, others lexicographically after them.
  std::vector<std::string> order(persons.begin(), persons.end());
  auto numeric = [](const std::string& s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); });
  };
  std::stable_sort(order.begin(), order.end(), [&](const std::string& a, const std::string& b) {
    if (numeric(a) != numeric(b)) return numeric(a);
    if (numeric(a) && a.size() != b.size()) return a.size() < b.size();
    return a < b;
  });
  std::map<std::string, std::size_t> label;
  for (const auto& p : order) {
    label.emplace(p, ds.id_names.size());
    ds.id_names.push_back(p);
  }
  ds.num_ids = order.size();
  for (const auto& e : entries) {
    Sample s;
    try {
      s.image = resize_bilinear(read_image(e.path), opt.height, opt.width);
    } catch (const ImageError& err) {
      throw ImageError("cannot decode " + e.path + ": " + err.what());
    }
    s.id = label.at(e.person);
    s.camera = e.camera;
    s.split = e.split;
    s.source = e.path;
    ds.items.push_back(std::move(s));
  }
  return ds;
}

/// Writes every sample as `<split>/<id>_<cam>_<seq>.ppm`, seq counting views
/// of each (identity, camera) pair in dataset order.
inline void write_directory(const Dataset& ds, const std::string& root) {
  namespace fs = std::filesystem;
  for (Split s : {Split::train, Split::query, Split::gallery}) fs::create_directories(fs::path(root) / split_name(s));
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> seq;
  for (const auto& s : ds.items) {
    const std::size_t n = seq[{s.id, s.camera}]++;
    char name[64];
    std::snprintf(name, sizeof(name), "%04zu_%zu_%04zu.ppm", s.id, s.camera, n);
    write_ppm((fs::path(root) / split_name(s.split) / name).string(), s.image);
  }
}

}  // namespace hacnn
