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

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "hacnn/config.hpp"
#include "hacnn/network.hpp"
#include "hacnn/optim.hpp"

// Binary layout, all integers little-endian:
//   "HACNN\0\0\0"            8-byte tag
//   u32 version
//   u32 n, n bytes           key=value header (model config, dtype, adam step)
//   u32 record count
//   per record: u32 name length, name, u32 rank, rank x u64 extents,
//               numel x scalar values
// Records are "param/<name>", "buffer/<name>", "adam.m/<name>", "adam.v/<name>".
namespace hacnn {

inline constexpr char kCheckpointTag[8] = {'H', 'A', 'C', 'N', 'N', 0, 0, 0};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { io, bad_tag, unknown_version, corrupt_header, truncated, mismatch };

  CheckpointError(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

template <typename T>
struct CheckpointRecord {
  std::string name;
  Shape shape;
  std::vector<T> values;
};

template <typename T>
struct CheckpointContents {
  kv::Map header;
  std::vector<CheckpointRecord<T>> records;
};

template <typename T>
constexpr const char* dtype_name() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? "f32" : "f64";
}

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint codec assumes little-endian");

template <typename U>
void put(std::string& out, U v) {
  char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  out.append(buf, sizeof(U));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename U>
  U get(const char* what) {
    need(sizeof(U), what);
    U v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }

  std::string take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw CheckpointError(CheckpointError::Kind::truncated,
                            std::string("checkpoint truncated while reading ") + what);
    }
  }

  bool done() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError(CheckpointError::Kind::io, "cannot open checkpoint " + path);
  return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

}  // namespace detail

template <typename T>
std::string encode_checkpoint(const CheckpointContents<T>& c) {
  std::string out(kCheckpointTag, sizeof(kCheckpointTag));
  detail::put<std::uint32_t>(out, kCheckpointVersion);
  const std::string header = kv::serialize(c.header);
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(header.size()));
  out += header;
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(c.records.size()));
  for (const auto& r : c.records) {
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(r.name.size()));
    out += r.name;
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(r.shape.size()));
    for (auto e : r.shape) detail::put<std::uint64_t>(out, e);
    out.append(reinterpret_cast<const char*>(r.values.data()), r.values.size() * sizeof(T));
  }
  return out;
}

namespace detail {

inline kv::Map decode_header(Reader& rd, const std::string& bytes) {
  using Kind = CheckpointError::Kind;
  if (bytes.size() < sizeof(kCheckpointTag) ||
      std::memcmp(bytes.data(), kCheckpointTag, sizeof(kCheckpointTag)) != 0) {
    throw CheckpointError(Kind::bad_tag, "not a hacnn checkpoint (bad format tag)");
  }
  rd.take(sizeof(kCheckpointTag), "tag");
  const auto version = rd.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError(Kind::unknown_version,
                          "unsupported checkpoint version " + std::to_string(version) +
                              " (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  const auto header_len = rd.get<std::uint32_t>("header length");
  kv::Map header;
  try {
    header = kv::parse(rd.take(header_len, "header"));
  } catch (const kv::ParseError& e) {
    throw CheckpointError(Kind::corrupt_header, std::string("corrupt checkpoint header: ") + e.what());
  }
  if (!header.count("dtype")) throw CheckpointError(Kind::corrupt_header, "checkpoint header lacks dtype");
  return header;
}

}  // namespace detail

/// Header block only; used to pick the value type before a full load.
inline kv::Map read_checkpoint_header(const std::string& path) {
  const std::string bytes = detail::read_file(path);
  detail::Reader rd(bytes);
  return detail::decode_header(rd, bytes);
}

template <typename T>
CheckpointContents<T> decode_checkpoint(const std::string& bytes) {
  using Kind = CheckpointError::Kind;
  detail::Reader rd(bytes);
  CheckpointContents<T> c;
  c.header = detail::decode_header(rd, bytes);
  auto dtype = c.header.find("dtype");
  if (dtype->second != dtype_name<T>()) {
    throw CheckpointError(Kind::mismatch, "checkpoint holds " + dtype->second + " values, expected " +
                                              dtype_name<T>());
  }
  const auto count = rd.get<std::uint32_t>("record count");
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointRecord<T> r;
    const auto name_len = rd.get<std::uint32_t>("record name length");
    r.name = rd.take(name_len, "record name");
    const auto rank = rd.get<std::uint32_t>("record rank");
    if (rank > 8) throw CheckpointError(Kind::corrupt_header, "record " + r.name + " has rank " + std::to_string(rank));
    std::uint64_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const auto e = rd.get<std::uint64_t>("record extent");
      r.shape.push_back(static_cast<std::size_t>(e));
      numel *= e;
    }
    if (numel > rd.remaining() / sizeof(T)) {
      throw CheckpointError(Kind::truncated, "checkpoint truncated inside record " + r.name);
    }
    r.values.resize(static_cast<std::size_t>(numel));
    std::memcpy(r.values.data(), rd.take(r.values.size() * sizeof(T), "record values").data(),
                r.values.size() * sizeof(T));
    c.records.push_back(std::move(r));
  }
  if (!rd.done()) throw CheckpointError(Kind::corrupt_header, "trailing bytes after last record");
  return c;
}

template <typename T>
CheckpointContents<T> snapshot(const Model<T>& model, const AdamState<T>* adam) {
  CheckpointContents<T> c;
  c.header = model.config().to_kv();
  c.header["dtype"] = dtype_name<T>();
  auto add = [&](const std::string& prefix, const std::string& name, const Tensor<T>& t) {
    c.records.push_back({prefix + name, t.shape(), std::vector<T>(t.values().begin(), t.values().end())});
  };
  for (const auto& p : model.parameters()) add("param/", p.name, p.tensor);
  for (const auto& b : model.buffers()) add("buffer/", b.name, b.tensor);
  if (adam && adam->matches(model.parameters())) {
    c.header["adam_step"] = kv::format(adam->step);
    const auto& params = model.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
      c.records.push_back({"adam.m/" + params[i].name, params[i].tensor.shape(), adam->m[i]});
      c.records.push_back({"adam.v/" + params[i].name, params[i].tensor.shape(), adam->v[i]});
    }
  }
  return c;
}

/// Writes to a sibling temporary file and renames it into place, so an
/// interrupted save never clobbers the previous checkpoint.
template <typename T>
void save_checkpoint(const std::string& path, const Model<T>& model,
                     const AdamState<T>* adam = nullptr) {
  const std::string bytes = encode_checkpoint(snapshot(model, adam));
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError(CheckpointError::Kind::io, "cannot write checkpoint " + tmp);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw CheckpointError(CheckpointError::Kind::io, "short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

template <typename T>
CheckpointContents<T> read_checkpoint(const std::string& path) {
  return decode_checkpoint<T>(detail::read_file(path));
}

/// Model configuration stored in a checkpoint header.
inline ModelConfig checkpoint_config(const kv::Map& header) {
  try {
    auto cfg = ModelConfig::from_kv(header);
    cfg.validate();
    return cfg;
  } catch (const std::exception& e) {
    throw CheckpointError(CheckpointError::Kind::corrupt_header,
                          std::string("checkpoint model config: ") + e.what());
  }
}

/// Copies checkpoint contents into `model` (and `adam` when given). Every
/// record is validated first; on any error the model is left untouched.
template <typename T>
void restore(const CheckpointContents<T>& c, Model<T>& model, AdamState<T>* adam = nullptr) {
  using Kind = CheckpointError::Kind;
  if (checkpoint_config(c.header) != model.config()) {
    throw CheckpointError(Kind::mismatch, "checkpoint model config differs from the target model");
  }
  std::map<std::string, const CheckpointRecord<T>*> by_name;
  for (const auto& r : c.records) {
    if (!by_name.emplace(r.name, &r).second) {
      throw CheckpointError(Kind::corrupt_header, "duplicate record " + r.name);
    }
  }
  auto find = [&](const std::string& key, const Tensor<T>& t) {
    auto it = by_name.find(key);
    if (it == by_name.end()) throw CheckpointError(Kind::mismatch, "checkpoint lacks " + key);
    if (it->second->shape != t.shape()) {
      throw CheckpointError(Kind::mismatch, key + " has shape " + shape_str(it->second->shape) +
                                                ", model expects " + shape_str(t.shape()));
    }
    return it->second;
  };
  const auto& params = model.parameters();
  const auto& buffers = model.buffers();
  std::vector<std::pair<Tensor<T>, const CheckpointRecord<T>*>> plan;
  for (const auto& p : params) plan.emplace_back(p.tensor, find("param/" + p.name, p.tensor));
  for (const auto& b : buffers) plan.emplace_back(b.tensor, find("buffer/" + b.name, b.tensor));
  std::vector<const CheckpointRecord<T>*> ms, vs;
  const bool has_adam = c.header.count("adam_step") > 0;
  if (adam && has_adam) {
    for (const auto& p : params) {
      ms.push_back(find("adam.m/" + p.name, p.tensor));
      vs.push_back(find("adam.v/" + p.name, p.tensor));
    }
  }
  std::uint64_t step = 0;
  if (has_adam) {
    try {
      step = kv::parse_value<std::uint64_t>("adam_step", c.header.at("adam_step"));
    } catch (const kv::ParseError& e) {
      throw CheckpointError(Kind::corrupt_header, e.what());
    }
  }

  for (auto& [tensor, rec] : plan) {
    auto dst = tensor.mutable_values();
    std::copy(rec->values.begin(), rec->values.end(), dst.begin());
  }
  if (adam) {
    adam->reset(params);
    if (has_adam) {
      adam->step = step;
      for (std::size_t i = 0; i < params.size(); ++i) {
        adam->m[i] = ms[i]->values;
        adam->v[i] = vs[i]->values;
      }
    }
  }
}

template <typename T>
void load_into(const std::string& path, Model<T>& model, AdamState<T>* adam = nullptr) {
  restore(read_checkpoint<T>(path), model, adam);
}

template <typename T>
Model<T> load_model(const std::string& path, AdamState<T>* adam = nullptr) {
  const auto c = read_checkpoint<T>(path);
  Model<T> model(checkpoint_config(c.header));
  restore(c, model, adam);
  return model;
}

}  // namespace hacnn
