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

#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

// Flat key=value text: one pair per line, '#' starts a comment, surrounding
// whitespace ignored. Used for run configuration files and for the model
// configuration block embedded in checkpoints.
namespace hacnn::kv {

using Map = std::map<std::string, std::string>;

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline Map parse(const std::string& text) {
  Map out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ParseError("line " + std::to_string(lineno) + ": expected key=value, got '" + line +
                       "'");
    }
    auto key = trim(line.substr(0, eq));
    if (key.empty()) throw ParseError("line " + std::to_string(lineno) + ": empty key");
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

inline Map load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config file " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

inline std::string serialize(const Map& m) {
  std::string out;
  for (const auto& [k, v] : m) out += k + "=" + v + "\n";
  return out;
}

template <typename V>
V parse_value(const std::string& key, const std::string& text) {
  if constexpr (std::is_same_v<V, std::string>) {
    return text;
  } else if constexpr (std::is_same_v<V, bool>) {
    if (text == "1" || text == "true" || text == "yes" || text == "on") return true;
    if (text == "0" || text == "false" || text == "no" || text == "off") return false;
    throw ParseError(key + ": expected a boolean, got '" + text + "'");
  } else if constexpr (std::is_integral_v<V>) {
    V v{};
    const auto* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc() || ptr != end || text.empty()) {
      throw ParseError(key + ": expected an integer, got '" + text + "'");
    }
    return v;
  } else if constexpr (std::is_floating_point_v<V>) {
    try {
      std::size_t used = 0;
      const double v = std::stod(text, &used);
      if (used != text.size()) throw std::invalid_argument(text);
      return static_cast<V>(v);
    } catch (const std::exception&) {
      throw ParseError(key + ": expected a number, got '" + text + "'");
    }
  } else {
    V out;
    std::istringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
      out.push_back(parse_value<typename V::value_type>(key, trim(item)));
    }
    if (out.empty()) throw ParseError(key + ": empty list");
    return out;
  }
}

/// Assigns m[key] to `field` when present.
template <typename V>
void read(const Map& m, const std::string& key, V& field) {
  if (auto it = m.find(key); it != m.end()) field = parse_value<V>(key, it->second);
}

template <typename V>
std::string format(const V& v) {
  if constexpr (std::is_same_v<V, std::string>) {
    return v;
  } else if constexpr (std::is_same_v<V, bool>) {
    return v ? "true" : "false";
  } else if constexpr (std::is_integral_v<V>) {
    return std::to_string(v);
  } else if constexpr (std::is_floating_point_v<V>) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  } else {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) out += ',';
      out += format(v[i]);
    }
    return out;
  }
}

}  // namespace hacnn::kv
