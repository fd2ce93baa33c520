// Copyright 2026 The biasprobe Authors.
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

// Run configuration and the TOML subset it is written in.
//
// Supported syntax: `# comments`, `[section]` headers, and `key = value`
// where value is an integer, a float, true/false, a double-quoted string
// (quote, backslash, n and t escapes) or a flat array of integers. Unknown
// keys are rejected.

#include <cctype>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "biasprobe/binary_io.hpp"
#include "biasprobe/data.hpp"
#include "biasprobe/error.hpp"
#include "biasprobe/model.hpp"
#include "biasprobe/probe.hpp"
#include "biasprobe/stats.hpp"

namespace biasprobe {

namespace toml {

using Value = std::variant<std::int64_t, double, bool, std::string, std::vector<std::int64_t>>;
/// "section.key" (or "key" at top level) -> value.
using Table = std::map<std::string, Value>;

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

inline bool bare_key(std::string_view s) {
  if (s.empty()) return false;
  for (char c : s)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-')) return false;
  return true;
}

/// Drops a trailing comment that is not inside a string.
inline std::string_view strip_comment(std::string_view line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '\\' && quoted) {
      ++i;
    } else if (line[i] == '"') {
      quoted = !quoted;
    } else if (line[i] == '#' && !quoted) {
      return line.substr(0, i);
    }
  }
  return line;
}

[[noreturn]] inline void bad(std::size_t line_no, const std::string& what) {
  fail(ErrorKind::Config, "line " + std::to_string(line_no) + ": " + what);
}

inline std::int64_t parse_int(std::string_view s, std::size_t line_no) {
  std::string digits;
  for (char c : s)
    if (c != '_') digits += c;
  std::int64_t v = 0;
  const char* begin = digits.data() + (digits.starts_with('+') ? 1 : 0);
  const auto [ptr, ec] = std::from_chars(begin, digits.data() + digits.size(), v);
  if (ec != std::errc() || ptr != digits.data() + digits.size()) bad(line_no, "invalid integer '" + std::string(s) + "'");
  return v;
}

inline Value parse_value(std::string_view s, std::size_t line_no) {
  if (s.empty()) bad(line_no, "missing value");
  if (s == "true") return true;
  if (s == "false") return false;
  if (s.front() == '"') {
    std::string out;
    std::size_t i = 1;
    for (; i < s.size() && s[i] != '"'; ++i) {
      if (s[i] == '\\') {
        if (++i >= s.size()) break;
        switch (s[i]) {
          case '"': out += '"'; break;
          case '\\': out += '\\'; break;
          case 'n': out += '\n'; break;
          case 't': out += '\t'; break;
          default: bad(line_no, "unsupported escape");
        }
      } else {
        out += s[i];
      }
    }
    if (i >= s.size() || trim(s.substr(i + 1)).size() != 0) bad(line_no, "unterminated string");
    return out;
  }
  if (s.front() == '[') {
    if (s.back() != ']') bad(line_no, "unterminated array");
    std::vector<std::int64_t> items;
    std::string_view body = trim(s.substr(1, s.size() - 2));
    while (!body.empty()) {
      const auto comma = body.find(',');
      const auto item = trim(body.substr(0, comma));
      if (item.empty()) {
        if (comma == std::string_view::npos) break;
        bad(line_no, "empty array item");
      }
      items.push_back(parse_int(item, line_no));
      if (comma == std::string_view::npos) break;
      body = trim(body.substr(comma + 1));
    }
    return items;
  }
  const bool floating = s.find_first_of(".eE") != std::string_view::npos || s == "inf" || s == "nan";
  if (!floating) return parse_int(s, line_no);
  std::string text(s);
  std::erase(text, '_');
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (end != text.c_str() + text.size()) bad(line_no, "invalid number '" + std::string(s) + "'");
  return v;
}

}  // namespace detail

inline Table parse(std::string_view text) {
  Table table;
  std::string section;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    line = detail::trim(detail::strip_comment(line));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') detail::bad(line_no, "unterminated section header");
      const auto name = detail::trim(line.substr(1, line.size() - 2));
      if (!detail::bare_key(name)) detail::bad(line_no, "invalid section name");
      section = std::string(name);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) detail::bad(line_no, "expected key = value");
    const auto key = detail::trim(line.substr(0, eq));
    if (!detail::bare_key(key)) detail::bad(line_no, "invalid key '" + std::string(key) + "'");
    const std::string full = section.empty() ? std::string(key) : section + "." + std::string(key);
    if (table.count(full)) detail::bad(line_no, "duplicate key '" + full + "'");
    table[full] = detail::parse_value(detail::trim(line.substr(eq + 1)), line_no);
  }
  return table;
}

}  // namespace toml

struct ConceptConfig {
  std::size_t stride = 0;  ///< 0 selects max(1, s / 2)
  std::size_t patch_cap = 5000;
  std::size_t top_patches = 100;
  std::size_t gallery_top_k = 16;
  std::size_t nmf_max_iters = 200;
  double nmf_rel_tol = 1e-5;
};

struct MitigateConfig {
  std::size_t ablation_runs = 5;
  double merge_threshold = 0.95;
};

struct StatsConfig {
  double alpha = 0.05;
  std::size_t direction_samples = 500;
  DirectionMethod direction_method = DirectionMethod::CounterfactualRecolor;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::size_t r = 8;
  std::size_t s = 6;
  std::size_t n_seeds = 10;
  std::string output_dir = "run";
  DatasetSpec dataset;
  TrainConfig train;
  std::vector<std::size_t> hidden{100, 100};
  ProbeConfig probe;
  ConceptConfig concepts;
  MitigateConfig mitigate;
  StatsConfig stats;

  void validate() const {
    biasprobe::validate(dataset);
    probe.validate();
    if (r < 1) fail(ErrorKind::Config, "r must be at least 1");
    if (s < 1 || s > std::min(dataset.height, dataset.width)) fail(ErrorKind::Config, "patch size s out of range");
    if (n_seeds < 1) fail(ErrorKind::Config, "n_seeds must be at least 1");
    if (hidden.empty()) fail(ErrorKind::Config, "train.hidden needs at least one layer");
    for (auto w : hidden)
      if (w < 1) fail(ErrorKind::Config, "hidden widths must be positive");
    if (!(train.lr > 0.0) || train.epochs < 1 || train.batch_size < 1)
      fail(ErrorKind::Config, "train needs lr > 0, epochs >= 1 and batch_size >= 1");
    if (!(mitigate.merge_threshold > 0.0 && mitigate.merge_threshold <= 1.0))
      fail(ErrorKind::Config, "merge_threshold must lie in (0, 1]");
    if (!(stats.alpha > 0.0 && stats.alpha < 1.0)) fail(ErrorKind::Config, "alpha must lie in (0, 1)");
  }
};

namespace detail {

class ConfigReader {
 public:
  explicit ConfigReader(toml::Table table) : table_(std::move(table)) {}

  template <typename T>
  void read(const std::string& key, T& out) {
    const auto it = table_.find(key);
    if (it == table_.end()) return;
    const toml::Value& v = it->second;
    if constexpr (std::is_same_v<T, bool>) {
      if (!std::holds_alternative<bool>(v)) type_error(key, "a boolean");
      out = std::get<bool>(v);
    } else if constexpr (std::is_integral_v<T>) {
      if (!std::holds_alternative<std::int64_t>(v)) type_error(key, "an integer");
      const auto x = std::get<std::int64_t>(v);
      if (x < 0) fail(ErrorKind::Config, key + " must be non-negative");
      out = static_cast<T>(x);
    } else if constexpr (std::is_floating_point_v<T>) {
      if (std::holds_alternative<std::int64_t>(v)) {
        out = static_cast<T>(std::get<std::int64_t>(v));
      } else if (std::holds_alternative<double>(v)) {
        out = std::get<double>(v);
      } else {
        type_error(key, "a number");
      }
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!std::holds_alternative<std::string>(v)) type_error(key, "a string");
      out = std::get<std::string>(v);
    } else if constexpr (std::is_same_v<T, std::vector<std::size_t>>) {
      if (!std::holds_alternative<std::vector<std::int64_t>>(v)) type_error(key, "an integer array");
      out.clear();
      for (auto x : std::get<std::vector<std::int64_t>>(v)) {
        if (x < 0) fail(ErrorKind::Config, key + " entries must be non-negative");
        out.push_back(static_cast<std::size_t>(x));
      }
    }
    used_.push_back(key);
  }

  template <typename Parse, typename T>
  void read_enum(const std::string& key, T& out, Parse parse) {
    std::string text;
    const bool present = table_.count(key) != 0;
    read(key, text);
    if (present) out = parse(text);
  }

  void reject_unknown() const {
    for (const auto& [key, value] : table_)
      if (std::find(used_.begin(), used_.end(), key) == used_.end())
        fail(ErrorKind::Config, "unknown config key '" + key + "'");
  }

 private:
  [[noreturn]] static void type_error(const std::string& key, const char* expected) {
    fail(ErrorKind::Config, key + " must be " + expected);
  }

  toml::Table table_;
  std::vector<std::string> used_;
};

}  // namespace detail

/// Applies `text` on top of `base`.
inline RunConfig parse_run_config(std::string_view text, RunConfig base = {}) {
  detail::ConfigReader in(toml::parse(text));
  RunConfig& c = base;
  in.read("seed", c.seed);
  in.read("r", c.r);
  in.read("s", c.s);
  in.read("n_seeds", c.n_seeds);
  in.read("output_dir", c.output_dir);

  auto& d = c.dataset;
  in.read("dataset.n_train", d.n_train);
  in.read("dataset.n_audit", d.n_audit);
  in.read("dataset.n_test", d.n_test);
  in.read("dataset.classes", d.classes);
  in.read("dataset.height", d.height);
  in.read("dataset.width", d.width);
  in.read("dataset.rho", d.rho);
  in.read_enum("dataset.bias_mode", d.bias_mode, parse_bias_mode);
  in.read_enum("dataset.audit_mode", d.audit_mode, parse_bias_mode);
  in.read_enum("dataset.test_mode", d.test_mode, parse_bias_mode);
  in.read("dataset.idx_images", d.idx_images);
  in.read("dataset.idx_labels", d.idx_labels);
  in.read("dataset.point_jitter_px", d.style.point_jitter_px);
  in.read("dataset.shift_px", d.style.shift_px);
  in.read("dataset.intensity_jitter", d.style.intensity_jitter);
  in.read("dataset.rotation_deg", d.style.rotation_deg);
  in.read("dataset.scale_jitter", d.style.scale_jitter);
  in.read("dataset.min_thickness", d.style.min_thickness);
  in.read("dataset.max_thickness", d.style.max_thickness);

  in.read("train.epochs", c.train.epochs);
  in.read("train.batch_size", c.train.batch_size);
  in.read("train.lr", c.train.lr);
  in.read("train.lr_halving_period", c.train.lr_halving_period);
  in.read("train.hidden", c.hidden);

  in.read("probe.d", c.probe.d);
  in.read("probe.eps_active", c.probe.eps_active);
  in.read("probe.tau", c.probe.tau);

  in.read("concepts.stride", c.concepts.stride);
  in.read("concepts.patch_cap", c.concepts.patch_cap);
  in.read("concepts.top_patches", c.concepts.top_patches);
  in.read("concepts.gallery_top_k", c.concepts.gallery_top_k);
  in.read("concepts.nmf_max_iters", c.concepts.nmf_max_iters);
  in.read("concepts.nmf_rel_tol", c.concepts.nmf_rel_tol);

  in.read("mitigate.ablation_runs", c.mitigate.ablation_runs);
  in.read("mitigate.merge_threshold", c.mitigate.merge_threshold);

  in.read("stats.alpha", c.stats.alpha);
  in.read("stats.direction_samples", c.stats.direction_samples);
  in.read_enum("stats.direction_method", c.stats.direction_method, parse_direction_method);

  in.reject_unknown();
  c.validate();
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = {}) {
  return parse_run_config(io::read_text(path), std::move(base));
}

/// Canonical TOML of every field that affects results. output_dir is left
/// out so that runs in different directories share a hash.
inline std::string canonical_toml(const RunConfig& c) {
  auto num = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    std::string s = buf;
    if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
    return s;
  };
  auto str = [](const std::string& v) {
    std::string out = "\"";
    for (char ch : v) {
      if (ch == '"' || ch == '\\') out += '\\';
      out += ch;
    }
    return out + "\"";
  };
  auto mode = [](BiasMode m) { return "\"" + std::string(to_string(m)) + "\""; };
  std::string o;
  auto kv = [&](const char* k, const std::string& v) { o += std::string(k) + " = " + v + "\n"; };
  kv("seed", std::to_string(c.seed));
  kv("r", std::to_string(c.r));
  kv("s", std::to_string(c.s));
  kv("n_seeds", std::to_string(c.n_seeds));
  const auto& d = c.dataset;
  o += "\n[dataset]\n";
  kv("n_train", std::to_string(d.n_train));
  kv("n_audit", std::to_string(d.n_audit));
  kv("n_test", std::to_string(d.n_test));
  kv("classes", std::to_string(d.classes));
  kv("height", std::to_string(d.height));
  kv("width", std::to_string(d.width));
  kv("rho", num(d.rho));
  kv("bias_mode", mode(d.bias_mode));
  kv("audit_mode", mode(d.audit_mode));
  kv("test_mode", mode(d.test_mode));
  kv("idx_images", str(d.idx_images));
  kv("idx_labels", str(d.idx_labels));
  kv("point_jitter_px", num(d.style.point_jitter_px));
  kv("shift_px", num(d.style.shift_px));
  kv("intensity_jitter", num(d.style.intensity_jitter));
  kv("rotation_deg", num(d.style.rotation_deg));
  kv("scale_jitter", num(d.style.scale_jitter));
  kv("min_thickness", num(d.style.min_thickness));
  kv("max_thickness", num(d.style.max_thickness));
  o += "\n[train]\n";
  kv("epochs", std::to_string(c.train.epochs));
  kv("batch_size", std::to_string(c.train.batch_size));
  kv("lr", num(c.train.lr));
  kv("lr_halving_period", std::to_string(c.train.lr_halving_period));
  std::string hidden = "[";
  for (std::size_t i = 0; i < c.hidden.size(); ++i) hidden += (i ? ", " : "") + std::to_string(c.hidden[i]);
  kv("hidden", hidden + "]");
  o += "\n[probe]\n";
  kv("d", num(c.probe.d));
  kv("eps_active", num(c.probe.eps_active));
  kv("tau", num(c.probe.tau));
  o += "\n[concepts]\n";
  kv("stride", std::to_string(c.concepts.stride));
  kv("patch_cap", std::to_string(c.concepts.patch_cap));
  kv("top_patches", std::to_string(c.concepts.top_patches));
  kv("gallery_top_k", std::to_string(c.concepts.gallery_top_k));
  kv("nmf_max_iters", std::to_string(c.concepts.nmf_max_iters));
  kv("nmf_rel_tol", num(c.concepts.nmf_rel_tol));
  o += "\n[mitigate]\n";
  kv("ablation_runs", std::to_string(c.mitigate.ablation_runs));
  kv("merge_threshold", num(c.mitigate.merge_threshold));
  o += "\n[stats]\n";
  kv("alpha", num(c.stats.alpha));
  kv("direction_samples", std::to_string(c.stats.direction_samples));
  kv("direction_method", str(to_string(c.stats.direction_method)));
  return o;
}

/// 64-bit FNV-1a of the canonical TOML, as 16 hex digits.
inline std::string config_hash(const RunConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : canonical_toml(c)) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace biasprobe
