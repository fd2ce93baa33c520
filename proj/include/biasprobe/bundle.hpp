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

// Activation bundles: a portable record of representations, logits, labels
// and predictions produced by any frozen model.
//
// Layout (little-endian):
//   "ABF1" | u32 version = 1 | u32 n | u32 p | u32 C | u32 flags
//   | f32 activations n*p row-major | f32 logits n*C row-major
//   | u32 labels[n] | u32 predictions[n] | [u32 bias_attributes[n] if flags & 1]
//   | u32 len + layer_name | u32 len + model_id
//   | optional "HEAD" u32 C | u32 p | f32 weight C*p row-major | f32 bias[C]
// The HEAD section carries the affine classifier head the probe needs for
// representation gradients. Nothing may follow it.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "biasprobe/binary_io.hpp"
#include "biasprobe/data.hpp"
#include "biasprobe/error.hpp"
#include "biasprobe/linalg.hpp"
#include "biasprobe/model.hpp"

namespace biasprobe {

inline constexpr std::uint32_t kBundleVersion = 1;
inline constexpr std::uint32_t kBundleHasBiasAttributes = 1u;

struct ActivationBundle {
  FloatMatrix activations;  ///< n x p, non-negative
  FloatMatrix logits;       ///< n x C
  std::vector<ClassId> labels;
  std::vector<ClassId> predictions;
  std::optional<std::vector<std::uint32_t>> bias_attributes;
  std::string layer_name;
  std::string model_id;
  std::optional<AffineHead> head;  ///< stored as f32

  std::size_t size() const { return labels.size(); }
  std::size_t width() const { return static_cast<std::size_t>(activations.cols()); }
  std::size_t classes() const { return static_cast<std::size_t>(logits.cols()); }

  friend bool operator==(const ActivationBundle& a, const ActivationBundle& b) {
    auto same = [](const FloatMatrix& x, const FloatMatrix& y) {
      return x.rows() == y.rows() && x.cols() == y.cols() && x == y;
    };
    return same(a.activations, b.activations) && same(a.logits, b.logits) && a.labels == b.labels &&
           a.predictions == b.predictions && a.bias_attributes == b.bias_attributes &&
           a.layer_name == b.layer_name && a.model_id == b.model_id && a.head == b.head;
  }
};

/// Throws unless shapes agree, activations are non-negative and finite, and
/// every prediction is the (lowest-index) argmax of its logits row.
inline void check_bundle(const ActivationBundle& b, const std::string& source = "bundle") {
  const auto n = static_cast<Eigen::Index>(b.labels.size());
  if (b.activations.rows() != n || b.logits.rows() != n || static_cast<Eigen::Index>(b.predictions.size()) != n ||
      (b.bias_attributes && static_cast<Eigen::Index>(b.bias_attributes->size()) != n))
    fail(ErrorKind::DimensionMismatch, source + ": row counts disagree");
  if (!b.activations.allFinite() || !b.logits.allFinite())
    fail(ErrorKind::Integrity, source + ": non-finite activations or logits");
  if ((b.activations.array() < 0.0f).any()) fail(ErrorKind::Integrity, source + ": negative activation");
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto expected = static_cast<ClassId>(argmax(b.logits.row(i)));
    if (b.predictions[static_cast<std::size_t>(i)] != expected)
      fail(ErrorKind::Integrity, source + ": prediction of row " + std::to_string(i) + " is not the logits argmax");
    if (b.labels[static_cast<std::size_t>(i)] >= b.classes())
      fail(ErrorKind::Integrity, source + ": label of row " + std::to_string(i) + " out of range");
  }
  if (b.head && (b.head->classes() != b.logits.cols() || b.head->width() != b.activations.cols()))
    fail(ErrorKind::Integrity, source + ": head shape does not match the bundle");
}

inline std::vector<std::uint8_t> encode_bundle(const ActivationBundle& b) {
  check_bundle(b);
  io::ByteWriter w;
  w.magic("ABF1");
  w.u32(kBundleVersion);
  w.u32(static_cast<std::uint32_t>(b.size()));
  w.u32(static_cast<std::uint32_t>(b.width()));
  w.u32(static_cast<std::uint32_t>(b.classes()));
  w.u32(b.bias_attributes ? kBundleHasBiasAttributes : 0u);
  for (Eigen::Index i = 0; i < b.activations.rows(); ++i)
    for (Eigen::Index j = 0; j < b.activations.cols(); ++j) w.f32(b.activations(i, j));
  for (Eigen::Index i = 0; i < b.logits.rows(); ++i)
    for (Eigen::Index j = 0; j < b.logits.cols(); ++j) w.f32(b.logits(i, j));
  for (auto v : b.labels) w.u32(v);
  for (auto v : b.predictions) w.u32(v);
  if (b.bias_attributes)
    for (auto v : *b.bias_attributes) w.u32(v);
  w.text(b.layer_name);
  w.text(b.model_id);
  if (b.head) {
    w.magic("HEAD");
    w.u32(static_cast<std::uint32_t>(b.head->classes()));
    w.u32(static_cast<std::uint32_t>(b.head->width()));
    for (Eigen::Index i = 0; i < b.head->weight.rows(); ++i)
      for (Eigen::Index j = 0; j < b.head->weight.cols(); ++j) w.f32(static_cast<float>(b.head->weight(i, j)));
    for (Eigen::Index i = 0; i < b.head->bias.size(); ++i) w.f32(static_cast<float>(b.head->bias(i)));
  }
  return w.bytes();
}

inline ActivationBundle decode_bundle(std::vector<std::uint8_t> bytes, const std::string& source) {
  io::ByteReader r(std::move(bytes), source);
  r.expect_magic("ABF1");
  const std::uint32_t version = r.u32();
  if (version != kBundleVersion)
    fail(ErrorKind::SchemaMismatch, source + ": unsupported bundle version " + std::to_string(version));
  const std::uint32_t n = r.u32();
  const std::uint32_t p = r.u32();
  const std::uint32_t classes = r.u32();
  const std::uint32_t flags = r.u32();
  if (flags & ~kBundleHasBiasAttributes) fail(ErrorKind::Format, source + ": unknown flag bits");
  r.need((static_cast<std::size_t>(n) * (p + classes) + 2 * static_cast<std::size_t>(n)) * 4);

  ActivationBundle b;
  b.activations.resize(n, p);
  for (Eigen::Index i = 0; i < b.activations.rows(); ++i)
    for (Eigen::Index j = 0; j < b.activations.cols(); ++j) b.activations(i, j) = r.f32();
  b.logits.resize(n, classes);
  for (Eigen::Index i = 0; i < b.logits.rows(); ++i)
    for (Eigen::Index j = 0; j < b.logits.cols(); ++j) b.logits(i, j) = r.f32();
  b.labels.resize(n);
  for (auto& v : b.labels) v = r.u32();
  b.predictions.resize(n);
  for (auto& v : b.predictions) v = r.u32();
  if (flags & kBundleHasBiasAttributes) {
    r.need(static_cast<std::size_t>(n) * 4);
    b.bias_attributes.emplace(n);
    for (auto& v : *b.bias_attributes) v = r.u32();
  }
  b.layer_name = r.text();
  b.model_id = r.text();
  if (!r.at_end()) {
    r.expect_magic("HEAD");
    const std::uint32_t hc = r.u32();
    const std::uint32_t hp = r.u32();
    if (hc != classes || hp != p) fail(ErrorKind::Format, source + ": HEAD shape does not match the bundle");
    r.need((static_cast<std::size_t>(hc) * hp + hc) * 4);
    AffineHead head;
    head.weight.resize(hc, hp);
    for (Eigen::Index i = 0; i < head.weight.rows(); ++i)
      for (Eigen::Index j = 0; j < head.weight.cols(); ++j) head.weight(i, j) = r.f32();
    head.bias.resize(hc);
    for (Eigen::Index i = 0; i < head.bias.size(); ++i) head.bias(i) = r.f32();
    b.head = std::move(head);
    if (!r.at_end()) fail(ErrorKind::Format, source + ": trailing bytes after HEAD section");
  }
  check_bundle(b, source);
  return b;
}

inline void write_bundle(const ActivationBundle& bundle, const std::filesystem::path& path) {
  io::write_file(path, encode_bundle(bundle));
}

inline ActivationBundle read_bundle(const std::filesystem::path& path) {
  return decode_bundle(io::read_file(path), path.string());
}

/// Bundle of `model` on `samples`. Logits are computed in double from the
/// representation and then stored as f32, and predictions are taken from the
/// stored f32 logits so the argmax invariant holds bit-exactly.
inline ActivationBundle make_bundle(const FrozenClassifier& model, const std::vector<Sample>& samples,
                                    std::string layer_name, std::string model_id, bool with_head = true) {
  ActivationBundle b;
  const auto n = static_cast<Eigen::Index>(samples.size());
  b.activations.resize(n, static_cast<Eigen::Index>(model.width()));
  b.logits.resize(n, static_cast<Eigen::Index>(model.classes()));
  bool all_colored = true;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Sample& s = samples[static_cast<std::size_t>(i)];
    const Vector a = model.features(s.image);
    b.activations.row(i) = a.cast<float>().transpose();
    b.logits.row(i) = model.head_logits(a).cast<float>().transpose();
    b.labels.push_back(s.label);
    b.predictions.push_back(static_cast<ClassId>(argmax(b.logits.row(i))));
    all_colored = all_colored && s.bias_color.has_value();
  }
  if (all_colored && n > 0) {
    b.bias_attributes.emplace();
    for (const auto& s : samples) b.bias_attributes->push_back(*s.bias_color);
  }
  b.layer_name = std::move(layer_name);
  b.model_id = std::move(model_id);
  if (with_head) {
    AffineHead head = model.head();
    head.weight = head.weight.cast<float>().cast<double>();
    head.bias = head.bias.cast<float>().cast<double>();
    b.head = std::move(head);
  }
  return b;
}

}  // namespace biasprobe
