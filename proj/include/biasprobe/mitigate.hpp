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

// Inference-time suppression of merged concepts, the random-ablation control
// and group-wise evaluation.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "biasprobe/concepts.hpp"
#include "biasprobe/data.hpp"
#include "biasprobe/error.hpp"
#include "biasprobe/linalg.hpp"
#include "biasprobe/model.hpp"
#include "biasprobe/nnls.hpp"
#include "biasprobe/report.hpp"
#include "biasprobe/rng.hpp"

namespace biasprobe {

/// Residual norms at or below this skip the rescale.
inline constexpr double kSuppressGuard = 1e-12;

/// a_sup = a - sum_{k in B} u_k w_k, rescaled to ||a|| unless ||a_sup|| is
/// at most kSuppressGuard. The result is not clamped and may be negative.
inline Vector suppress_with_coefficients(const Vector& a, const Matrix& W, const Vector& u,
                                         std::span<const std::uint32_t> bias_set) {
  if (bias_set.empty()) return a;
  Vector sup = a;
  for (auto k : bias_set) {
    if (static_cast<Eigen::Index>(k) >= W.cols())
      fail(ErrorKind::DimensionMismatch, "suppressed concept " + std::to_string(k) + " outside the bank");
    sup -= u(static_cast<Eigen::Index>(k)) * W.col(static_cast<Eigen::Index>(k));
  }
  const double n_sup = sup.norm();
  if (n_sup > kSuppressGuard) sup *= a.norm() / n_sup;
  return sup;
}

inline Vector suppress(const Vector& a, const MergedBank& merged, std::span<const std::uint32_t> bias_set) {
  if (bias_set.empty()) return a;
  return suppress_with_coefficients(a, merged.W, project(merged.W, a), bias_set);
}

inline ClassId classify_suppressed(const FrozenClassifier& model, const MergedBank& merged,
                                   std::span<const std::uint32_t> bias_set, const Image& image) {
  const Vector a = model.features(image);
  return static_cast<ClassId>(argmax(model.head_logits(suppress(a, merged, bias_set))));
}

/// Uniform draw of `count` merged concepts without replacement, ascending.
inline std::vector<std::uint32_t> random_ablation_set(std::size_t m, std::size_t count, std::uint64_t seed) {
  if (count > m)
    fail(ErrorKind::CountTooLarge, "cannot ablate " + std::to_string(count) + " of " + std::to_string(m) + " concepts");
  Rng rng(seed);
  std::vector<std::uint32_t> out;
  for (auto k : rng.sample_without_replacement(m, count)) out.push_back(static_cast<std::uint32_t>(k));
  return out;
}

struct GroupKey {
  ClassId label = 0;
  bool bias_aligned = false;

  friend auto operator<=>(const GroupKey&, const GroupKey&) = default;
};

struct GroupStats {
  GroupKey key;
  std::size_t n = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;
};

struct EvalReport {
  double accuracy = 0.0;
  double worst_class_acc = 0.0;
  double worst_group_acc = 0.0;
  std::vector<GroupStats> per_group;  ///< non-empty groups, ordered by key
};

/// Metrics of `predictions[i]` against `test[i]`. A sample is bias-aligned
/// when its color is the biased assignment of its label.
inline EvalReport evaluate_predictions(std::span<const ClassId> predictions, const std::vector<Sample>& test) {
  if (test.empty()) fail(ErrorKind::EmptyTestSet, "test set is empty");
  if (predictions.size() != test.size()) fail(ErrorKind::DimensionMismatch, "predictions and test set differ in length");
  std::map<GroupKey, GroupStats> groups;
  std::map<ClassId, std::pair<std::size_t, std::size_t>> classes;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const Sample& s = test[i];
    if (!s.bias_color) fail(ErrorKind::MissingBiasLabels, "test sample " + std::to_string(s.id) + " has no bias color");
    const bool ok = predictions[i] == s.label;
    const GroupKey key{s.label, *s.bias_color == s.label};
    auto& g = groups[key];
    g.key = key;
    ++g.n;
    g.correct += ok;
    auto& c = classes[s.label];
    ++c.first;
    c.second += ok;
    correct += ok;
  }
  EvalReport r;
  r.accuracy = static_cast<double>(correct) / static_cast<double>(test.size());
  r.worst_class_acc = std::numeric_limits<double>::infinity();
  for (const auto& [label, c] : classes)
    r.worst_class_acc = std::min(r.worst_class_acc, static_cast<double>(c.second) / static_cast<double>(c.first));
  r.worst_group_acc = std::numeric_limits<double>::infinity();
  for (auto& [key, g] : groups) {
    g.accuracy = static_cast<double>(g.correct) / static_cast<double>(g.n);
    r.worst_group_acc = std::min(r.worst_group_acc, g.accuracy);
    r.per_group.push_back(g);
  }
  return r;
}

inline EvalReport evaluate(const std::function<ClassId(const Sample&)>& classify, const std::vector<Sample>& test) {
  std::vector<ClassId> predictions;
  predictions.reserve(test.size());
  for (const auto& s : test) predictions.push_back(classify(s));
  return evaluate_predictions(predictions, test);
}

inline nlohmann::ordered_json eval_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["accuracy"] = r.accuracy;
  j["worst_class_acc"] = r.worst_class_acc;
  j["worst_group_acc"] = r.worst_group_acc;
  auto& groups = j["per_group"] = nlohmann::ordered_json::array();
  for (const auto& g : r.per_group)
    groups.push_back({{"label", g.key.label}, {"bias_aligned", g.key.bias_aligned}, {"n", g.n}, {"acc", g.accuracy}});
  return j;
}

inline std::string eval_csv(const EvalReport& r) {
  std::string out = "label,bias_aligned,n,acc\n";
  for (const auto& g : r.per_group)
    out += std::to_string(g.key.label) + ',' + (g.key.bias_aligned ? "1" : "0") + ',' + std::to_string(g.n) + ',' +
           format_number(g.accuracy) + '\n';
  return out;
}

}  // namespace biasprobe
