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

// Gradient-probe bias scoring. For class y, every false negative and false
// positive is moved one step down the loss gradient in representation space;
// a concept of the class bank that is switched on for false negatives and off
// for false positives scores high.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
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
#include "biasprobe/parallel.hpp"
#include "biasprobe/report.hpp"

namespace biasprobe {

struct ProbeConfig {
  double d = 2e4;
  double eps_active = 1e-8;
  double tau = 0.55;

  void validate() const {
    if (!(d > 0.0) || !std::isfinite(d)) fail(ErrorKind::Config, "probe step d must be positive");
    if (!(eps_active >= 0.0)) fail(ErrorKind::Config, "eps_active must be non-negative");
    if (!(tau >= 0.0 && tau <= 1.0)) fail(ErrorKind::Config, "tau must lie in [0, 1]");
  }
};

/// Sample indices (positions in the audit set) of the errors for one class.
struct ErrorSets {
  ClassId class_id = 0;
  std::vector<std::uint32_t> fn_samples;  ///< label y, predicted otherwise
  std::vector<std::uint32_t> fp_samples;  ///< predicted y, labelled otherwise
};

inline ErrorSets collect_error_sets(std::span<const ClassId> labels, std::span<const ClassId> predictions, ClassId y) {
  if (labels.size() != predictions.size())
    fail(ErrorKind::DimensionMismatch, "labels and predictions differ in length");
  ErrorSets e;
  e.class_id = y;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == y && predictions[i] != y) e.fn_samples.push_back(static_cast<std::uint32_t>(i));
    if (predictions[i] == y && labels[i] != y) e.fp_samples.push_back(static_cast<std::uint32_t>(i));
  }
  return e;
}

inline ErrorSets collect_error_sets(const FrozenClassifier& model, const std::vector<Sample>& audit, ClassId y) {
  std::vector<ClassId> labels;
  for (const auto& s : audit) labels.push_back(s.label);
  const auto predictions = predict_all(model, audit);
  return collect_error_sets(labels, predictions, y);
}

/// a' = max(0, a - d * grad_a L(h(a), label)).
inline Vector probe_step(const AffineHead& head, const Vector& a, ClassId label, double d) {
  return (a - d * head_gradient(head, a, label)).cwiseMax(0.0);
}

inline std::vector<bool> indicator(const Vector& u, double eps_active) {
  std::vector<bool> out(static_cast<std::size_t>(u.size()));
  for (Eigen::Index k = 0; k < u.size(); ++k) out[static_cast<std::size_t>(k)] = u(k) > eps_active;
  return out;
}

/// Audit-set inputs the probe needs: the representation of every sample
/// (row i = sample i), true labels, model predictions and the affine head.
struct AuditView {
  const Matrix& activations;
  std::span<const ClassId> labels;
  std::span<const ClassId> predictions;
  const AffineHead& head;
};

struct Estimates {
  std::optional<Vector> e_fn;  ///< absent when FN_y is empty
  std::optional<Vector> e_fp;  ///< absent when FP_y is empty
  std::size_t n_fn = 0;
  std::size_t n_fp = 0;
};

/// Indicator flips on the class bank W_y. Each error sample is probed with
/// its own true label; for false negatives that label is y.
inline Estimates estimators(const AuditView& view, const ConceptBank& bank, const ErrorSets& errs,
                            const ProbeConfig& cfg) {
  if (bank.class_id != errs.class_id) fail(ErrorKind::DimensionMismatch, "bank and error sets are for different classes");
  const GramNnls projector(bank.W);
  const Eigen::Index r = bank.rank();

  // Per-sample flip vectors, reduced afterwards in sample order.
  auto flips = [&](const std::vector<std::uint32_t>& ids, bool added) {
    std::vector<Vector> per(ids.size());
    parallel_for(ids.size(), [&](std::size_t j) {
      const std::uint32_t i = ids[j];
      const Vector a = view.activations.row(i).transpose();
      const Vector a2 = probe_step(view.head, a, view.labels[i], cfg.d);
      const auto before = indicator(projector.solve(a), cfg.eps_active);
      const auto after = indicator(projector.solve(a2), cfg.eps_active);
      Vector f(r);
      for (Eigen::Index k = 0; k < r; ++k) {
        const double diff = static_cast<double>(after[static_cast<std::size_t>(k)]) -
                            static_cast<double>(before[static_cast<std::size_t>(k)]);
        f(k) = added ? diff : -diff;
      }
      per[j] = std::move(f);
    });
    Vector sum = Vector::Zero(r);
    for (const auto& f : per) sum += f;
    return Vector(sum / static_cast<double>(ids.size()));
  };

  Estimates e;
  e.n_fn = errs.fn_samples.size();
  e.n_fp = errs.fp_samples.size();
  if (e.n_fn > 0) e.e_fn = flips(errs.fn_samples, true);
  if (e.n_fp > 0) e.e_fp = flips(errs.fp_samples, false);
  return e;
}

/// Average of the present estimators; a single present side scores alone and
/// no present side leaves the concept unscored.
inline std::vector<std::optional<double>> bias_scores(const std::optional<Vector>& e_fn,
                                                      const std::optional<Vector>& e_fp, Eigen::Index rank) {
  std::vector<std::optional<double>> out(static_cast<std::size_t>(rank));
  for (Eigen::Index k = 0; k < rank; ++k) {
    auto& s = out[static_cast<std::size_t>(k)];
    if (e_fn && e_fp) {
      s = 0.5 * ((*e_fn)(k) + (*e_fp)(k));
    } else if (e_fn) {
      s = (*e_fn)(k);
    } else if (e_fp) {
      s = (*e_fp)(k);
    }
  }
  return out;
}

struct ConceptScore {
  ClassId class_id = 0;
  std::uint32_t concept_index = 0;
  std::optional<double> e_fn;
  std::optional<double> e_fp;
  std::size_t n_fn = 0;
  std::size_t n_fp = 0;
  std::optional<double> score;  ///< nullopt means UNSCORED
  bool is_bias = false;
};

struct BiasScoreTable {
  std::vector<ConceptScore> rows;  ///< ordered by class, then concept

  ScoreLookup lookup() const {
    ScoreLookup out;
    for (const auto& r : rows)
      if (r.score) out[{r.class_id, r.concept_index}] = *r.score;
    return out;
  }

  std::optional<double> max_score() const {
    std::optional<double> best;
    for (const auto& r : rows)
      if (r.score && (!best || *r.score > *best)) best = r.score;
    return best;
  }
};

struct ClassRanking {
  ClassId class_id = 0;
  /// Concepts by descending score; unscored concepts last; ties by index.
  std::vector<std::uint32_t> concepts;
};

struct AuditResult {
  BiasScoreTable table;
  std::vector<ClassRanking> rankings;
  std::vector<ConceptKey> bias_concepts;  ///< all (y, k) with S > tau
  ProbeConfig config;
};

/// Scores every concept of every supplied class bank. Classes without a bank
/// (nothing predicted as them) are skipped.
inline AuditResult identify(const AuditView& view, const std::vector<ConceptBank>& banks, const ProbeConfig& cfg) {
  cfg.validate();
  if (static_cast<std::size_t>(view.activations.rows()) != view.labels.size())
    fail(ErrorKind::DimensionMismatch, "activations and labels differ in length");
  AuditResult result;
  result.config = cfg;
  for (const auto& bank : banks) {
    const ErrorSets errs = collect_error_sets(view.labels, view.predictions, bank.class_id);
    const Estimates est = estimators(view, bank, errs, cfg);
    const auto scores = bias_scores(est.e_fn, est.e_fp, bank.rank());
    ClassRanking ranking{bank.class_id, {}};
    for (Eigen::Index k = 0; k < bank.rank(); ++k) {
      ConceptScore row;
      row.class_id = bank.class_id;
      row.concept_index = static_cast<std::uint32_t>(k);
      if (est.e_fn) row.e_fn = (*est.e_fn)(k);
      if (est.e_fp) row.e_fp = (*est.e_fp)(k);
      row.n_fn = est.n_fn;
      row.n_fp = est.n_fp;
      row.score = scores[static_cast<std::size_t>(k)];
      row.is_bias = row.score && *row.score > cfg.tau;
      if (row.is_bias) result.bias_concepts.push_back({row.class_id, row.concept_index});
      result.table.rows.push_back(row);
      ranking.concepts.push_back(row.concept_index);
    }
    std::stable_sort(ranking.concepts.begin(), ranking.concepts.end(), [&](std::uint32_t a, std::uint32_t b) {
      const auto& sa = scores[a];
      const auto& sb = scores[b];
      if (sa && sb) return *sa > *sb;
      return sa.has_value() && !sb.has_value();
    });
    result.rankings.push_back(std::move(ranking));
  }
  return result;
}

/// identify() for a model and raw audit samples.
inline AuditResult identify(const FrozenClassifier& model, const std::vector<Sample>& audit,
                            const std::vector<ConceptBank>& banks, const ProbeConfig& cfg) {
  const Matrix activations = features_all(model, audit);
  std::vector<ClassId> labels;
  for (const auto& s : audit) labels.push_back(s.label);
  const auto predictions = predict_all(model, audit);
  return identify(AuditView{activations, labels, predictions, model.head()}, banks, cfg);
}

// --- reports ---------------------------------------------------------------

inline constexpr const char* kSingleSideRule =
    "score = mean of e_fn and e_fp when both error sets are non-empty; the present estimator alone when one is "
    "empty; unscored when both are empty";

inline std::string score_csv(const BiasScoreTable& table) {
  std::string out = "class,concept,e_fn,e_fp,n_fn,n_fp,score,is_bias\n";
  for (const auto& r : table.rows) {
    out += std::to_string(r.class_id) + ',' + std::to_string(r.concept_index) + ',' + format_optional(r.e_fn) + ',' +
           format_optional(r.e_fp) + ',' + std::to_string(r.n_fn) + ',' + std::to_string(r.n_fp) + ',' +
           format_optional(r.score) + ',' + (r.is_bias ? "1" : "0") + '\n';
  }
  return out;
}

inline nlohmann::ordered_json probe_config_json(const ProbeConfig& cfg) {
  nlohmann::ordered_json j;
  j["d"] = cfg.d;
  j["eps_active"] = cfg.eps_active;
  j["tau"] = cfg.tau;
  return j;
}

inline nlohmann::ordered_json audit_json(const AuditResult& result) {
  nlohmann::ordered_json j;
  j["config"] = probe_config_json(result.config);
  j["scoring_rule"] = kSingleSideRule;
  auto& rows = j["scores"] = nlohmann::ordered_json::array();
  for (const auto& r : result.table.rows) {
    nlohmann::ordered_json row;
    row["class"] = r.class_id;
    row["concept"] = r.concept_index;
    row["e_fn"] = optional_json(r.e_fn);
    row["e_fp"] = optional_json(r.e_fp);
    row["n_fn"] = r.n_fn;
    row["n_fp"] = r.n_fp;
    row["score"] = optional_json(r.score);
    row["is_bias"] = r.is_bias;
    rows.push_back(std::move(row));
  }
  auto& ranks = j["rankings"] = nlohmann::ordered_json::array();
  for (const auto& r : result.rankings) ranks.push_back({{"class", r.class_id}, {"concepts", r.concepts}});
  auto& bias = j["bias_concepts"] = nlohmann::ordered_json::array();
  for (const auto& k : result.bias_concepts) bias.push_back({{"class", k.class_id}, {"concept", k.index}});
  return j;
}

}  // namespace biasprobe
