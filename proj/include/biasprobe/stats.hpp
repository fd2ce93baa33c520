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

// Validation statistics for identified concepts: association between binary
// concept activity and bias labels, rank tests between pair groups, and the
// cosine alignment of concepts with an estimated color direction.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
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
#include "biasprobe/probe.hpp"
#include "biasprobe/report.hpp"
#include "biasprobe/rng.hpp"

namespace biasprobe {

/// Rows: concept active / inactive. Columns: label 1 / label 0.
struct ContingencyTable2x2 {
  std::uint64_t n11 = 0;
  std::uint64_t n10 = 0;
  std::uint64_t n01 = 0;
  std::uint64_t n00 = 0;

  std::uint64_t total() const { return n11 + n10 + n01 + n00; }
};

inline ContingencyTable2x2 tabulate(const std::vector<bool>& active, const std::vector<bool>& label) {
  if (active.size() != label.size()) fail(ErrorKind::DimensionMismatch, "tabulate: lengths differ");
  ContingencyTable2x2 t;
  for (std::size_t i = 0; i < active.size(); ++i) {
    if (active[i]) {
      ++(label[i] ? t.n11 : t.n10);
    } else {
      ++(label[i] ? t.n01 : t.n00);
    }
  }
  return t;
}

namespace detail {

inline bool zero_marginal(const ContingencyTable2x2& t) {
  return t.n11 + t.n10 == 0 || t.n01 + t.n00 == 0 || t.n11 + t.n01 == 0 || t.n10 + t.n00 == 0;
}

}  // namespace detail

/// Matthews correlation; 0 when any marginal is empty.
inline double mcc(const ContingencyTable2x2& t) {
  if (detail::zero_marginal(t)) return 0.0;
  const double a = static_cast<double>(t.n11), b = static_cast<double>(t.n10);
  const double c = static_cast<double>(t.n01), d = static_cast<double>(t.n00);
  return (a * d - b * c) / std::sqrt((a + b) * (c + d) * (a + c) * (b + d));
}

struct Chi2Result {
  double statistic = 0.0;
  double p_value = 1.0;
};

/// Pearson chi-square with one degree of freedom, no continuity correction.
inline Chi2Result chi2_independence(const ContingencyTable2x2& t) {
  if (t.total() == 0) fail(ErrorKind::EmptySample, "chi2: empty table");
  if (detail::zero_marginal(t)) return {};
  const double n = static_cast<double>(t.total());
  const double a = static_cast<double>(t.n11), b = static_cast<double>(t.n10);
  const double c = static_cast<double>(t.n01), d = static_cast<double>(t.n00);
  const double diff = a * d - b * c;
  const double x = n * diff * diff / ((a + b) * (c + d) * (a + c) * (b + d));
  return {x, std::erfc(std::sqrt(x / 2.0))};
}

/// U statistic of `greater` over `lesser`: pairs with greater > lesser, ties
/// counted one half.
inline double mann_whitney_u(std::span<const double> greater, std::span<const double> lesser) {
  double u = 0.0;
  for (double g : greater)
    for (double l : lesser) u += g > l ? 1.0 : (g == l ? 0.5 : 0.0);
  return u;
}

/// Exact P(U >= u_obs) under H0 for tie-free samples of sizes (n1, n2).
inline double mann_whitney_exact_p(std::size_t n1, std::size_t n2, double u_obs) {
  // f[a][u]: orderings of a "greater" and b "lesser" values with statistic u.
  // The largest value is either a "greater" one (adds b) or a "lesser" one.
  const std::size_t max_u = n1 * n2;
  std::vector<std::vector<double>> f(n1 + 1, std::vector<double>(max_u + 1, 0.0));
  for (std::size_t a = 0; a <= n1; ++a) f[a][0] = 1.0;  // b = 0
  for (std::size_t b = 1; b <= n2; ++b) {
    std::vector<std::vector<double>> g(n1 + 1, std::vector<double>(max_u + 1, 0.0));
    g[0][0] = 1.0;
    for (std::size_t a = 1; a <= n1; ++a)
      for (std::size_t u = 0; u <= a * b; ++u) g[a][u] = (u >= b ? g[a - 1][u - b] : 0.0) + f[a][u];
    f = std::move(g);
  }
  double total = 0.0, tail = 0.0;
  for (std::size_t u = 0; u <= max_u; ++u) {
    total += f[n1][u];
    if (static_cast<double>(u) >= u_obs - 1e-9) tail += f[n1][u];
  }
  return tail / total;
}

/// Normal approximation with midrank tie correction and continuity correction.
inline double mann_whitney_normal_p(std::span<const double> greater, std::span<const double> lesser) {
  const double n1 = static_cast<double>(greater.size());
  const double n2 = static_cast<double>(lesser.size());
  const double n = n1 + n2;
  std::vector<double> pooled(greater.begin(), greater.end());
  pooled.insert(pooled.end(), lesser.begin(), lesser.end());
  std::sort(pooled.begin(), pooled.end());
  double tie_term = 0.0;
  for (std::size_t i = 0; i < pooled.size();) {
    std::size_t j = i;
    while (j < pooled.size() && pooled[j] == pooled[i]) ++j;
    const double t = static_cast<double>(j - i);
    tie_term += t * t * t - t;
    i = j;
  }
  const double var = n1 * n2 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
  if (!(var > 0.0)) return 1.0;
  const double z = (mann_whitney_u(greater, lesser) - n1 * n2 / 2.0 - 0.5) / std::sqrt(var);
  return 0.5 * std::erfc(z / std::sqrt(2.0));
}

/// One-sided test that `greater` is stochastically larger than `lesser`.
/// Exact enumeration when n1 * n2 <= 400 and there are no ties.
inline double mann_whitney_u_one_sided(std::span<const double> greater, std::span<const double> lesser) {
  if (greater.empty() || lesser.empty()) fail(ErrorKind::EmptySample, "Mann-Whitney test needs two non-empty samples");
  std::vector<double> pooled(greater.begin(), greater.end());
  pooled.insert(pooled.end(), lesser.begin(), lesser.end());
  std::sort(pooled.begin(), pooled.end());
  const bool ties = std::adjacent_find(pooled.begin(), pooled.end()) != pooled.end();
  if (!ties && greater.size() * lesser.size() <= 400)
    return mann_whitney_exact_p(greater.size(), lesser.size(), mann_whitney_u(greater, lesser));
  return mann_whitney_normal_p(greater, lesser);
}

// --- color direction -------------------------------------------------------

enum class DirectionMethod : std::uint8_t {
  /// mean over x of g(recolor(x, c)) - g(recolor(x, neutral gray))
  CounterfactualRecolor,
  /// mean g over class samples already colored c minus mean g over the rest
  ClassMeanDifference,
};

inline DirectionMethod parse_direction_method(std::string_view text) {
  if (text == "counterfactual") return DirectionMethod::CounterfactualRecolor;
  if (text == "class-mean") return DirectionMethod::ClassMeanDifference;
  fail(ErrorKind::Config, "unknown direction method '" + std::string(text) + "'");
}

inline const char* to_string(DirectionMethod m) {
  return m == DirectionMethod::CounterfactualRecolor ? "counterfactual" : "class-mean";
}

struct DirectionOptions {
  std::size_t max_samples = 500;
  std::uint64_t seed = 0;
  DirectionMethod method = DirectionMethod::CounterfactualRecolor;
  double degenerate_norm = 1e-9;
};

struct BiasDirection {
  Vector direction;  ///< unit norm, or zero when degenerate
  double raw_norm = 0.0;
  bool degenerate = false;
};

inline BiasDirection estimate_bias_direction(const FrozenClassifier& model, const std::vector<Sample>& samples,
                                             ClassId y, ColorId color, const DirectionOptions& options = {}) {
  std::vector<const Sample*> pool;
  for (const auto& s : samples)
    if (s.label == y) pool.push_back(&s);
  if (pool.empty()) fail(ErrorKind::NoSamples, "no samples of class " + std::to_string(y));
  if (pool.size() > options.max_samples) {
    Rng rng(derive_seed(options.seed, 0xd17ec7u + y));
    std::vector<const Sample*> subset;
    for (auto i : rng.sample_without_replacement(pool.size(), options.max_samples)) subset.push_back(pool[i]);
    pool = std::move(subset);
  }

  const auto p = static_cast<Eigen::Index>(model.width());
  Vector mean = Vector::Zero(p);
  if (options.method == DirectionMethod::CounterfactualRecolor) {
    std::vector<Vector> diffs(pool.size());
    parallel_for(pool.size(), [&](std::size_t i) {
      diffs[i] = model.features(recolor(*pool[i], color).image) - model.features(recolor(*pool[i], kNeutral).image);
    });
    for (const auto& d : diffs) mean += d;
    mean /= static_cast<double>(pool.size());
  } else {
    Vector with = Vector::Zero(p), without = Vector::Zero(p);
    std::size_t n_with = 0, n_without = 0;
    for (const Sample* s : pool) {
      const Vector a = model.features(s->image);
      if (s->bias_color && *s->bias_color == color) {
        with += a;
        ++n_with;
      } else {
        without += a;
        ++n_without;
      }
    }
    if (n_with == 0 || n_without == 0)
      fail(ErrorKind::NoSamples, "class-mean direction needs samples with and without the color");
    mean = with / static_cast<double>(n_with) - without / static_cast<double>(n_without);
  }

  BiasDirection out;
  out.raw_norm = mean.norm();
  out.degenerate = !(out.raw_norm > options.degenerate_norm);
  out.direction = out.degenerate ? Vector::Zero(p) : Vector(mean / out.raw_norm);
  return out;
}

struct Alignment {
  std::vector<double> cosine;  ///< per concept; 0 for dead concepts
  std::vector<bool> aligned;   ///< cosine >= threshold
};

inline constexpr double kAlignmentThreshold = 0.55;

inline Alignment alignment(const Matrix& W, const Vector& direction, double threshold = kAlignmentThreshold) {
  if (W.rows() != direction.size()) fail(ErrorKind::IncompatibleWidth, "direction width differs from bank width");
  Alignment out;
  const bool zero_direction = !(direction.norm() > 0.0);
  for (Eigen::Index k = 0; k < W.cols(); ++k) {
    const double c = zero_direction || is_dead_concept(W, k) ? 0.0 : cosine_similarity(W.col(k), direction);
    out.cosine.push_back(c);
    out.aligned.push_back(c >= threshold);
  }
  return out;
}

inline Alignment alignment(const ConceptBank& bank, const Vector& direction, double threshold = kAlignmentThreshold) {
  return alignment(bank.W, direction, threshold);
}

// --- correlation report ----------------------------------------------------

struct PairStat {
  std::uint32_t concept_index = 0;
  std::uint32_t attribute = 0;
  double mcc_abs = 0.0;
  double chi2 = 0.0;
  double p_value = 1.0;
  bool significant = false;
  bool bias_group = false;  ///< identified bias concept paired with its matching attribute
};

struct CorrelationReport {
  std::vector<PairStat> pairs;  ///< concept-major, then attribute
  double alpha = 0.05;
  double f_bias = 0.0;
  double f_other = 0.0;
  std::optional<double> mean_sig_phi_bias;
  std::optional<double> mean_sig_phi_other;
  std::optional<double> mannwhitney_p;  ///< absent when a group is empty

  std::vector<double> mcc_values(bool bias_group) const {
    std::vector<double> out;
    for (const auto& p : pairs)
      if (p.bias_group == bias_group) out.push_back(p.mcc_abs);
    return out;
  }
};

/// Merged-bank coefficients of every representation row.
inline Matrix merged_coefficients(const MergedBank& merged, const Matrix& activations) {
  Matrix U(activations.rows(), merged.W.cols());
  if (merged.W.cols() == 0) return U;
  const GramNnls projector(merged.W);
  parallel_for(static_cast<std::size_t>(activations.rows()), [&](std::size_t i) {
    const auto row = static_cast<Eigen::Index>(i);
    U.row(row) = projector.solve(activations.row(row).transpose()).transpose();
  });
  return U;
}

/// Pairs every merged concept with every one-vs-rest attribute value. A pair
/// is in the bias group when the concept is flagged and the attribute is the
/// one `attribute_of_class` assigns to a class that flagged it.
inline CorrelationReport correlation_report(const MergedBank& merged, const Matrix& coefficients,
                                            std::span<const std::uint32_t> bias_attributes,
                                            std::uint32_t attribute_count, double eps_active = 1e-8,
                                            double alpha = 0.05,
                                            const std::function<std::uint32_t(ClassId)>& attribute_of_class = {}) {
  if (bias_attributes.empty()) fail(ErrorKind::MissingBiasLabels, "correlation report needs bias attributes");
  if (static_cast<std::size_t>(coefficients.rows()) != bias_attributes.size() ||
      coefficients.cols() != static_cast<Eigen::Index>(merged.size()))
    fail(ErrorKind::DimensionMismatch, "coefficients do not match bank and attributes");
  const std::size_t n = bias_attributes.size();
  CorrelationReport rep;
  rep.alpha = alpha;
  for (std::size_t k = 0; k < merged.size(); ++k) {
    std::vector<bool> active(n);
    for (std::size_t i = 0; i < n; ++i)
      active[i] = coefficients(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) > eps_active;
    std::vector<std::uint32_t> matching;
    if (merged.bias_flags[k])
      for (auto c : merged.flagged_classes[k]) matching.push_back(attribute_of_class ? attribute_of_class(c) : c);
    for (std::uint32_t attr = 0; attr < attribute_count; ++attr) {
      std::vector<bool> label(n);
      for (std::size_t i = 0; i < n; ++i) label[i] = bias_attributes[i] == attr;
      const auto table = tabulate(active, label);
      const auto chi = chi2_independence(table);
      PairStat p;
      p.concept_index = static_cast<std::uint32_t>(k);
      p.attribute = attr;
      p.mcc_abs = std::abs(mcc(table));
      p.chi2 = chi.statistic;
      p.p_value = chi.p_value;
      p.significant = chi.p_value < alpha;
      p.bias_group = std::find(matching.begin(), matching.end(), attr) != matching.end();
      rep.pairs.push_back(p);
    }
  }
  auto summarize = [&](bool group, double& fraction, std::optional<double>& mean_sig) {
    std::size_t total = 0, sig = 0;
    double sum = 0.0;
    for (const auto& p : rep.pairs) {
      if (p.bias_group != group) continue;
      ++total;
      if (p.significant) {
        ++sig;
        sum += p.mcc_abs;
      }
    }
    fraction = total ? static_cast<double>(sig) / static_cast<double>(total) : 0.0;
    if (sig) mean_sig = sum / static_cast<double>(sig);
  };
  summarize(true, rep.f_bias, rep.mean_sig_phi_bias);
  summarize(false, rep.f_other, rep.mean_sig_phi_other);
  const auto bias = rep.mcc_values(true);
  const auto other = rep.mcc_values(false);
  if (!bias.empty() && !other.empty()) rep.mannwhitney_p = mann_whitney_u_one_sided(bias, other);
  return rep;
}

inline nlohmann::ordered_json correlation_json(const CorrelationReport& r) {
  nlohmann::ordered_json j;
  j["alpha"] = r.alpha;
  j["pair_count"] = r.pairs.size();
  j["f_bias"] = r.f_bias;
  j["f_other"] = r.f_other;
  j["mean_significant_phi_bias"] = optional_json(r.mean_sig_phi_bias);
  j["mean_significant_phi_other"] = optional_json(r.mean_sig_phi_other);
  j["mannwhitney_p"] = optional_json(r.mannwhitney_p);
  auto& pairs = j["pairs"] = nlohmann::ordered_json::array();
  for (const auto& p : r.pairs)
    pairs.push_back({{"concept", p.concept_index},
                     {"attribute", p.attribute},
                     {"mcc_abs", p.mcc_abs},
                     {"p", p.p_value},
                     {"significant", p.significant},
                     {"group", p.bias_group ? "bias_concept" : "other"}});
  return j;
}

inline std::string correlation_csv(const CorrelationReport& r) {
  std::string out = "concept,attribute,mcc_abs,p,significant,group\n";
  for (const auto& p : r.pairs)
    out += std::to_string(p.concept_index) + ',' + std::to_string(p.attribute) + ',' + format_number(p.mcc_abs) + ',' +
           format_number(p.p_value) + ',' + (p.significant ? "1" : "0") + ',' +
           (p.bias_group ? "bias_concept" : "other") + '\n';
  return out;
}

}  // namespace biasprobe
