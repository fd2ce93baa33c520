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

#include <gtest/gtest.h>

#include <cmath>

#include "biasprobe/data.hpp"
#include "biasprobe/stats.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace biasprobe;
using namespace biasprobe::testing;

namespace {

double formula_mcc(double a, double b, double c, double d) {
  return (a * d - b * c) / std::sqrt((a + b) * (c + d) * (a + c) * (b + d));
}

// Feature layer that reads only the channel sum of each pixel, so any two
// colorings with equal channel sums give identical representations.
FrozenClassifier color_blind_model(Rng& rng) {
  const std::size_t pixels = 28 * 28;
  DenseLayer l1{FloatMatrix(6, pixels * 3), FloatVector::Constant(6, 0.1f)};
  for (Eigen::Index r = 0; r < 6; ++r)
    for (std::size_t px = 0; px < pixels; ++px) {
      const auto w = static_cast<float>(rng.normal() * 0.05);
      for (std::size_t c = 0; c < 3; ++c) l1.weight(r, static_cast<Eigen::Index>(px * 3 + c)) = w;
    }
  DenseLayer head{FloatMatrix::Ones(2, 6), FloatVector::Zero(2)};
  return FrozenClassifier({l1}, head);
}

FrozenClassifier color_sensitive_model(Rng& rng) {
  DenseLayer l1{FloatMatrix(8, 28 * 28 * 3), FloatVector::Constant(8, 0.1f)};
  for (Eigen::Index i = 0; i < l1.weight.size(); ++i) l1.weight.data()[i] = static_cast<float>(rng.normal() * 0.05);
  DenseLayer head{FloatMatrix::Ones(2, 8), FloatVector::Zero(2)};
  return FrozenClassifier({l1}, head);
}

std::vector<Sample> class_samples(std::size_t n) {
  DatasetSpec spec;
  spec.n_train = n;
  spec.n_audit = 1;
  spec.n_test = 1;
  spec.classes = 2;
  spec.seed = 6;
  return generate(spec).train;
}

MergedBank singleton_bank(std::size_t m, std::vector<std::vector<ClassId>> flagged) {
  MergedBank b;
  b.W = Matrix::Identity(4, static_cast<Eigen::Index>(m));
  for (std::size_t k = 0; k < m; ++k) {
    b.clusters.push_back({{0, static_cast<std::uint32_t>(k)}});
    b.bias_flags.push_back(!flagged[k].empty());
    b.flagged_classes.push_back(flagged[k]);
  }
  return b;
}

}  // namespace

TEST(Mcc, TabledExamples) {
  EXPECT_NEAR(mcc({5, 0, 0, 5}), 1.0, 1e-12);
  EXPECT_NEAR(mcc({25, 25, 25, 25}), 0.0, 1e-12);
  EXPECT_NEAR(mcc({6, 2, 1, 5}), formula_mcc(6, 2, 1, 5), 1e-12);
  EXPECT_NEAR(mcc({6, 2, 1, 5}), 1.0 / std::sqrt(3.0), 1e-4);
}

TEST(Mcc, ZeroMarginalGivesZero) {
  EXPECT_EQ(mcc({0, 0, 3, 4}), 0.0);
  EXPECT_EQ(mcc({3, 0, 4, 0}), 0.0);
}

TEST(Mcc, SymmetriesAndRange) {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const ContingencyTable2x2 t{1 + rng.below(30), 1 + rng.below(30), 1 + rng.below(30), 1 + rng.below(30)};
    const double m = mcc(t);
    ASSERT_LE(std::abs(m), 1.0);
    ASSERT_NEAR(mcc({t.n00, t.n01, t.n10, t.n11}), m, 1e-12);            // swap both
    ASSERT_NEAR(std::abs(mcc({t.n10, t.n11, t.n00, t.n01})), std::abs(m), 1e-12);  // swap rows
    ASSERT_NEAR(std::abs(mcc({t.n01, t.n00, t.n11, t.n10})), std::abs(m), 1e-12);  // swap columns
    ASSERT_NEAR(m, formula_mcc(double(t.n11), double(t.n10), double(t.n01), double(t.n00)), 1e-12);
  }
}

TEST(Tabulate, CountsCells) {
  const std::vector<bool> active{true, true, false, false, true};
  const std::vector<bool> label{true, false, true, false, true};
  const auto t = tabulate(active, label);
  EXPECT_EQ(t.n11, 2u);
  EXPECT_EQ(t.n10, 1u);
  EXPECT_EQ(t.n01, 1u);
  EXPECT_EQ(t.n00, 1u);
  EXPECT_THROW(tabulate(active, {true}), Error);
}

TEST(Chi2, TabledExamples) {
  const auto a = chi2_independence({25, 25, 25, 25});
  EXPECT_EQ(a.statistic, 0.0);
  EXPECT_EQ(a.p_value, 1.0);
  const auto b = chi2_independence({30, 10, 10, 30});
  EXPECT_NEAR(b.statistic, 80.0 * std::pow(30.0 * 30.0 - 10.0 * 10.0, 2) / std::pow(40.0, 4), 1e-9);
  EXPECT_NEAR(b.statistic, 20.0, 1e-9);
  EXPECT_NEAR(b.p_value, 7.74e-6, 1e-8);
  const auto c = chi2_independence({0, 5, 0, 7});
  EXPECT_EQ(c.statistic, 0.0);
  EXPECT_EQ(c.p_value, 1.0);
  EXPECT_EQ(kind_of([] { chi2_independence({0, 0, 0, 0}); }), ErrorKind::EmptySample);
}

TEST(Chi2, PValueDecreasesWithTheStatistic) {
  std::vector<std::pair<double, double>> pts;
  for (std::uint64_t k = 0; k <= 20; ++k) {
    const auto r = chi2_independence({20 + k, 20 - k, 20 - k, 20 + k});
    pts.emplace_back(r.statistic, r.p_value);
  }
  for (std::size_t i = 1; i < pts.size(); ++i) {
    ASSERT_GT(pts[i].first, pts[i - 1].first);
    ASSERT_LT(pts[i].second, pts[i - 1].second);
  }
}

TEST(MannWhitney, TabledExamples) {
  EXPECT_NEAR(mann_whitney_u_one_sided(std::vector<double>{10, 11, 12}, std::vector<double>{1, 2, 3}), 0.05, 1e-12);
  EXPECT_GE(mann_whitney_u_one_sided(std::vector<double>{1, 2, 3}, std::vector<double>{1, 2, 3}), 0.5);
  EXPECT_GE(mann_whitney_u_one_sided(std::vector<double>{1, 2}, std::vector<double>{10, 11}), 0.9);
  EXPECT_EQ(kind_of([] { mann_whitney_u_one_sided(std::vector<double>{}, std::vector<double>{1}); }),
            ErrorKind::EmptySample);
}

TEST(MannWhitney, ExactPathMatchesEnumeration) {
  Rng rng(2);
  for (int trial = 0; trial < 60; ++trial) {
    std::vector<double> g, l;
    const auto n1 = 1 + rng.below(6), n2 = 1 + rng.below(6);
    for (std::uint64_t i = 0; i < n1; ++i) g.push_back(rng.normal(0.5, 1.0));
    for (std::uint64_t i = 0; i < n2; ++i) l.push_back(rng.normal());
    ASSERT_NEAR(mann_whitney_u_one_sided(g, l), oracle::exact_mann_whitney_greater(g, l), 1e-12) << "trial " << trial;
  }
}

TEST(MannWhitney, NormalPathAgreesWithExactOnFiveByFive) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> g, l;
    for (int i = 0; i < 5; ++i) {
      g.push_back(rng.normal(0.7, 1.0));
      l.push_back(rng.normal());
    }
    ASSERT_NEAR(mann_whitney_normal_p(g, l), oracle::exact_mann_whitney_greater(g, l), 0.02) << "trial " << trial;
  }
}

TEST(MannWhitney, TiesUseMidranks) {
  // Pairs (g, l) score 1 when g > l and 0.5 on ties.
  const std::vector<double> g{1, 2, 2}, l{2, 1};
  EXPECT_DOUBLE_EQ(mann_whitney_u(g, l), 0.5 + 0.0 + 1.0 + 0.5 + 1.0 + 0.5);
  const double p = mann_whitney_u_one_sided(g, l);
  EXPECT_GT(p, 0.0);
  EXPECT_LE(p, 1.0);
  // All-tied samples have zero variance.
  EXPECT_EQ(mann_whitney_u_one_sided(std::vector<double>{1, 1}, std::vector<double>{1, 1, 1}), 1.0);
}

TEST(MannWhitney, LargeSamplesUseTheNormalApproximation) {
  std::vector<double> g, l;
  for (int i = 0; i < 30; ++i) {
    g.push_back(i + 0.5);
    l.push_back(i);
  }
  EXPECT_EQ(mann_whitney_u_one_sided(g, l), mann_whitney_normal_p(g, l));
}

TEST(Direction, ColorBlindModelIsDegenerate) {
  Rng rng(4);
  const FrozenClassifier model = color_blind_model(rng);
  // Red and green have equal channel sums, so the model cannot tell them apart.
  const auto samples = class_samples(20);
  const Sample red = recolor(samples[0], 0), green = recolor(samples[0], 1);
  EXPECT_LE((model.features(red.image) - model.features(green.image)).norm(), 1e-6);
  DirectionOptions opt;
  opt.method = DirectionMethod::ClassMeanDifference;
  // Same glyph in both colors: the class-mean difference is exactly zero.
  std::vector<Sample> pool;
  for (int i = 0; i < 10; ++i) {
    pool.push_back(recolor(samples[0], 0));
    pool.push_back(recolor(samples[0], 1));
  }
  const BiasDirection d = estimate_bias_direction(model, pool, samples[0].label, 0, opt);
  EXPECT_LE(d.raw_norm, 1e-6);
  EXPECT_TRUE(d.degenerate);
  EXPECT_EQ(d.direction, Vector::Zero(6));
}

TEST(Direction, IsUnitNormAndOrderInvariant) {
  Rng rng(5);
  const FrozenClassifier model = color_sensitive_model(rng);
  auto samples = class_samples(40);
  const BiasDirection d = estimate_bias_direction(model, samples, 1, 1);
  ASSERT_FALSE(d.degenerate);
  EXPECT_NEAR(d.direction.norm(), 1.0, 1e-9);
  EXPECT_NEAR(cosine_similarity(d.direction, d.direction), 1.0, 1e-12);
  std::reverse(samples.begin(), samples.end());
  const BiasDirection r = estimate_bias_direction(model, samples, 1, 1);
  EXPECT_LE((r.direction - d.direction).norm(), 1e-12);
}

TEST(Direction, CounterfactualMatchesTheDefinition) {
  Rng rng(6);
  const FrozenClassifier model = color_sensitive_model(rng);
  const auto samples = class_samples(10);
  Vector mean = Vector::Zero(8);
  std::size_t n = 0;
  for (const auto& s : samples) {
    if (s.label != 0) continue;
    mean += model.features(recolor(s, 3).image) - model.features(recolor(s, kNeutral).image);
    ++n;
  }
  mean /= static_cast<double>(n);
  const BiasDirection d = estimate_bias_direction(model, samples, 0, 3);
  EXPECT_NEAR(d.raw_norm, mean.norm(), 1e-9);
  EXPECT_LE((d.direction - mean.normalized()).norm(), 1e-9);
}

TEST(Direction, SubsampleIsSeededAndMissingClassFails) {
  Rng rng(7);
  const FrozenClassifier model = color_sensitive_model(rng);
  const auto samples = class_samples(60);
  DirectionOptions opt;
  opt.max_samples = 5;
  opt.seed = 1;
  const auto a = estimate_bias_direction(model, samples, 0, 2, opt);
  EXPECT_EQ(estimate_bias_direction(model, samples, 0, 2, opt).direction, a.direction);
  opt.seed = 2;
  EXPECT_NE(estimate_bias_direction(model, samples, 0, 2, opt).direction, a.direction);
  EXPECT_EQ(kind_of([&] { estimate_bias_direction(model, samples, 5, 2); }), ErrorKind::NoSamples);
}

TEST(Alignment, CosinesAndBoundary) {
  const Vector dir = (Vector(2) << 1.0, 0.0).finished();
  Matrix W(2, 4);
  W.col(0) << 3.0, 0.0;                                       // equal direction
  W.col(1) << 0.0, 1.0;                                       // orthogonal
  W.col(2) << 0.55, std::sqrt(1.0 - 0.55 * 0.55);             // boundary
  W.col(3) << 0.0, 0.0;                                       // dead
  const Alignment a = alignment(W, dir);
  EXPECT_NEAR(a.cosine[0], 1.0, 1e-12);
  EXPECT_TRUE(a.aligned[0]);
  EXPECT_NEAR(a.cosine[1], 0.0, 1e-12);
  EXPECT_FALSE(a.aligned[1]);
  EXPECT_TRUE(alignment(W, dir, a.cosine[2]).aligned[2]);
  EXPECT_NEAR(a.cosine[2], 0.55, 1e-12);
  EXPECT_EQ(a.cosine[3], 0.0);
  EXPECT_FALSE(a.aligned[3]);
  EXPECT_EQ(alignment(W, Vector::Zero(2)).cosine, std::vector<double>(4, 0.0));
  EXPECT_EQ(kind_of([&] { alignment(W, Vector::Ones(3)); }), ErrorKind::IncompatibleWidth);
}

TEST(Correlation, IdenticalActivationIsPerfectlyCorrelated) {
  const MergedBank bank = singleton_bank(2, {{1}, {}});
  Rng rng(8);
  std::vector<std::uint32_t> attrs;
  Matrix U(200, 2);
  for (Eigen::Index i = 0; i < 200; ++i) {
    attrs.push_back(static_cast<std::uint32_t>(rng.below(3)));
    U(i, 0) = attrs.back() == 1 ? 0.7 : 0.0;
    U(i, 1) = rng.uniform() < 0.5 ? 1.0 : 0.0;
  }
  const CorrelationReport r = correlation_report(bank, U, attrs, 3);
  ASSERT_EQ(r.pairs.size(), 2u * 3u);
  const PairStat& hit = r.pairs[1];
  EXPECT_EQ(hit.concept_index, 0u);
  EXPECT_EQ(hit.attribute, 1u);
  EXPECT_NEAR(hit.mcc_abs, 1.0, 1e-12);
  EXPECT_TRUE(hit.significant);
  EXPECT_TRUE(hit.bias_group);
  for (std::size_t i = 0; i < r.pairs.size(); ++i) EXPECT_EQ(r.pairs[i].bias_group, i == 1);
  EXPECT_EQ(r.f_bias, 1.0);
  EXPECT_GE(r.f_other, 0.0);
  EXPECT_LE(r.f_other, 1.0);
  ASSERT_TRUE(r.mannwhitney_p.has_value());
  EXPECT_LT(*r.mannwhitney_p, 0.5);
  EXPECT_EQ(r.mcc_values(true).size(), 1u);
  EXPECT_EQ(r.mcc_values(false).size(), 5u);
  const std::string csv = correlation_csv(r);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "concept,attribute,mcc_abs,p,significant,group");
  EXPECT_EQ(correlation_json(r)["pair_count"].get<std::size_t>(), 6u);
}

TEST(Correlation, IndependentActivationIsNearZero) {
  const MergedBank bank = singleton_bank(1, {{}});
  Rng rng(9);
  std::size_t significant = 0;
  double sum = 0.0;
  for (int rep = 0; rep < 200; ++rep) {
    std::vector<std::uint32_t> attrs;
    Matrix U(300, 1);
    for (Eigen::Index i = 0; i < 300; ++i) {
      attrs.push_back(static_cast<std::uint32_t>(rng.below(2)));
      U(i, 0) = rng.uniform() < 0.4 ? 1.0 : 0.0;
    }
    const CorrelationReport r = correlation_report(bank, U, attrs, 2);
    sum += r.pairs[0].mcc_abs;
    significant += r.pairs[0].significant;
    EXPECT_FALSE(r.mannwhitney_p.has_value());
  }
  EXPECT_LT(sum / 200.0, 0.1);
  // Under independence about alpha of the tests reject.
  EXPECT_NEAR(static_cast<double>(significant) / 200.0, 0.05, 0.04);
}

TEST(Correlation, AttributeMappingAndMissingLabels) {
  const MergedBank bank = singleton_bank(1, {{0}});
  const std::vector<std::uint32_t> attrs{0, 1, 1, 0};
  const Matrix U = (Matrix(4, 1) << 1, 0, 0, 1).finished();
  const auto r = correlation_report(bank, U, attrs, 2, 1e-8, 0.05, [](ClassId c) { return (c + 1) % 2; });
  EXPECT_FALSE(r.pairs[0].bias_group);
  EXPECT_TRUE(r.pairs[1].bias_group);
  EXPECT_EQ(kind_of([&] { correlation_report(bank, U, {}, 2); }), ErrorKind::MissingBiasLabels);
}
