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

#include <filesystem>

#include "biasprobe/data.hpp"
#include "biasprobe/model.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace biasprobe;
using namespace biasprobe::testing;
namespace fs = std::filesystem;

namespace {

// Two classes on 4x4 images: class 0 lights the top half, class 1 the bottom.
std::vector<Sample> separable_toy() {
  std::vector<Sample> out;
  Rng rng(5);
  for (std::uint32_t i = 0; i < 20; ++i) {
    Sample s;
    s.id = i;
    s.label = i % 2;
    s.image = Image(4, 4);
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t c = 0; c < 4; ++c) {
        const bool lit = (r < 2) == (s.label == 0);
        for (std::size_t ch = 0; ch < 3; ++ch)
          s.image.at(r, c, ch) = static_cast<float>(lit ? 0.6 + 0.4 * rng.uniform() : 0.2 * rng.uniform());
      }
    out.push_back(std::move(s));
  }
  return out;
}

FrozenClassifier random_classifier(Rng& rng, std::size_t in, std::size_t p, std::size_t classes) {
  auto layer = [&](std::size_t i, std::size_t o) {
    DenseLayer l{FloatMatrix(o, i), FloatVector(o)};
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
      l.bias(r) = static_cast<float>(0.1 * rng.normal());
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = static_cast<float>(rng.normal() / std::sqrt(double(i)));
    }
    return l;
  };
  return FrozenClassifier({layer(in, 16), layer(16, p)}, layer(p, classes));
}

AffineHead random_head(Rng& rng, Eigen::Index C, Eigen::Index p) {
  return {random_matrix(rng, C, p), random_vector(rng, C)};
}

}  // namespace

TEST(HeadGradient, MatchesFiniteDifferences) {
  Rng rng(0x67726164);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto C = static_cast<Eigen::Index>(2 + rng.below(9));
    const auto p = static_cast<Eigen::Index>(1 + rng.below(30));
    const AffineHead head = random_head(rng, C, p);
    const Vector a = random_nonnegative(rng, p, 1).col(0) * 2.0;
    const auto y = static_cast<ClassId>(rng.below(static_cast<std::uint64_t>(C)));
    const Eigen::VectorXd fd = oracle::central_difference(
        [&](const Eigen::VectorXd& x) { return oracle::affine_cross_entropy(head.weight, head.bias, x, static_cast<int>(y)); },
        a, 1e-4);
    worst = std::max(worst, (head_gradient(head, a, y) - fd).norm() / std::max(fd.norm(), 1e-8));
  }
  EXPECT_LE(worst, 1e-4);
}

TEST(HeadGradient, ZeroWeightsGiveZeroGradient) {
  AffineHead head{Eigen::MatrixXd::Zero(3, 5), Vector::LinSpaced(3, -1, 1)};
  EXPECT_EQ(head_gradient(head, Vector::Ones(5), 2), Vector::Zero(5));
}

TEST(HeadGradient, SingleClassGivesZeroGradient) {
  Rng rng(2);
  const AffineHead head = random_head(rng, 1, 4);
  EXPECT_LE(head_gradient(head, Vector::Ones(4), 0).norm(), 1e-15);
}

TEST(HeadGradient, RejectsOutOfRangeClass) {
  Rng rng(3);
  const AffineHead head = random_head(rng, 3, 4);
  try {
    head_gradient(head, Vector::Ones(4), 3);
    FAIL() << "expected InvalidClass";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidClass);
  }
}

TEST(Softmax, LargeLogitsStayFinite) {
  const Vector p = softmax((Vector(3) << 1e4, -1e4, 9999.0).finished());
  EXPECT_TRUE(p.allFinite());
  EXPECT_NEAR(p.sum(), 1.0, 1e-12);
  EXPECT_GT(p(0), p(2));
  AffineHead head{Eigen::MatrixXd::Identity(3, 3), Vector::Zero(3)};
  EXPECT_TRUE(std::isfinite(head_loss(head, (Vector(3) << 1e4, 0, 0).finished(), 1)));
}

TEST(Classifier, FeaturesAreNonNegative) {
  Rng rng(4);
  const FrozenClassifier model = random_classifier(rng, 48, 8, 3);
  for (int i = 0; i < 200; ++i) {
    Image img(4, 4);
    for (auto& v : img.pixels) v = static_cast<float>(rng.uniform());
    ASSERT_TRUE((model.features(img).array() >= 0.0).all());
  }
}

TEST(Classifier, ZeroImageWithZeroBiasesGivesZeroFeatures) {
  DenseLayer l1{FloatMatrix::Ones(5, 48), FloatVector::Zero(5)};
  DenseLayer head{FloatMatrix::Ones(2, 5), FloatVector::Zero(2)};
  const FrozenClassifier model({l1}, head);
  EXPECT_EQ(model.features(Image(4, 4)), Vector::Zero(5));
}

TEST(Classifier, PredictComposesFeaturesAndHead) {
  Rng rng(6);
  const FrozenClassifier model = random_classifier(rng, 48, 8, 4);
  for (int i = 0; i < 50; ++i) {
    Image img(4, 4);
    for (auto& v : img.pixels) v = static_cast<float>(rng.uniform());
    EXPECT_EQ(model.predict(img), static_cast<ClassId>(argmax(model.head_logits(model.features(img)))));
  }
}

TEST(Classifier, TiedLogitsPickTheLowerClass) {
  DenseLayer l1{FloatMatrix::Zero(2, 48), FloatVector::Ones(2)};
  DenseLayer head{FloatMatrix::Zero(3, 2), FloatVector(3)};
  head.bias << 0.0f, 1.0f, 1.0f;
  const FrozenClassifier model({l1}, head);
  EXPECT_EQ(model.predict(Image(4, 4)), 1u);
}

TEST(Classifier, RejectsWrongImageSize) {
  Rng rng(7);
  const FrozenClassifier model = random_classifier(rng, 48, 8, 3);
  EXPECT_THROW(model.features(Image(5, 5)), Error);
}

TEST(Train, SeparableToyReachesFullAccuracy) {
  const auto data = separable_toy();
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.lr = 0.1;
  std::vector<double> losses;
  const FrozenClassifier model = train(data, cfg, {8, 8}, 2, &losses);
  ASSERT_EQ(losses.size(), cfg.epochs);
  for (double l : losses) ASSERT_TRUE(std::isfinite(l));
  for (const auto& s : data) EXPECT_EQ(model.predict(s.image), s.label);
  EXPECT_LT(losses.back(), losses.front());
}

TEST(Train, IsBitwiseDeterministic) {
  const auto data = separable_toy();
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 3;
  cfg.seed = 9;
  EXPECT_EQ(train(data, cfg, {8, 6}, 2), train(data, cfg, {8, 6}, 2));
  TrainConfig other = cfg;
  other.seed = 10;
  EXPECT_FALSE(train(data, cfg, {8, 6}, 2) == train(data, other, {8, 6}, 2));
}

TEST(Train, RejectsMissingClassAndBadConfig) {
  auto data = separable_toy();
  TrainConfig cfg;
  cfg.epochs = 1;
  try {
    train(data, cfg, {4}, 3);
    FAIL() << "expected EmptyClass";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::EmptyClass);
  }
  cfg.lr = 0.0;
  EXPECT_THROW(train(data, cfg, {4}, 2), Error);
}

TEST(Train, DivergenceIsReported) {
  auto data = separable_toy();
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.lr = 1e30;
  cfg.batch_size = 2;
  try {
    train(data, cfg, {8}, 2);
    FAIL() << "expected DivergedLoss";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DivergedLoss);
  }
}

TEST(Train, BiasedModelFavoursAlignedSamples) {
  DatasetSpec spec;
  spec.n_train = 2000;
  spec.n_audit = 1;
  spec.n_test = 1000;
  spec.seed = 3;
  const Dataset data = generate(spec);
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.seed = 3;
  const FrozenClassifier model = train(data.train, cfg, {100, 100}, 10);
  std::size_t aligned_n = 0, aligned_ok = 0, other_n = 0, other_ok = 0;
  for (const auto& s : data.test) {
    const bool ok = model.predict(s.image) == s.label;
    if (*s.bias_color == s.label) {
      ++aligned_n;
      aligned_ok += ok;
    } else {
      ++other_n;
      other_ok += ok;
    }
  }
  ASSERT_GT(aligned_n, 0u);
  EXPECT_LT(double(other_ok) / double(other_n), double(aligned_ok) / double(aligned_n));
}

TEST(Checkpoint, RoundTripsAndCarriesMeta) {
  Rng rng(8);
  const FrozenClassifier model = random_classifier(rng, 48, 8, 3);
  const fs::path p = fs::temp_directory_path() / "biasprobe_test_model.mlp";
  save_checkpoint(model, p, "config_hash=0123");
  std::string meta;
  EXPECT_EQ(load_checkpoint(p, &meta), model);
  EXPECT_EQ(meta, "config_hash=0123");
}

TEST(Checkpoint, RejectsCorruptFiles) {
  Rng rng(9);
  auto bytes = encode_checkpoint(random_classifier(rng, 48, 8, 3));
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  try {
    decode_checkpoint(bad_magic, "mem");
    FAIL() << "expected Format";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Format);
  }
  auto truncated = bytes;
  truncated.resize(bytes.size() / 2);
  EXPECT_THROW(decode_checkpoint(truncated, "mem"), Error);
}
