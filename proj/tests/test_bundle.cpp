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

#include <cstring>
#include <filesystem>

#include "biasprobe/bundle.hpp"
#include "biasprobe/data.hpp"
#include "test_util.hpp"

using namespace biasprobe;
using biasprobe::testing::kind_of;
namespace fs = std::filesystem;

namespace {

ActivationBundle random_bundle(Rng& rng, std::size_t n, std::size_t p, std::size_t C, bool attrs, bool head) {
  ActivationBundle b;
  b.activations.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
  b.logits.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(C));
  for (Eigen::Index i = 0; i < b.activations.rows(); ++i) {
    for (Eigen::Index j = 0; j < b.activations.cols(); ++j)
      b.activations(i, j) = rng.uniform() < 0.3 ? 0.0f : static_cast<float>(rng.uniform() * 5.0);
    for (Eigen::Index j = 0; j < b.logits.cols(); ++j) b.logits(i, j) = static_cast<float>(rng.normal());
    b.labels.push_back(static_cast<ClassId>(rng.below(C)));
    b.predictions.push_back(static_cast<ClassId>(argmax(b.logits.row(i))));
  }
  if (attrs) {
    b.bias_attributes.emplace();
    for (std::size_t i = 0; i < n; ++i) b.bias_attributes->push_back(static_cast<std::uint32_t>(rng.below(C)));
  }
  b.layer_name = "layer" + std::to_string(p);
  b.model_id = "model-\xc3\xa9";  // UTF-8 passes through untouched
  if (head) {
    AffineHead h{Eigen::MatrixXd(C, p), Vector(C)};
    for (Eigen::Index i = 0; i < h.weight.rows(); ++i) {
      h.bias(i) = static_cast<float>(rng.normal());
      for (Eigen::Index j = 0; j < h.weight.cols(); ++j) h.weight(i, j) = static_cast<float>(rng.normal());
    }
    b.head = std::move(h);
  }
  return b;
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
}

void put_f32(std::vector<std::uint8_t>& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

void put_text(std::vector<std::uint8_t>& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}


}  // namespace

TEST(Bundle, LayoutMatchesHandEncodedBytes) {
  ActivationBundle b;
  b.activations.resize(2, 2);
  b.activations << 0.0f, 1.5f, 2.0f, 0.25f;
  b.logits.resize(2, 3);
  b.logits << 1.0f, 3.0f, 2.0f, 5.0f, -1.0f, 5.0f;
  b.labels = {1, 2};
  b.predictions = {1, 0};
  b.bias_attributes = std::vector<std::uint32_t>{2, 0};
  b.layer_name = "fc2";
  b.model_id = "m";

  std::vector<std::uint8_t> want = {'A', 'B', 'F', '1'};
  put_u32(want, 1);
  put_u32(want, 2);
  put_u32(want, 2);
  put_u32(want, 3);
  put_u32(want, 1);
  for (float v : {0.0f, 1.5f, 2.0f, 0.25f}) put_f32(want, v);
  for (float v : {1.0f, 3.0f, 2.0f, 5.0f, -1.0f, 5.0f}) put_f32(want, v);
  for (std::uint32_t v : {1u, 2u, 1u, 0u, 2u, 0u}) put_u32(want, v);
  put_text(want, "fc2");
  put_text(want, "m");
  EXPECT_EQ(encode_bundle(b), want);

  b.head = AffineHead{Eigen::MatrixXd::Constant(3, 2, 0.5), Vector::Constant(3, -2.0)};
  want.insert(want.end(), {'H', 'E', 'A', 'D'});
  put_u32(want, 3);
  put_u32(want, 2);
  for (int k = 0; k < 6; ++k) put_f32(want, 0.5f);
  for (int k = 0; k < 3; ++k) put_f32(want, -2.0f);
  EXPECT_EQ(encode_bundle(b), want);
}

TEST(Bundle, RoundTripsRandomShapes) {
  Rng rng(21);
  const fs::path path = fs::temp_directory_path() / "biasprobe_test_bundle.abf";
  for (int trial = 0; trial < 40; ++trial) {
    const ActivationBundle b = random_bundle(rng, rng.below(12), 1 + rng.below(9), 1 + rng.below(6), trial % 2 == 0,
                                             trial % 3 != 0);
    write_bundle(b, path);
    const ActivationBundle back = read_bundle(path);
    ASSERT_EQ(back, b) << "trial " << trial;
    ASSERT_EQ(encode_bundle(back), io::read_file(path));
  }
}

TEST(Bundle, ThreeByFourRewriteIsByteIdentical) {
  Rng rng(22);
  const auto bytes = encode_bundle(random_bundle(rng, 3, 4, 2, false, false));
  EXPECT_EQ(encode_bundle(decode_bundle(bytes, "mem")), bytes);
}

TEST(Bundle, WrongMagicIsFormatError) {
  Rng rng(23);
  auto bytes = encode_bundle(random_bundle(rng, 3, 4, 2, false, false));
  bytes[3] = '2';
  EXPECT_EQ(kind_of([&] { decode_bundle(bytes, "mem"); }), ErrorKind::Format);
}

TEST(Bundle, OtherVersionIsSchemaMismatch) {
  Rng rng(24);
  auto bytes = encode_bundle(random_bundle(rng, 3, 4, 2, false, false));
  bytes[4] = 2;
  EXPECT_EQ(kind_of([&] { decode_bundle(bytes, "mem"); }), ErrorKind::SchemaMismatch);
}

TEST(Bundle, UnknownFlagsAndTruncationAreFormatErrors) {
  Rng rng(25);
  const auto bytes = encode_bundle(random_bundle(rng, 3, 4, 2, true, true));
  auto flags = bytes;
  flags[20] |= 4;
  EXPECT_EQ(kind_of([&] { decode_bundle(flags, "mem"); }), ErrorKind::Format);
  for (std::size_t cut : {std::size_t{10}, bytes.size() / 2, bytes.size() - 1}) {
    auto truncated = bytes;
    truncated.resize(cut);
    EXPECT_EQ(kind_of([&] { decode_bundle(truncated, "mem"); }), ErrorKind::Format) << "cut " << cut;
  }
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_EQ(kind_of([&] { decode_bundle(trailing, "mem"); }), ErrorKind::Format);
}

TEST(Bundle, HeadShapeMismatchIsFormatError) {
  Rng rng(26);
  auto bytes = encode_bundle(random_bundle(rng, 3, 4, 2, false, true));
  // HEAD C field sits right after the HEAD magic, 4 + 4 + 4 bytes before the weights.
  const std::size_t head_c = bytes.size() - (2 * 4 + 2) * 4 - 8;
  ASSERT_EQ(bytes[head_c - 4], 'H');
  bytes[head_c] = 3;
  EXPECT_EQ(kind_of([&] { decode_bundle(bytes, "mem"); }), ErrorKind::Format);
}

TEST(Bundle, PredictionNotArgmaxIsIntegrityError) {
  Rng rng(27);
  ActivationBundle b = random_bundle(rng, 4, 3, 3, false, false);
  const auto good = encode_bundle(b);
  auto bytes = good;
  // Predictions follow the activations, logits and labels.
  const std::size_t pred0 = 24 + (4 * 3 + 4 * 3 + 4) * 4;
  bytes[pred0] = static_cast<std::uint8_t>((b.predictions[0] + 1) % 3);
  EXPECT_EQ(kind_of([&] { decode_bundle(bytes, "mem"); }), ErrorKind::Integrity);
  b.predictions[0] = (b.predictions[0] + 1) % 3;
  EXPECT_EQ(kind_of([&] { encode_bundle(b); }), ErrorKind::Integrity);
}

TEST(Bundle, ArgmaxTiesResolveToTheLowestIndex) {
  ActivationBundle b;
  b.activations = FloatMatrix::Zero(1, 1);
  b.logits.resize(1, 3);
  b.logits << 2.0f, 7.0f, 7.0f;
  b.labels = {0};
  b.predictions = {2};
  EXPECT_EQ(kind_of([&] { check_bundle(b); }), ErrorKind::Integrity);
  b.predictions = {1};
  EXPECT_NO_THROW(check_bundle(b));
}

TEST(Bundle, NegativeActivationOrBadLabelIsIntegrityError) {
  Rng rng(28);
  ActivationBundle b = random_bundle(rng, 3, 2, 2, false, false);
  ActivationBundle neg = b;
  neg.activations(1, 1) = -0.5f;
  EXPECT_EQ(kind_of([&] { check_bundle(neg); }), ErrorKind::Integrity);
  ActivationBundle label = b;
  label.labels[2] = 2;
  EXPECT_EQ(kind_of([&] { check_bundle(label); }), ErrorKind::Integrity);
  ActivationBundle rows = b;
  rows.labels.pop_back();
  EXPECT_EQ(kind_of([&] { check_bundle(rows); }), ErrorKind::DimensionMismatch);
}

TEST(Bundle, MissingFileIsReported) {
  const auto k = kind_of([] { read_bundle("/nonexistent/biasprobe.abf"); });
  EXPECT_TRUE(k == ErrorKind::FileNotFound || k == ErrorKind::Io);
}

TEST(Bundle, MakeBundleMatchesTheModel) {
  Rng rng(29);
  DenseLayer l1{FloatMatrix(6, 48), FloatVector(6)};
  DenseLayer head{FloatMatrix(3, 6), FloatVector(3)};
  for (auto* m : {&l1.weight, &head.weight})
    for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = static_cast<float>(rng.normal());
  for (auto* v : {&l1.bias, &head.bias})
    for (Eigen::Index i = 0; i < v->size(); ++i) v->data()[i] = static_cast<float>(rng.normal());
  const FrozenClassifier model({l1}, head);
  std::vector<Sample> samples;
  for (std::uint32_t i = 0; i < 10; ++i) {
    Sample s;
    s.id = i;
    s.label = i % 3;
    s.bias_color = (i + 1) % 3;
    s.image = Image(4, 4);
    for (auto& v : s.image.pixels) v = static_cast<float>(rng.uniform());
    samples.push_back(std::move(s));
  }
  const ActivationBundle b = make_bundle(model, samples, "fc1", "toy", true);
  ASSERT_EQ(b.size(), 10u);
  ASSERT_TRUE(b.bias_attributes.has_value());
  ASSERT_TRUE(b.head.has_value());
  EXPECT_EQ(b.head->weight, model.head().weight);
  for (std::size_t i = 0; i < 10; ++i) {
    EXPECT_EQ(b.labels[i], samples[i].label);
    EXPECT_EQ((*b.bias_attributes)[i], *samples[i].bias_color);
    EXPECT_TRUE((b.activations.row(static_cast<Eigen::Index>(i)).array() >= 0.0f).all());
  }
  EXPECT_NO_THROW(check_bundle(decode_bundle(encode_bundle(b), "mem")));
  samples[4].bias_color.reset();
  EXPECT_FALSE(make_bundle(model, samples, "fc1", "toy", false).bias_attributes.has_value());
}
