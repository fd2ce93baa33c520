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

// Multilayer perceptron f = h(g(x)): g is a stack of affine+ReLU layers ending
// in the representation a >= 0, h is a single affine head producing logits.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "biasprobe/binary_io.hpp"
#include "biasprobe/data.hpp"
#include "biasprobe/error.hpp"
#include "biasprobe/linalg.hpp"
#include "biasprobe/rng.hpp"

namespace biasprobe {

struct DenseLayer {
  FloatMatrix weight;  ///< out x in
  FloatVector bias;    ///< out

  friend bool operator==(const DenseLayer& a, const DenseLayer& b) {
    return a.weight.rows() == b.weight.rows() && a.weight.cols() == b.weight.cols() && a.weight == b.weight &&
           a.bias == b.bias;
  }
};

/// Affine classifier head in double precision: logits = weight * a + bias.
struct AffineHead {
  Eigen::MatrixXd weight;  ///< C x p
  Vector bias;             ///< C

  Eigen::Index classes() const { return weight.rows(); }
  Eigen::Index width() const { return weight.cols(); }

  Vector logits(const Vector& a) const {
    if (a.size() != weight.cols())
      fail(ErrorKind::DimensionMismatch, "head expects width " + std::to_string(weight.cols()) + ", got " +
                                             std::to_string(a.size()));
    return weight * a + bias;
  }
};

inline bool operator==(const AffineHead& a, const AffineHead& b) {
  return a.weight.rows() == b.weight.rows() && a.weight.cols() == b.weight.cols() && a.weight == b.weight &&
         a.bias == b.bias;
}

/// Numerically stable softmax (max-subtracted).
inline Vector softmax(const Vector& logits) {
  const double m = logits.maxCoeff();
  Vector e = (logits.array() - m).exp();
  return e / e.sum();
}

/// Cross-entropy of the head at representation a for class y.
inline double head_loss(const AffineHead& head, const Vector& a, ClassId y) {
  const Vector z = head.logits(a);
  const double m = z.maxCoeff();
  return m + std::log((z.array() - m).exp().sum()) - z(static_cast<Eigen::Index>(y));
}

/// Exact gradient of the cross-entropy with respect to the representation:
/// W^T (softmax(W a + b) - onehot(y)).
inline Vector head_gradient(const AffineHead& head, const Vector& a, ClassId y) {
  if (static_cast<Eigen::Index>(y) >= head.classes())
    fail(ErrorKind::InvalidClass, "class " + std::to_string(y) + " outside head with " +
                                      std::to_string(head.classes()) + " classes");
  require_finite(a, "representation");
  Vector residual = softmax(head.logits(a));
  residual(static_cast<Eigen::Index>(y)) -= 1.0;
  return head.weight.transpose() * residual;
}

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 128;
  double lr = 0.01;
  std::size_t lr_halving_period = 25;
  std::uint64_t seed = 0;
};

inline FloatVector image_vector(const Image& image) {
  return Eigen::Map<const FloatVector>(image.pixels.data(), static_cast<Eigen::Index>(image.pixels.size()));
}

class FrozenClassifier {
 public:
  FrozenClassifier() = default;

  FrozenClassifier(std::vector<DenseLayer> feature_layers, DenseLayer head)
      : layers_(std::move(feature_layers)), head_layer_(std::move(head)) {
    if (layers_.empty()) fail(ErrorKind::DimensionMismatch, "classifier needs at least one feature layer");
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto& l = layers_[i];
      if (l.bias.size() != l.weight.rows()) fail(ErrorKind::DimensionMismatch, "layer bias/weight size mismatch");
      if (i > 0 && l.weight.cols() != layers_[i - 1].weight.rows())
        fail(ErrorKind::DimensionMismatch, "layer widths do not chain");
    }
    if (head_layer_.weight.cols() != layers_.back().weight.rows() ||
        head_layer_.bias.size() != head_layer_.weight.rows())
      fail(ErrorKind::DimensionMismatch, "head does not match representation width");
    head_.weight = head_layer_.weight.cast<double>();
    head_.bias = head_layer_.bias.cast<double>();
  }

  std::size_t input_size() const { return static_cast<std::size_t>(layers_.front().weight.cols()); }
  std::size_t width() const { return static_cast<std::size_t>(layers_.back().weight.rows()); }
  std::size_t classes() const { return static_cast<std::size_t>(head_layer_.weight.rows()); }

  const std::vector<DenseLayer>& feature_layers() const { return layers_; }
  const DenseLayer& head_layer() const { return head_layer_; }
  const AffineHead& head() const { return head_; }

  /// g(x): the post-ReLU representation, always >= 0.
  Vector features(const Image& image) const {
    if (image.size() != input_size())
      fail(ErrorKind::DimensionMismatch, "image has " + std::to_string(image.size()) + " values, model expects " +
                                             std::to_string(input_size()));
    FloatVector h = image_vector(image);
    for (const auto& layer : layers_) {
      FloatVector next = layer.weight * h + layer.bias;
      h = next.cwiseMax(0.0f);
    }
    return h.cast<double>();
  }

  Vector head_logits(const Vector& a) const { return head_.logits(a); }

  ClassId predict(const Image& image) const { return static_cast<ClassId>(argmax(head_logits(features(image)))); }

  friend bool operator==(const FrozenClassifier&, const FrozenClassifier&) = default;

 private:
  std::vector<DenseLayer> layers_;
  DenseLayer head_layer_;
  AffineHead head_;
};

namespace detail {

inline DenseLayer glorot_layer(std::size_t in, std::size_t out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
  DenseLayer layer{FloatMatrix(out, in), FloatVector::Zero(static_cast<Eigen::Index>(out))};
  for (Eigen::Index i = 0; i < layer.weight.rows(); ++i)
    for (Eigen::Index j = 0; j < layer.weight.cols(); ++j)
      layer.weight(i, j) = static_cast<float>(rng.uniform(-bound, bound));
  return layer;
}

}  // namespace detail

/// Mini-batch SGD on mean softmax cross-entropy. Batches come from a seeded
/// shuffle per epoch; the learning rate halves every lr_halving_period epochs.
/// `hidden` lists the widths of the feature layers (the last one is p).
inline FrozenClassifier train(const std::vector<Sample>& samples, const TrainConfig& cfg,
                              const std::vector<std::size_t>& hidden, std::uint32_t classes,
                              std::vector<double>* loss_trace = nullptr) {
  if (!(cfg.lr > 0.0) || cfg.epochs < 1 || cfg.batch_size < 1)
    fail(ErrorKind::Config, "train config needs lr > 0, epochs >= 1, batch_size >= 1");
  if (hidden.empty()) fail(ErrorKind::Config, "at least one hidden layer is required");
  if (samples.empty()) fail(ErrorKind::EmptyClass, "no training samples");
  std::vector<std::size_t> per_class(classes, 0);
  for (const auto& s : samples) {
    if (s.label >= classes) fail(ErrorKind::InvalidClass, "label " + std::to_string(s.label) + " >= classes");
    ++per_class[s.label];
  }
  for (std::uint32_t c = 0; c < classes; ++c)
    if (per_class[c] == 0) fail(ErrorKind::EmptyClass, "class " + std::to_string(c) + " has no training samples");

  const std::size_t input = samples.front().image.size();
  for (const auto& s : samples)
    if (s.image.size() != input) fail(ErrorKind::DimensionMismatch, "training images differ in size");

  Rng init_rng(derive_seed(cfg.seed, 0x1417));
  std::vector<DenseLayer> layers;
  std::size_t fan_in = input;
  for (std::size_t w : hidden) {
    layers.push_back(detail::glorot_layer(fan_in, w, init_rng));
    fan_in = w;
  }
  layers.push_back(detail::glorot_layer(fan_in, classes, init_rng));

  const std::size_t n = samples.size();
  FloatMatrix inputs(n, input);
  for (std::size_t i = 0; i < n; ++i) inputs.row(static_cast<Eigen::Index>(i)) = image_vector(samples[i].image);

  Rng shuffle_rng(derive_seed(cfg.seed, 0x5eed));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  const std::size_t depth = layers.size();
  std::vector<FloatMatrix> acts(depth + 1);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto halvings = cfg.lr_halving_period > 0 ? epoch / cfg.lr_halving_period : 0;
    const float lr = static_cast<float>(cfg.lr / std::pow(2.0, static_cast<double>(halvings)));
    shuffle_rng.shuffle(order);
    double epoch_loss = 0.0;

    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t b = std::min(cfg.batch_size, n - start);
      acts[0].resize(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(input));
      for (std::size_t i = 0; i < b; ++i)
        acts[0].row(static_cast<Eigen::Index>(i)) = inputs.row(static_cast<Eigen::Index>(order[start + i]));

      for (std::size_t l = 0; l < depth; ++l) {
        acts[l + 1].noalias() = acts[l] * layers[l].weight.transpose();
        acts[l + 1].rowwise() += layers[l].bias.transpose();
        if (l + 1 < depth) acts[l + 1] = acts[l + 1].cwiseMax(0.0f);
      }

      // delta = (softmax - onehot) / b
      FloatMatrix delta = acts[depth];
      for (Eigen::Index i = 0; i < delta.rows(); ++i) {
        const float m = delta.row(i).maxCoeff();
        delta.row(i) = (delta.row(i).array() - m).exp();
        const float z = delta.row(i).sum();
        const ClassId y = samples[order[start + static_cast<std::size_t>(i)]].label;
        epoch_loss += -std::log(std::max(delta(i, y) / z, 1e-30f));
        delta.row(i) /= z;
        delta(i, y) -= 1.0f;
      }
      delta /= static_cast<float>(b);

      for (std::size_t l = depth; l-- > 0;) {
        FloatMatrix grad_w = delta.transpose() * acts[l];
        FloatVector grad_b = delta.colwise().sum().transpose();
        if (l > 0) {
          FloatMatrix prev = delta * layers[l].weight;
          delta = (acts[l].array() > 0.0f).select(prev, 0.0f);
        }
        layers[l].weight.noalias() -= lr * grad_w;
        layers[l].bias -= lr * grad_b;
      }
    }
    epoch_loss /= static_cast<double>(n);
    if (!std::isfinite(epoch_loss))
      fail(ErrorKind::DivergedLoss, "non-finite training loss at epoch " + std::to_string(epoch));
    if (loss_trace) loss_trace->push_back(epoch_loss);
  }
  for (const auto& l : layers)
    if (!l.weight.allFinite() || !l.bias.allFinite()) fail(ErrorKind::DivergedLoss, "non-finite parameters");

  DenseLayer head = std::move(layers.back());
  layers.pop_back();
  return FrozenClassifier(std::move(layers), std::move(head));
}

/// Checkpoint layout: "MLP1" | u32 layer count | per layer: u32 rows, u32 cols,
/// f32 weights (row-major), f32 biases | optional "META" + u32-length text.
/// The last layer is the head.
inline std::vector<std::uint8_t> encode_checkpoint(const FrozenClassifier& model, std::string_view meta = {}) {
  io::ByteWriter w;
  w.magic("MLP1");
  w.u32(static_cast<std::uint32_t>(model.feature_layers().size() + 1));
  auto put = [&](const DenseLayer& l) {
    w.u32(static_cast<std::uint32_t>(l.weight.rows()));
    w.u32(static_cast<std::uint32_t>(l.weight.cols()));
    for (Eigen::Index i = 0; i < l.weight.rows(); ++i)
      for (Eigen::Index j = 0; j < l.weight.cols(); ++j) w.f32(l.weight(i, j));
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) w.f32(l.bias(i));
  };
  for (const auto& l : model.feature_layers()) put(l);
  put(model.head_layer());
  if (!meta.empty()) {
    w.magic("META");
    w.text(meta);
  }
  return w.bytes();
}

inline FrozenClassifier decode_checkpoint(std::vector<std::uint8_t> bytes, const std::string& source,
                                          std::string* meta = nullptr) {
  io::ByteReader r(std::move(bytes), source);
  r.expect_magic("MLP1");
  const std::uint32_t count = r.u32();
  if (count < 2) fail(ErrorKind::Format, source + ": checkpoint needs at least two layers");
  std::vector<DenseLayer> layers;
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    r.need((static_cast<std::size_t>(rows) * cols + rows) * 4);
    DenseLayer l{FloatMatrix(rows, cols), FloatVector(rows)};
    for (Eigen::Index i = 0; i < l.weight.rows(); ++i)
      for (Eigen::Index j = 0; j < l.weight.cols(); ++j) l.weight(i, j) = r.f32();
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias(i) = r.f32();
    layers.push_back(std::move(l));
  }
  if (r.peek_magic("META")) {
    r.expect_magic("META");
    std::string text = r.text();
    if (meta) *meta = std::move(text);
  }
  if (!r.at_end()) fail(ErrorKind::Format, source + ": trailing bytes after checkpoint");
  DenseLayer head = std::move(layers.back());
  layers.pop_back();
  return FrozenClassifier(std::move(layers), std::move(head));
}

inline void save_checkpoint(const FrozenClassifier& model, const std::filesystem::path& path,
                            std::string_view meta = {}) {
  io::write_file(path, encode_checkpoint(model, meta));
}

inline FrozenClassifier load_checkpoint(const std::filesystem::path& path, std::string* meta = nullptr) {
  return decode_checkpoint(io::read_file(path), path.string(), meta);
}

}  // namespace biasprobe
