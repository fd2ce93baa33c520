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

// Synthetic colored-glyph datasets with a controllable label/color
// correlation, counterfactual recoloring and the crop-and-resize patch
// operator.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "biasprobe/binary_io.hpp"
#include "biasprobe/error.hpp"
#include "biasprobe/rng.hpp"

namespace biasprobe {

using ColorId = std::uint32_t;
using ClassId = std::uint32_t;

/// Recolor target meaning "mid gray", used for counterfactual baselines.
inline constexpr ColorId kNeutral = 0xffffffffu;

struct Rgb {
  float r, g, b;
};

inline constexpr std::array<Rgb, 10> kPalette = {{
    {1.0f, 0.0f, 0.0f},  // red
    {0.0f, 1.0f, 0.0f},  // green
    {0.0f, 0.0f, 1.0f},  // blue
    {1.0f, 1.0f, 0.0f},  // yellow
    {1.0f, 0.0f, 1.0f},  // magenta
    {0.0f, 1.0f, 1.0f},  // cyan
    {1.0f, 0.5f, 0.0f},  // orange
    {0.5f, 0.0f, 1.0f},  // purple
    {0.5f, 1.0f, 0.0f},  // chartreuse
    {0.6f, 0.6f, 0.6f},  // gray
}};

inline constexpr Rgb kNeutralGray{0.5f, 0.5f, 0.5f};

inline Rgb color_rgb(ColorId color) {
  if (color == kNeutral) return kNeutralGray;
  if (color >= kPalette.size()) fail(ErrorKind::InvalidSpec, "color id " + std::to_string(color) + " out of palette");
  return kPalette[color];
}

/// H x W x 3 image, channels interleaved, values in [0, 1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, float fill = 0.0f) : height(h), width(w), pixels(h * w * 3, fill) {}

  float& at(std::size_t row, std::size_t col, std::size_t channel) { return pixels[(row * width + col) * 3 + channel]; }
  float at(std::size_t row, std::size_t col, std::size_t channel) const {
    return pixels[(row * width + col) * 3 + channel];
  }
  std::size_t size() const { return pixels.size(); }

  friend bool operator==(const Image&, const Image&) = default;
};

enum class Split : std::uint8_t { Train, Audit, Test };

constexpr std::string_view to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Audit: return "audit";
    case Split::Test: return "test";
  }
  return "?";
}

struct Sample {
  std::uint32_t id = 0;  ///< index within its split
  Image image;
  /// Grayscale glyph intensity (H x W). Foreground is where this is > 0; kept
  /// so recoloring never has to infer intensity back from RGB.
  std::vector<float> intensity;
  ClassId label = 0;
  std::optional<ColorId> bias_color;
  Split split = Split::Train;

  friend bool operator==(const Sample&, const Sample&) = default;
};

enum class BiasMode : std::uint8_t { Biased, Unbiased, Shifted };

constexpr std::string_view to_string(BiasMode mode) {
  switch (mode) {
    case BiasMode::Biased: return "biased";
    case BiasMode::Unbiased: return "unbiased";
    case BiasMode::Shifted: return "shifted";
  }
  return "?";
}

inline BiasMode parse_bias_mode(std::string_view text) {
  if (text == "biased") return BiasMode::Biased;
  if (text == "unbiased") return BiasMode::Unbiased;
  if (text == "shifted" || text == "shifted_bias" || text == "shifted-bias") return BiasMode::Shifted;
  fail(ErrorKind::Config, "unknown bias mode '" + std::string(text) + "'");
}

/// Per-sample rendering variation.
struct GlyphStyle {
  double point_jitter_px = 1.0;   ///< Gaussian sigma on each stroke control point
  double shift_px = 1.0;          ///< Gaussian sigma on the whole glyph position
  double intensity_jitter = 0.1;  ///< peak intensity is 0.9 +/- this
  double rotation_deg = 12.0;     ///< uniform +/- rotation
  double scale_jitter = 0.12;     ///< uniform +/- relative size
  double min_thickness = 1.4;
  double max_thickness = 2.6;
};

struct DatasetSpec {
  std::size_t n_train = 10000;
  std::size_t n_audit = 2000;
  std::size_t n_test = 5000;
  std::uint32_t classes = 10;
  std::size_t height = 28;
  std::size_t width = 28;
  double rho = 0.95;
  BiasMode bias_mode = BiasMode::Biased;  ///< train split
  BiasMode audit_mode = BiasMode::Unbiased;
  BiasMode test_mode = BiasMode::Unbiased;
  std::uint64_t seed = 0;
  GlyphStyle style;
  /// Optional IDX digit files; when both are set, glyphs come from them.
  std::string idx_images;
  std::string idx_labels;
};

inline void validate(const DatasetSpec& spec) {
  if (spec.classes < 1 || spec.classes > kPalette.size())
    fail(ErrorKind::InvalidSpec, "classes must be in [1, " + std::to_string(kPalette.size()) + "]");
  if (!(spec.rho >= 0.0 && spec.rho <= 1.0)) fail(ErrorKind::InvalidSpec, "rho must lie in [0, 1]");
  if (spec.height < 4 || spec.width < 4) fail(ErrorKind::InvalidSpec, "images must be at least 4x4");
  if (spec.style.min_thickness <= 0.0 || spec.style.max_thickness < spec.style.min_thickness)
    fail(ErrorKind::InvalidSpec, "invalid stroke thickness range");
  if (spec.idx_images.empty() != spec.idx_labels.empty())
    fail(ErrorKind::InvalidSpec, "idx_images and idx_labels must be given together");
}

/// Color that `mode` associates with `label`. Unbiased mode has no assignment
/// and reports the training (biased) one.
inline ColorId assignment(BiasMode mode, ClassId label, std::uint32_t classes) {
  if (mode == BiasMode::Shifted) return (label + 1) % classes;
  return label;
}

inline ColorId draw_color(BiasMode mode, double rho, ClassId label, std::uint32_t classes, Rng& rng) {
  if (mode == BiasMode::Unbiased || classes == 1) return static_cast<ColorId>(rng.below(classes));
  const ColorId assigned = assignment(mode, label, classes);
  if (rng.uniform() < rho) return assigned;
  auto other = static_cast<ColorId>(rng.below(classes - 1));
  if (other >= assigned) ++other;
  return other;
}

namespace detail {

struct Point {
  double x, y;
};
using Polyline = std::vector<Point>;

inline Polyline arc(double cx, double cy, double rx, double ry, double from_deg, double to_deg, int segments = 12) {
  Polyline line;
  for (int i = 0; i <= segments; ++i) {
    const double t = (from_deg + (to_deg - from_deg) * i / segments) * std::numbers::pi / 180.0;
    line.push_back({cx + rx * std::cos(t), cy + ry * std::sin(t)});
  }
  return line;
}

inline Polyline join(Polyline a, const Polyline& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

/// Stroke skeletons in a unit box (x right, y down), one family per class.
inline std::vector<Polyline> glyph_strokes(ClassId label) {
  switch (label % 10) {
    case 0: return {arc(0.5, 0.5, 0.3, 0.45, 0, 360, 20)};
    case 1: return {{{0.35, 0.2}, {0.5, 0.05}, {0.5, 0.95}}};
    case 2: return {join(arc(0.5, 0.3, 0.3, 0.25, 180, 390), {{0.2, 0.95}, {0.82, 0.95}})};
    case 3: return {arc(0.5, 0.28, 0.28, 0.23, 200, 450), arc(0.5, 0.72, 0.3, 0.23, -90, 160)};
    case 4: return {{{0.65, 0.95}, {0.65, 0.05}, {0.15, 0.65}, {0.85, 0.65}}};
    case 5: return {join({{0.8, 0.05}, {0.25, 0.05}, {0.22, 0.45}}, arc(0.48, 0.68, 0.3, 0.27, -140, 150))};
    case 6: return {{{0.7, 0.05}, {0.35, 0.35}, {0.22, 0.7}}, arc(0.5, 0.7, 0.28, 0.25, 0, 360, 16)};
    case 7: return {{{0.15, 0.05}, {0.85, 0.05}, {0.4, 0.95}}};
    case 8: return {arc(0.5, 0.28, 0.25, 0.22, 0, 360, 16), arc(0.5, 0.72, 0.3, 0.24, 0, 360, 16)};
    default: return {arc(0.5, 0.3, 0.28, 0.25, 0, 360, 16), {{0.78, 0.3}, {0.6, 0.95}}};
  }
}

inline double segment_distance(Point p, Point a, Point b) {
  const double dx = b.x - a.x;
  const double dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0.0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = p.x - (a.x + t * dx);
  const double ey = p.y - (a.y + t * dy);
  return std::sqrt(ex * ex + ey * ey);
}

}  // namespace detail

/// Renders the grayscale glyph of `label` with per-sample jitter from `rng`.
inline std::vector<float> render_glyph(ClassId label, std::size_t height, std::size_t width, const GlyphStyle& style,
                                       Rng& rng) {
  const double box = 0.71 * static_cast<double>(std::min(height, width));
  const double scale = box * (1.0 + rng.uniform(-style.scale_jitter, style.scale_jitter));
  const double angle = rng.uniform(-style.rotation_deg, style.rotation_deg) * std::numbers::pi / 180.0;
  const double cx = 0.5 * static_cast<double>(width) + rng.normal(0.0, style.shift_px);
  const double cy = 0.5 * static_cast<double>(height) + rng.normal(0.0, style.shift_px);
  const double half_width = 0.5 * rng.uniform(style.min_thickness, style.max_thickness);
  const double peak = std::clamp(0.9 + rng.uniform(-style.intensity_jitter, style.intensity_jitter), 0.0, 1.0);
  const double ca = std::cos(angle);
  const double sa = std::sin(angle);

  std::vector<detail::Polyline> strokes = detail::glyph_strokes(label);
  for (auto& line : strokes) {
    for (auto& pt : line) {
      const double ux = (pt.x - 0.5) * scale;
      const double uy = (pt.y - 0.5) * scale;
      pt.x = cx + ca * ux - sa * uy + rng.normal(0.0, style.point_jitter_px);
      pt.y = cy + sa * ux + ca * uy + rng.normal(0.0, style.point_jitter_px);
    }
  }

  std::vector<float> out(height * width, 0.0f);
  for (std::size_t row = 0; row < height; ++row) {
    for (std::size_t col = 0; col < width; ++col) {
      const detail::Point p{static_cast<double>(col) + 0.5, static_cast<double>(row) + 0.5};
      double d = 1e9;
      for (const auto& line : strokes)
        for (std::size_t i = 1; i < line.size(); ++i) d = std::min(d, detail::segment_distance(p, line[i - 1], line[i]));
      const double coverage = std::clamp(half_width + 0.5 - d, 0.0, 1.0);
      out[row * width + col] = static_cast<float>(coverage * peak);
    }
  }
  return out;
}

/// Paints `intensity` with `color`: channel = intensity * rgb.
inline Image colorize(const std::vector<float>& intensity, std::size_t height, std::size_t width, ColorId color) {
  const Rgb rgb = color_rgb(color);
  Image img(height, width);
  for (std::size_t i = 0; i < height * width; ++i) {
    img.pixels[3 * i + 0] = intensity[i] * rgb.r;
    img.pixels[3 * i + 1] = intensity[i] * rgb.g;
    img.pixels[3 * i + 2] = intensity[i] * rgb.b;
  }
  return img;
}

/// Counterfactual copy of `sample` with its foreground painted `color`
/// (or mid gray for kNeutral). Background and intensity are untouched.
inline Sample recolor(const Sample& sample, ColorId color) {
  Sample out = sample;
  out.image = colorize(sample.intensity, sample.image.height, sample.image.width, color);
  out.bias_color = color == kNeutral ? std::nullopt : std::optional<ColorId>(color);
  return out;
}

struct IdxDigits {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::vector<float>> images;
  std::vector<ClassId> labels;
};

/// Reads big-endian IDX3 images and IDX1 labels (the classic digit format).
inline IdxDigits read_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  auto be32 = [](const std::vector<std::uint8_t>& b, std::size_t off) {
    if (off + 4 > b.size()) fail(ErrorKind::Format, "truncated IDX header");
    return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
           std::uint32_t{b[off + 3]};
  };
  const auto img = io::read_file(images_path);
  const auto lab = io::read_file(labels_path);
  if (be32(img, 0) != 0x00000803u) fail(ErrorKind::Format, images_path.string() + ": not an IDX3 ubyte file");
  if (be32(lab, 0) != 0x00000801u) fail(ErrorKind::Format, labels_path.string() + ": not an IDX1 ubyte file");
  const std::size_t n = be32(img, 4);
  IdxDigits out;
  out.height = be32(img, 8);
  out.width = be32(img, 12);
  if (be32(lab, 4) != n) fail(ErrorKind::Format, "IDX image and label counts differ");
  const std::size_t px = out.height * out.width;
  if (img.size() < 16 + n * px || lab.size() < 8 + n) fail(ErrorKind::Format, "truncated IDX payload");
  out.images.resize(n, std::vector<float>(px));
  out.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < px; ++j) out.images[i][j] = static_cast<float>(img[16 + i * px + j]) / 255.0f;
    out.labels[i] = lab[8 + i];
  }
  return out;
}

struct Dataset {
  std::vector<Sample> train;
  std::vector<Sample> audit;
  std::vector<Sample> test;

  const std::vector<Sample>& split(Split s) const {
    switch (s) {
      case Split::Train: return train;
      case Split::Audit: return audit;
      case Split::Test: return test;
    }
    return train;
  }
};

/// Builds the train/audit/test splits. Every sample draws from its own stream
/// derived from (seed, split, index), so the result does not depend on
/// generation order.
inline Dataset generate(const DatasetSpec& spec) {
  validate(spec);
  std::optional<IdxDigits> idx;
  if (!spec.idx_images.empty()) {
    idx = read_idx(spec.idx_images, spec.idx_labels);
    if (idx->height != spec.height || idx->width != spec.width)
      fail(ErrorKind::InvalidSpec, "IDX image size does not match the dataset spec");
    if (idx->images.size() < spec.n_train + spec.n_audit + spec.n_test)
      fail(ErrorKind::InvalidSpec, "IDX file holds fewer images than the requested splits");
  }

  Dataset out;
  std::size_t idx_offset = 0;
  auto build = [&](Split split, std::size_t count, BiasMode mode, std::vector<Sample>& dst) {
    dst.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      Rng rng(derive_seed(spec.seed, (static_cast<std::uint64_t>(split) << 40) | i));
      Sample s;
      s.id = static_cast<std::uint32_t>(i);
      s.split = split;
      if (idx) {
        s.label = idx->labels[idx_offset + i] % spec.classes;
        s.intensity = idx->images[idx_offset + i];
      } else {
        s.label = static_cast<ClassId>(i % spec.classes);
        s.intensity = render_glyph(s.label, spec.height, spec.width, spec.style, rng);
      }
      const ColorId color = draw_color(mode, spec.rho, s.label, spec.classes, rng);
      s.bias_color = color;
      s.image = colorize(s.intensity, spec.height, spec.width, color);
      dst.push_back(std::move(s));
    }
    idx_offset += count;
  };
  build(Split::Train, spec.n_train, spec.bias_mode, out.train);
  build(Split::Audit, spec.n_audit, spec.audit_mode, out.audit);
  build(Split::Test, spec.n_test, spec.test_mode, out.test);
  return out;
}

/// Top-left corners of every s x s window on the stride grid.
struct PatchGrid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t size = 0;
  std::size_t stride = 1;

  std::size_t count() const { return rows * cols; }
};

inline std::size_t default_stride(std::size_t patch_size) { return std::max<std::size_t>(1, patch_size / 2); }

inline PatchGrid patch_grid(std::size_t height, std::size_t width, std::size_t s, std::size_t stride) {
  if (s < 1 || s > std::min(height, width))
    fail(ErrorKind::PatchTooLarge, "patch size " + std::to_string(s) + " does not fit a " + std::to_string(height) +
                                       "x" + std::to_string(width) + " image");
  if (stride < 1) fail(ErrorKind::InvalidSpec, "stride must be >= 1");
  return {(height - s) / stride + 1, (width - s) / stride + 1, s, stride};
}

/// Crops the s x s window at grid cell (grid_row, grid_col) and resizes it
/// back to the full image size with corner-aligned bilinear sampling.
inline Image crop_resize(const Image& image, const PatchGrid& grid, std::size_t grid_row, std::size_t grid_col) {
  const std::size_t H = image.height;
  const std::size_t W = image.width;
  const double y0 = static_cast<double>(grid_row * grid.stride);
  const double x0 = static_cast<double>(grid_col * grid.stride);
  const double sy = H > 1 ? static_cast<double>(grid.size - 1) / static_cast<double>(H - 1) : 0.0;
  const double sx = W > 1 ? static_cast<double>(grid.size - 1) / static_cast<double>(W - 1) : 0.0;
  Image out(H, W);
  for (std::size_t i = 0; i < H; ++i) {
    const double fy = y0 + sy * static_cast<double>(i);
    const auto iy = static_cast<std::size_t>(std::floor(fy));
    const std::size_t iy1 = std::min(iy + 1, H - 1);
    const double ty = fy - static_cast<double>(iy);
    for (std::size_t j = 0; j < W; ++j) {
      const double fx = x0 + sx * static_cast<double>(j);
      const auto ix = static_cast<std::size_t>(std::floor(fx));
      const std::size_t ix1 = std::min(ix + 1, W - 1);
      const double tx = fx - static_cast<double>(ix);
      for (std::size_t c = 0; c < 3; ++c) {
        const double top = (1.0 - tx) * image.at(iy, ix, c) + tx * image.at(iy, ix1, c);
        const double bottom = (1.0 - tx) * image.at(iy1, ix, c) + tx * image.at(iy1, ix1, c);
        out.at(i, j, c) = static_cast<float>(std::clamp((1.0 - ty) * top + ty * bottom, 0.0, 1.0));
      }
    }
  }
  return out;
}

/// All patches in row-major grid order.
inline std::vector<Image> extract_patches(const Image& image, std::size_t s, std::size_t stride) {
  const PatchGrid grid = patch_grid(image.height, image.width, s, stride);
  std::vector<Image> patches;
  patches.reserve(grid.count());
  for (std::size_t r = 0; r < grid.rows; ++r)
    for (std::size_t c = 0; c < grid.cols; ++c) patches.push_back(crop_resize(image, grid, r, c));
  return patches;
}

/// Binary PPM (P6). The optional comment lands in the header.
inline void write_ppm(const std::filesystem::path& path, const Image& image, std::string_view comment = {}) {
  std::ostringstream header;
  header << "P6\n";
  if (!comment.empty()) header << "# " << comment << "\n";
  header << image.width << " " << image.height << "\n255\n";
  const std::string h = header.str();
  std::vector<std::uint8_t> bytes(h.begin(), h.end());
  for (float v : image.pixels)
    bytes.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)));
  io::write_file(path, bytes);
}

/// Writes every split as PPM files plus manifest.csv
/// (file,label,bias_color,split).
inline void export_dataset(const Dataset& data, const std::filesystem::path& dir, std::string_view tag = {}) {
  std::ostringstream manifest;
  if (!tag.empty()) manifest << "# " << tag << "\n";
  manifest << "file,label,bias_color,split\n";
  for (Split split : {Split::Train, Split::Audit, Split::Test}) {
    for (const Sample& s : data.split(split)) {
      const std::string name = std::string(to_string(split)) + "/" + std::to_string(s.id) + ".ppm";
      write_ppm(dir / name, s.image, tag);
      manifest << name << "," << s.label << ",";
      if (s.bias_color) manifest << *s.bias_color;
      manifest << "," << to_string(split) << "\n";
    }
  }
  io::write_text(dir / "manifest.csv", manifest.str());
}

}  // namespace biasprobe
