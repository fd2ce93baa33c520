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

// Class-conditional concept banks: NMF of patch activations for the inputs a
// model predicts as one class, coefficient projection onto a bank, and merging
// class banks into one model-wide bank.

#include <algorithm>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "biasprobe/binary_io.hpp"
#include "biasprobe/data.hpp"
#include "biasprobe/error.hpp"
#include "biasprobe/linalg.hpp"
#include "biasprobe/model.hpp"
#include "biasprobe/nmf.hpp"
#include "biasprobe/nnls.hpp"
#include "biasprobe/parallel.hpp"
#include "biasprobe/rng.hpp"

namespace biasprobe {

/// Identifies concept `index` of the bank for `class_id`.
struct ConceptKey {
  ClassId class_id = 0;
  std::uint32_t index = 0;

  friend auto operator<=>(const ConceptKey&, const ConceptKey&) = default;
};

/// Where a patch came from: a grid cell of one audit sample.
struct PatchRef {
  std::uint32_t sample_id = 0;
  std::uint32_t grid_row = 0;
  std::uint32_t grid_col = 0;
  float coefficient = 0.0f;

  friend bool operator==(const PatchRef&, const PatchRef&) = default;
};

struct PatchOptions {
  std::size_t patch_size = 6;
  std::size_t stride = 0;  ///< 0 selects max(1, patch_size / 2)
  std::size_t cap = 5000;  ///< per-class patch budget
  std::uint64_t seed = 0;  ///< subsampling stream when the cap binds

  std::size_t effective_stride() const { return stride == 0 ? default_stride(patch_size) : stride; }
};

struct ClassPatches {
  ClassId class_id = 0;
  Matrix activations;          ///< one row per patch, g(pi_s(x))
  std::vector<PatchRef> refs;  ///< aligned with rows; coefficient unused
  std::size_t patch_size = 0;
  std::size_t stride = 0;
};

/// Predictions of `model` for every sample, in order.
inline std::vector<ClassId> predict_all(const FrozenClassifier& model, const std::vector<Sample>& samples) {
  std::vector<ClassId> out(samples.size());
  parallel_for(samples.size(), [&](std::size_t i) { out[i] = model.predict(samples[i].image); });
  return out;
}

/// Representations g(x) of every sample, one row each.
inline Matrix features_all(const FrozenClassifier& model, const std::vector<Sample>& samples) {
  Matrix out(static_cast<Eigen::Index>(samples.size()), static_cast<Eigen::Index>(model.width()));
  parallel_for(samples.size(), [&](std::size_t i) {
    out.row(static_cast<Eigen::Index>(i)) = model.features(samples[i].image).transpose();
  });
  return out;
}

/// Patch activations for the samples predicted as `y`. `predictions[i]` must
/// be the model's prediction for `audit[i]`. When the candidate patch count
/// exceeds the cap, a seeded uniform subset (kept in enumeration order) is used.
inline ClassPatches collect_class_activations(const FrozenClassifier& model, const std::vector<Sample>& audit,
                                              std::span<const ClassId> predictions, ClassId y,
                                              const PatchOptions& options) {
  if (audit.empty()) fail(ErrorKind::NoPredictedSamples, "audit set is empty");
  if (predictions.size() != audit.size())
    fail(ErrorKind::DimensionMismatch, "predictions and audit set differ in length");

  std::vector<std::size_t> members;
  for (std::size_t i = 0; i < audit.size(); ++i)
    if (predictions[i] == y) members.push_back(i);
  if (members.empty()) fail(ErrorKind::NoPredictedSamples, "no audit sample is predicted as class " + std::to_string(y));

  const Image& first = audit[members.front()].image;
  const PatchGrid grid = patch_grid(first.height, first.width, options.patch_size, options.effective_stride());

  std::vector<PatchRef> candidates;
  candidates.reserve(members.size() * grid.count());
  for (auto i : members)
    for (std::size_t r = 0; r < grid.rows; ++r)
      for (std::size_t c = 0; c < grid.cols; ++c)
        candidates.push_back({audit[i].id, static_cast<std::uint32_t>(r), static_cast<std::uint32_t>(c), 0.0f});

  std::vector<std::size_t> chosen_members;  // position in `members` per chosen candidate
  if (options.cap > 0 && candidates.size() > options.cap) {
    Rng rng(derive_seed(options.seed, 0xca9000u + y));
    const auto keep = rng.sample_without_replacement(candidates.size(), options.cap);
    std::vector<PatchRef> subset;
    subset.reserve(keep.size());
    for (auto k : keep) {
      subset.push_back(candidates[k]);
      chosen_members.push_back(k / grid.count());
    }
    candidates = std::move(subset);
  } else {
    for (std::size_t k = 0; k < candidates.size(); ++k) chosen_members.push_back(k / grid.count());
  }

  ClassPatches out;
  out.class_id = y;
  out.patch_size = grid.size;
  out.stride = grid.stride;
  out.activations.resize(static_cast<Eigen::Index>(candidates.size()), static_cast<Eigen::Index>(model.width()));
  parallel_for(candidates.size(), [&](std::size_t k) {
    const Sample& s = audit[members[chosen_members[k]]];
    const Image patch = crop_resize(s.image, grid, candidates[k].grid_row, candidates[k].grid_col);
    out.activations.row(static_cast<Eigen::Index>(k)) = model.features(patch).transpose();
  });
  out.refs = std::move(candidates);
  return out;
}

inline ClassPatches collect_class_activations(const FrozenClassifier& model, const std::vector<Sample>& audit,
                                              ClassId y, const PatchOptions& options) {
  const auto predictions = predict_all(model, audit);
  return collect_class_activations(model, audit, predictions, y, options);
}

struct ConceptBank {
  ClassId class_id = 0;
  Matrix W;  ///< p x r, one concept per column
  /// Per concept, the most strongly coding patches by descending coefficient.
  std::vector<std::vector<PatchRef>> patch_refs;
  double nmf_objective = 0.0;
  std::uint64_t seed = 0;
  std::size_t patch_size = 0;
  std::size_t stride = 0;

  Eigen::Index width() const { return W.rows(); }
  Eigen::Index rank() const { return W.cols(); }
};

struct BankOptions {
  Eigen::Index rank = 8;
  NmfOptions nmf;
  std::size_t top_patches = 100;
};

/// Factorizes A_y ~= U_y W_y^T and records each concept's top patches.
inline ConceptBank fit_class_bank(const ClassPatches& patches, const BankOptions& options) {
  const NmfResult res = nmf(patches.activations, options.rank, options.nmf);
  ConceptBank bank;
  bank.class_id = patches.class_id;
  bank.W = res.W;
  bank.nmf_objective = res.objective();
  bank.seed = options.nmf.seed;
  bank.patch_size = patches.patch_size;
  bank.stride = patches.stride;
  bank.patch_refs.resize(static_cast<std::size_t>(options.rank));
  for (Eigen::Index k = 0; k < options.rank; ++k) {
    std::vector<Eigen::Index> rows;
    for (Eigen::Index i = 0; i < res.U.rows(); ++i)
      if (res.U(i, k) > 0.0) rows.push_back(i);
    std::stable_sort(rows.begin(), rows.end(), [&](Eigen::Index a, Eigen::Index b) { return res.U(a, k) > res.U(b, k); });
    if (rows.size() > options.top_patches) rows.resize(options.top_patches);
    auto& refs = bank.patch_refs[static_cast<std::size_t>(k)];
    for (auto i : rows) {
      PatchRef ref = patches.refs.empty() ? PatchRef{static_cast<std::uint32_t>(i), 0, 0, 0.0f}
                                          : patches.refs[static_cast<std::size_t>(i)];
      ref.coefficient = static_cast<float>(res.U(i, k));
      refs.push_back(ref);
    }
  }
  return bank;
}

/// Convenience overload for bare activation matrices (no patch provenance).
inline ConceptBank fit_class_bank(const Matrix& activations, ClassId class_id, const BankOptions& options) {
  ClassPatches patches;
  patches.class_id = class_id;
  patches.activations = activations;
  return fit_class_bank(patches, options);
}

/// Concept coefficients of `a` on bank W: argmin_{u >= 0} ||a - W u||.
inline Vector project(const Matrix& W, const Vector& a) { return GramNnls(W).solve(a); }

inline bool is_dead_concept(const Matrix& W, Eigen::Index k) { return W.col(k).cwiseAbs().maxCoeff() == 0.0; }

/// Model-wide bank built from all class banks.
struct MergedBank {
  Matrix W;  ///< p x m
  std::vector<std::vector<ConceptKey>> clusters;
  std::vector<bool> bias_flags;
  /// Per merged concept, the classes whose member concepts scored above tau.
  std::vector<std::vector<ClassId>> flagged_classes;

  std::size_t size() const { return clusters.size(); }

  std::vector<std::uint32_t> bias_set() const {
    std::vector<std::uint32_t> out;
    for (std::size_t k = 0; k < bias_flags.size(); ++k)
      if (bias_flags[k]) out.push_back(static_cast<std::uint32_t>(k));
    return out;
  }
};

/// Bias score per scored concept; unscored concepts are simply absent.
using ScoreLookup = std::map<ConceptKey, double>;

namespace detail {

struct DisjointSets {
  std::vector<std::size_t> parent;
  explicit DisjointSets(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

}  // namespace detail

/// Single-linkage merge of all non-dead concepts: concepts whose cosine
/// exceeds `cos_threshold` end in one cluster. A cluster's vector is the mean
/// of its L2-normalized members scaled to their mean norm. Linking repeats on
/// the cluster vectors until no two of them exceed the threshold.
/// A merged concept is flagged as bias iff any member scored above `tau`.
inline MergedBank merge_banks(const std::vector<ConceptBank>& banks, double cos_threshold = 0.95,
                              const ScoreLookup* scores = nullptr, double tau = 0.55) {
  if (banks.empty()) return {};
  const Eigen::Index p = banks.front().width();
  for (const auto& b : banks)
    if (b.width() != p) fail(ErrorKind::IncompatibleWidth, "concept banks have different widths");

  std::vector<ConceptKey> keys;
  std::vector<Vector> vecs;
  for (const auto& b : banks) {
    for (Eigen::Index k = 0; k < b.rank(); ++k) {
      if (is_dead_concept(b.W, k)) continue;
      keys.push_back({b.class_id, static_cast<std::uint32_t>(k)});
      vecs.push_back(b.W.col(k));
    }
  }
  const std::size_t n = keys.size();
  detail::DisjointSets sets(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (cosine_similarity(vecs[i], vecs[j]) > cos_threshold) sets.unite(i, j);

  auto build = [&](std::vector<std::vector<std::size_t>>& members, std::vector<Vector>& reps) {
    members.clear();
    reps.clear();
    std::map<std::size_t, std::size_t> slot;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t root = sets.find(i);
      auto [it, inserted] = slot.try_emplace(root, members.size());
      if (inserted) members.emplace_back();
      members[it->second].push_back(i);
    }
    for (const auto& m : members) {
      Vector direction = Vector::Zero(p);
      double mean_norm = 0.0;
      for (auto i : m) {
        const double nv = vecs[i].norm();
        direction += vecs[i] / nv;
        mean_norm += nv;
      }
      direction /= static_cast<double>(m.size());
      mean_norm /= static_cast<double>(m.size());
      const double dn = direction.norm();
      reps.push_back(dn > 0.0 ? Vector(direction * (mean_norm / dn)) : direction);
    }
  };

  std::vector<std::vector<std::size_t>> members;
  std::vector<Vector> reps;
  build(members, reps);
  for (bool changed = true; changed;) {
    changed = false;
    for (std::size_t a = 0; a < reps.size() && !changed; ++a)
      for (std::size_t b = a + 1; b < reps.size() && !changed; ++b)
        if (cosine_similarity(reps[a], reps[b]) > cos_threshold) {
          sets.unite(members[a].front(), members[b].front());
          changed = true;
        }
    if (changed) build(members, reps);
  }

  MergedBank out;
  out.W.resize(p, static_cast<Eigen::Index>(members.size()));
  for (std::size_t k = 0; k < members.size(); ++k) {
    out.W.col(static_cast<Eigen::Index>(k)) = reps[k];
    std::vector<ConceptKey> cluster;
    std::vector<ClassId> flagged;
    for (auto i : members[k]) {
      cluster.push_back(keys[i]);
      if (scores) {
        const auto it = scores->find(keys[i]);
        if (it != scores->end() && it->second > tau) flagged.push_back(keys[i].class_id);
      }
    }
    std::sort(flagged.begin(), flagged.end());
    flagged.erase(std::unique(flagged.begin(), flagged.end()), flagged.end());
    out.bias_flags.push_back(!flagged.empty());
    out.flagged_classes.push_back(std::move(flagged));
    out.clusters.push_back(std::move(cluster));
  }
  return out;
}

// --- files -----------------------------------------------------------------

/// Class bank file: "CBK1" | u32 class_id | u32 p | u32 r | f32 W column-major |
/// per concept: u32 ref count + refs (u32 sample, u32 grid row, u32 grid col,
/// f32 coefficient) | "META" f64 nmf objective, u64 seed, u32 patch size,
/// u32 stride, text.
inline std::vector<std::uint8_t> encode_bank(const ConceptBank& bank, std::string_view meta = {}) {
  io::ByteWriter w;
  w.magic("CBK1");
  w.u32(bank.class_id);
  w.u32(static_cast<std::uint32_t>(bank.W.rows()));
  w.u32(static_cast<std::uint32_t>(bank.W.cols()));
  for (Eigen::Index k = 0; k < bank.W.cols(); ++k)
    for (Eigen::Index i = 0; i < bank.W.rows(); ++i) w.f32(static_cast<float>(bank.W(i, k)));
  for (Eigen::Index k = 0; k < bank.W.cols(); ++k) {
    const auto& refs = static_cast<std::size_t>(k) < bank.patch_refs.size() ? bank.patch_refs[static_cast<std::size_t>(k)]
                                                                             : std::vector<PatchRef>{};
    w.u32(static_cast<std::uint32_t>(refs.size()));
    for (const auto& ref : refs) {
      w.u32(ref.sample_id);
      w.u32(ref.grid_row);
      w.u32(ref.grid_col);
      w.f32(ref.coefficient);
    }
  }
  w.magic("META");
  w.f64(bank.nmf_objective);
  w.u64(bank.seed);
  w.u32(static_cast<std::uint32_t>(bank.patch_size));
  w.u32(static_cast<std::uint32_t>(bank.stride));
  w.text(meta);
  return w.bytes();
}

inline ConceptBank decode_bank(std::vector<std::uint8_t> bytes, const std::string& source, std::string* meta = nullptr) {
  io::ByteReader r(std::move(bytes), source);
  r.expect_magic("CBK1");
  ConceptBank bank;
  bank.class_id = r.u32();
  const std::uint32_t p = r.u32();
  const std::uint32_t rank = r.u32();
  r.need(static_cast<std::size_t>(p) * rank * 4);
  bank.W.resize(p, rank);
  for (Eigen::Index k = 0; k < bank.W.cols(); ++k)
    for (Eigen::Index i = 0; i < bank.W.rows(); ++i) bank.W(i, k) = r.f32();
  bank.patch_refs.resize(rank);
  for (auto& refs : bank.patch_refs) {
    const std::uint32_t count = r.u32();
    r.need(static_cast<std::size_t>(count) * 16);
    refs.resize(count);
    for (auto& ref : refs) {
      ref.sample_id = r.u32();
      ref.grid_row = r.u32();
      ref.grid_col = r.u32();
      ref.coefficient = r.f32();
    }
  }
  if (r.peek_magic("META")) {
    r.expect_magic("META");
    bank.nmf_objective = r.f64();
    bank.seed = r.u64();
    bank.patch_size = r.u32();
    bank.stride = r.u32();
    std::string text = r.text();
    if (meta) *meta = std::move(text);
  }
  if (!r.at_end()) fail(ErrorKind::Format, source + ": trailing bytes after bank");
  if ((bank.W.array() < 0.0f).any() || !bank.W.allFinite())
    fail(ErrorKind::Integrity, source + ": bank has negative or non-finite entries");
  return bank;
}

/// Merged bank file: "CBM1" | u32 p | u32 m | f32 W column-major | per concept:
/// u32 member count + (u32 class, u32 index) pairs, u8 bias flag, u32 flagged
/// class count + u32 classes | "META" text.
inline std::vector<std::uint8_t> encode_merged(const MergedBank& merged, std::string_view meta = {}) {
  io::ByteWriter w;
  w.magic("CBM1");
  w.u32(static_cast<std::uint32_t>(merged.W.rows()));
  w.u32(static_cast<std::uint32_t>(merged.W.cols()));
  for (Eigen::Index k = 0; k < merged.W.cols(); ++k)
    for (Eigen::Index i = 0; i < merged.W.rows(); ++i) w.f32(static_cast<float>(merged.W(i, k)));
  for (std::size_t k = 0; k < merged.clusters.size(); ++k) {
    w.u32(static_cast<std::uint32_t>(merged.clusters[k].size()));
    for (const auto& key : merged.clusters[k]) {
      w.u32(key.class_id);
      w.u32(key.index);
    }
    w.u8(merged.bias_flags[k] ? 1 : 0);
    w.u32(static_cast<std::uint32_t>(merged.flagged_classes[k].size()));
    for (auto c : merged.flagged_classes[k]) w.u32(c);
  }
  w.magic("META");
  w.text(meta);
  return w.bytes();
}

inline MergedBank decode_merged(std::vector<std::uint8_t> bytes, const std::string& source,
                                std::string* meta = nullptr) {
  io::ByteReader r(std::move(bytes), source);
  r.expect_magic("CBM1");
  MergedBank merged;
  const std::uint32_t p = r.u32();
  const std::uint32_t m = r.u32();
  r.need(static_cast<std::size_t>(p) * m * 4);
  merged.W.resize(p, m);
  for (Eigen::Index k = 0; k < merged.W.cols(); ++k)
    for (Eigen::Index i = 0; i < merged.W.rows(); ++i) merged.W(i, k) = r.f32();
  for (std::uint32_t k = 0; k < m; ++k) {
    const std::uint32_t count = r.u32();
    r.need(static_cast<std::size_t>(count) * 8);
    std::vector<ConceptKey> cluster(count);
    for (auto& key : cluster) {
      key.class_id = r.u32();
      key.index = r.u32();
    }
    merged.clusters.push_back(std::move(cluster));
    merged.bias_flags.push_back(r.u8() != 0);
    const std::uint32_t nf = r.u32();
    r.need(static_cast<std::size_t>(nf) * 4);
    std::vector<ClassId> flagged(nf);
    for (auto& c : flagged) c = r.u32();
    merged.flagged_classes.push_back(std::move(flagged));
  }
  if (r.peek_magic("META")) {
    r.expect_magic("META");
    std::string text = r.text();
    if (meta) *meta = std::move(text);
  }
  if (!r.at_end()) fail(ErrorKind::Format, source + ": trailing bytes after merged bank");
  return merged;
}

/// Writes each concept's top patches as concept{k}_rank{i}.ppm, re-cropping
/// them from the audit images the bank was fitted on.
inline void write_gallery(const ConceptBank& bank, const std::vector<Sample>& audit, const std::filesystem::path& dir,
                          std::size_t top_k, std::string_view comment = {}) {
  if (bank.patch_size == 0) return;
  std::map<std::uint32_t, const Sample*> by_id;
  for (const auto& s : audit) by_id[s.id] = &s;
  for (std::size_t k = 0; k < bank.patch_refs.size(); ++k) {
    const auto& refs = bank.patch_refs[k];
    for (std::size_t i = 0; i < refs.size() && i < top_k; ++i) {
      const auto it = by_id.find(refs[i].sample_id);
      if (it == by_id.end()) continue;
      const Image& img = it->second->image;
      const PatchGrid grid = patch_grid(img.height, img.width, bank.patch_size, bank.stride);
      const Image patch = crop_resize(img, grid, refs[i].grid_row, refs[i].grid_col);
      write_ppm(dir / ("concept" + std::to_string(k) + "_rank" + std::to_string(i) + ".ppm"), patch, comment);
    }
  }
}

}  // namespace biasprobe
