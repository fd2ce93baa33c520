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

// Command implementations behind the CLI. Each command reads the artifacts of
// the previous stage from the run directory and writes its own:
//
//   gen-data   data/manifest.csv, data/{train,audit,test}/*.ppm
//   train      model.mlp, train_loss.csv
//   concepts   concepts/class{y}.cbk, concepts/class{y}/concept{k}_rank{i}.ppm
//   score      scores.csv, audit.json, alignment.csv, merged.cbm
//   mitigate   mitigation.csv, eval.json, correlation.csv, correlation.json
//   report     report.json
//
// The synthetic dataset is regenerated from the config where needed. Every
// artifact records the config hash, and loading an artifact written under a
// different hash fails with SchemaMismatch.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "biasprobe/binary_io.hpp"
#include "biasprobe/bundle.hpp"
#include "biasprobe/concepts.hpp"
#include "biasprobe/config.hpp"
#include "biasprobe/data.hpp"
#include "biasprobe/error.hpp"
#include "biasprobe/mitigate.hpp"
#include "biasprobe/model.hpp"
#include "biasprobe/nmf.hpp"
#include "biasprobe/parallel.hpp"
#include "biasprobe/probe.hpp"
#include "biasprobe/report.hpp"
#include "biasprobe/rng.hpp"
#include "biasprobe/stats.hpp"

namespace biasprobe::pipeline {

namespace fs = std::filesystem;

struct RunContext {
  RunConfig config;
  fs::path out;
  std::string hash;

  explicit RunContext(RunConfig cfg) : config(std::move(cfg)), out(config.output_dir), hash(config_hash(config)) {}
  RunContext(RunConfig cfg, fs::path dir) : config(std::move(cfg)), out(std::move(dir)), hash(config_hash(config)) {}

  std::string tag() const { return "config_hash=" + hash; }
  fs::path path(const std::string& name) const { return out / name; }
};

inline constexpr const char* kModelFile = "model.mlp";
inline constexpr const char* kMergedFile = "merged.cbm";

inline fs::path bank_path(const RunContext& ctx, ClassId y) {
  return ctx.path("concepts") / ("class" + std::to_string(y) + ".cbk");
}

inline void check_tag(const RunContext& ctx, const std::string& found, const fs::path& source) {
  if (found != ctx.tag())
    fail(ErrorKind::SchemaMismatch, source.string() + " was written under '" + found + "', current run is '" +
                                        ctx.tag() + "'");
}

/// CSV with the config hash as a leading comment line.
inline void write_csv(const RunContext& ctx, const std::string& name, const std::string& body) {
  io::write_text(ctx.path(name), "# " + ctx.tag() + "\n" + body);
}

inline void write_json(const RunContext& ctx, const std::string& name, nlohmann::ordered_json body) {
  nlohmann::ordered_json j;
  j["config_hash"] = ctx.hash;
  for (auto& [k, v] : body.items()) j[k] = std::move(v);
  io::write_text(ctx.path(name), dump_json(j));
}

inline nlohmann::ordered_json read_json(const RunContext& ctx, const std::string& name) {
  const fs::path p = ctx.path(name);
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(io::read_text(p));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Format, p.string() + ": " + e.what());
  }
  if (!j.contains("config_hash") || !j["config_hash"].is_string())
    fail(ErrorKind::Format, p.string() + ": missing config_hash");
  check_tag(ctx, "config_hash=" + j["config_hash"].get<std::string>(), p);
  return j;
}

inline std::string read_csv_tag(const fs::path& p) {
  const std::string text = io::read_text(p);
  const auto nl = text.find('\n');
  const std::string first = text.substr(0, nl);
  if (!first.starts_with("# ")) fail(ErrorKind::Format, p.string() + ": missing config hash line");
  return first.substr(2);
}

inline Dataset dataset_for(const RunContext& ctx) {
  DatasetSpec spec = ctx.config.dataset;
  spec.seed = ctx.config.seed;
  return generate(spec);
}

inline TrainConfig train_config_for(const RunContext& ctx) {
  TrainConfig t = ctx.config.train;
  t.seed = ctx.config.seed;
  return t;
}

inline void write_config_echo(const RunContext& ctx) {
  io::write_text(ctx.path("config.toml"), "# " + ctx.tag() + "\n" + canonical_toml(ctx.config));
}

// --- gen-data ----------------------------------------------------------------

inline Dataset cmd_gen_data(const RunContext& ctx) {
  Dataset data = dataset_for(ctx);
  export_dataset(data, ctx.path("data"), ctx.tag());
  write_config_echo(ctx);
  return data;
}

// --- train -------------------------------------------------------------------

inline FrozenClassifier cmd_train(const RunContext& ctx, const Dataset* data = nullptr) {
  std::optional<Dataset> owned;
  if (!data) data = &owned.emplace(dataset_for(ctx));
  std::vector<double> losses;
  FrozenClassifier model = train(data->train, train_config_for(ctx), ctx.config.hidden, ctx.config.dataset.classes, &losses);
  save_checkpoint(model, ctx.path(kModelFile), ctx.tag());
  std::string csv = "epoch,loss\n";
  for (std::size_t e = 0; e < losses.size(); ++e) csv += std::to_string(e) + ',' + format_number(losses[e]) + '\n';
  write_csv(ctx, "train_loss.csv", csv);
  write_config_echo(ctx);
  return model;
}

inline FrozenClassifier load_model(const RunContext& ctx) {
  std::string meta;
  const fs::path p = ctx.path(kModelFile);
  FrozenClassifier model = load_checkpoint(p, &meta);
  check_tag(ctx, meta, p);
  return model;
}

// --- concepts ----------------------------------------------------------------

inline std::uint64_t nmf_seed(const RunContext& ctx, ClassId y) { return derive_seed(ctx.config.seed, 0x4e4d4600u + y); }

/// Fits one bank per class that has predicted audit samples. Banks are stored
/// with f32 precision and returned as they load back from disk.
inline std::vector<ConceptBank> cmd_concepts(const RunContext& ctx, const FrozenClassifier& model,
                                             const Dataset* data = nullptr) {
  std::optional<Dataset> owned;
  if (!data) data = &owned.emplace(dataset_for(ctx));
  const auto predictions = predict_all(model, data->audit);
  const auto& cc = ctx.config.concepts;
  std::vector<ConceptBank> banks;
  for (ClassId y = 0; y < ctx.config.dataset.classes; ++y) {
    if (std::find(predictions.begin(), predictions.end(), y) == predictions.end()) continue;
    PatchOptions po;
    po.patch_size = ctx.config.s;
    po.stride = cc.stride;
    po.cap = cc.patch_cap;
    po.seed = ctx.config.seed;
    const ClassPatches patches = collect_class_activations(model, data->audit, predictions, y, po);
    BankOptions bo;
    bo.rank = static_cast<Eigen::Index>(std::min<std::size_t>(
        ctx.config.r, std::min<std::size_t>(patches.activations.rows(), patches.activations.cols())));
    bo.nmf.max_outer_iters = cc.nmf_max_iters;
    bo.nmf.rel_tol = cc.nmf_rel_tol;
    bo.nmf.seed = nmf_seed(ctx, y);
    bo.top_patches = cc.top_patches;
    const ConceptBank bank = fit_class_bank(patches, bo);
    const fs::path p = bank_path(ctx, y);
    io::write_file(p, encode_bank(bank, ctx.tag()));
    banks.push_back(decode_bank(io::read_file(p), p.string()));
    write_gallery(bank, data->audit, ctx.path("concepts") / ("class" + std::to_string(y)), cc.gallery_top_k, ctx.tag());
  }
  write_config_echo(ctx);
  return banks;
}

inline std::vector<ConceptBank> load_banks(const RunContext& ctx) {
  std::vector<ConceptBank> banks;
  for (ClassId y = 0; y < ctx.config.dataset.classes; ++y) {
    const fs::path p = bank_path(ctx, y);
    if (!fs::exists(p)) continue;
    std::string meta;
    banks.push_back(decode_bank(io::read_file(p), p.string(), &meta));
    check_tag(ctx, meta, p);
  }
  if (banks.empty()) fail(ErrorKind::FileNotFound, "no concept banks under " + ctx.path("concepts").string());
  return banks;
}

// --- score -------------------------------------------------------------------

struct AlignmentRow {
  ClassId class_id = 0;
  std::uint32_t concept_index = 0;
  std::optional<double> score;
  bool is_bias = false;
  double cosine = 0.0;
  bool aligned = false;
  bool degenerate_direction = false;
};

struct ScoreOutputs {
  AuditResult audit;
  MergedBank merged;
  std::vector<AlignmentRow> alignment;

  /// At least one concept with S > tau whose cosine with its class color
  /// direction reaches the alignment threshold.
  bool bias_concept_aligned() const {
    for (const auto& r : alignment)
      if (r.is_bias && r.aligned) return true;
    return false;
  }
};

inline std::string alignment_csv(const std::vector<AlignmentRow>& rows) {
  std::string out = "class,concept,score,is_bias,cosine,aligned,degenerate_direction\n";
  for (const auto& r : rows)
    out += std::to_string(r.class_id) + ',' + std::to_string(r.concept_index) + ',' + format_optional(r.score) + ',' +
           (r.is_bias ? "1" : "0") + ',' + format_number(r.cosine) + ',' + (r.aligned ? "1" : "0") + ',' +
           (r.degenerate_direction ? "1" : "0") + '\n';
  return out;
}

inline ScoreOutputs cmd_score(const RunContext& ctx, const FrozenClassifier& model, const std::vector<ConceptBank>& banks,
                              const Dataset* data = nullptr) {
  std::optional<Dataset> owned;
  if (!data) data = &owned.emplace(dataset_for(ctx));
  const auto& audit = data->audit;
  const Matrix activations = features_all(model, audit);
  std::vector<ClassId> labels;
  for (const auto& s : audit) labels.push_back(s.label);
  const auto predictions = predict_all(model, audit);

  ScoreOutputs out;
  out.audit = identify(AuditView{activations, labels, predictions, model.head()}, banks, ctx.config.probe);
  const ScoreLookup lookup = out.audit.table.lookup();
  out.merged = merge_banks(banks, ctx.config.mitigate.merge_threshold, &lookup, ctx.config.probe.tau);

  // Color-direction alignment of every class concept (validation only).
  DirectionOptions dopt;
  dopt.max_samples = ctx.config.stats.direction_samples;
  dopt.seed = ctx.config.seed;
  dopt.method = ctx.config.stats.direction_method;
  for (const auto& bank : banks) {
    const ColorId color = assignment(ctx.config.dataset.bias_mode, bank.class_id, ctx.config.dataset.classes);
    const BiasDirection dir = estimate_bias_direction(model, audit, bank.class_id, color, dopt);
    const Alignment al = alignment(bank, dir.direction);
    for (Eigen::Index k = 0; k < bank.rank(); ++k) {
      AlignmentRow row;
      row.class_id = bank.class_id;
      row.concept_index = static_cast<std::uint32_t>(k);
      const auto it = lookup.find({bank.class_id, row.concept_index});
      if (it != lookup.end()) row.score = it->second;
      row.is_bias = row.score && *row.score > ctx.config.probe.tau;
      row.cosine = al.cosine[static_cast<std::size_t>(k)];
      row.aligned = al.aligned[static_cast<std::size_t>(k)];
      row.degenerate_direction = dir.degenerate;
      out.alignment.push_back(row);
    }
  }

  write_csv(ctx, "scores.csv", score_csv(out.audit.table));
  auto j = audit_json(out.audit);
  j["direction_method"] = to_string(ctx.config.stats.direction_method);
  write_json(ctx, "audit.json", std::move(j));
  write_csv(ctx, "alignment.csv", alignment_csv(out.alignment));
  io::write_file(ctx.path(kMergedFile), encode_merged(out.merged, ctx.tag()));
  write_config_echo(ctx);
  return out;
}

inline MergedBank load_merged(const RunContext& ctx) {
  std::string meta;
  const fs::path p = ctx.path(kMergedFile);
  MergedBank merged = decode_merged(io::read_file(p), p.string(), &meta);
  check_tag(ctx, meta, p);
  return merged;
}

// --- mitigate ----------------------------------------------------------------

struct MitigationOutputs {
  EvalReport base;
  EvalReport suppressed;
  std::vector<EvalReport> ablations;
  std::vector<std::vector<std::uint32_t>> ablation_sets;
  std::vector<std::uint32_t> bias_set;
  CorrelationReport correlation;

  double ablation_mean_worst_group() const {
    if (ablations.empty()) return std::nan("");
    double s = 0.0;
    for (const auto& a : ablations) s += a.worst_group_acc;
    return s / static_cast<double>(ablations.size());
  }
};

inline std::uint64_t ablation_seed(const RunContext& ctx, std::size_t run) {
  return derive_seed(ctx.config.seed, 0xab1a7e00u + run);
}

inline MitigationOutputs cmd_mitigate(const RunContext& ctx, const FrozenClassifier& model, const MergedBank& merged,
                                      const Dataset* data = nullptr) {
  std::optional<Dataset> owned;
  if (!data) data = &owned.emplace(dataset_for(ctx));
  const auto& test = data->test;
  const Matrix activations = features_all(model, test);
  const Matrix U = merged_coefficients(merged, activations);

  auto run = [&](const std::vector<std::uint32_t>& set) {
    std::vector<ClassId> preds(test.size());
    for (std::size_t i = 0; i < test.size(); ++i) {
      const auto row = static_cast<Eigen::Index>(i);
      const Vector a = activations.row(row).transpose();
      const Vector rsc = set.empty() ? a : suppress_with_coefficients(a, merged.W, U.row(row).transpose(), set);
      preds[i] = static_cast<ClassId>(argmax(model.head_logits(rsc)));
    }
    return evaluate_predictions(preds, test);
  };

  MitigationOutputs out;
  out.bias_set = merged.bias_set();
  out.base = run({});
  out.suppressed = run(out.bias_set);
  for (std::size_t j = 0; j < ctx.config.mitigate.ablation_runs; ++j) {
    out.ablation_sets.push_back(random_ablation_set(merged.size(), out.bias_set.size(), ablation_seed(ctx, j)));
    out.ablations.push_back(run(out.ablation_sets.back()));
  }

  std::vector<std::uint32_t> attrs;
  for (const auto& s : test) {
    if (!s.bias_color) fail(ErrorKind::MissingBiasLabels, "test sample without a bias color");
    attrs.push_back(*s.bias_color);
  }
  const auto mode = ctx.config.dataset.bias_mode;
  const auto classes = ctx.config.dataset.classes;
  out.correlation = correlation_report(merged, U, attrs, classes, ctx.config.probe.eps_active, ctx.config.stats.alpha,
                                       [&](ClassId y) { return assignment(mode, y, classes); });

  auto row = [](const std::string& method, std::size_t n, double acc, double wc, double wg) {
    return method + ',' + std::to_string(n) + ',' + format_number(acc) + ',' + format_number(wc) + ',' +
           format_number(wg) + '\n';
  };
  const std::size_t nb = out.bias_set.size();
  std::string csv = "method,n_suppressed,accuracy,worst_class_acc,worst_group_acc\n";
  csv += row("base", 0, out.base.accuracy, out.base.worst_class_acc, out.base.worst_group_acc);
  csv += row("suppressed", nb, out.suppressed.accuracy, out.suppressed.worst_class_acc, out.suppressed.worst_group_acc);
  double acc = 0.0, wc = 0.0;
  for (std::size_t j = 0; j < out.ablations.size(); ++j) {
    const auto& a = out.ablations[j];
    csv += row("ablation_" + std::to_string(j), nb, a.accuracy, a.worst_class_acc, a.worst_group_acc);
    acc += a.accuracy;
    wc += a.worst_class_acc;
  }
  if (!out.ablations.empty()) {
    const double k = static_cast<double>(out.ablations.size());
    csv += row("ablation_mean", nb, acc / k, wc / k, out.ablation_mean_worst_group());
  }
  write_csv(ctx, "mitigation.csv", csv);

  nlohmann::ordered_json j;
  j["bias_set"] = out.bias_set;
  j["merged_concepts"] = merged.size();
  j["base"] = eval_json(out.base);
  j["suppressed"] = eval_json(out.suppressed);
  auto& abl = j["ablations"] = nlohmann::ordered_json::array();
  for (std::size_t k = 0; k < out.ablations.size(); ++k) {
    auto e = eval_json(out.ablations[k]);
    e["concepts"] = out.ablation_sets[k];
    abl.push_back(std::move(e));
  }
  write_json(ctx, "eval.json", std::move(j));
  write_csv(ctx, "correlation.csv", correlation_csv(out.correlation));
  write_json(ctx, "correlation.json", correlation_json(out.correlation));
  write_config_echo(ctx);
  return out;
}

// --- report ------------------------------------------------------------------

/// Consolidates the stage outputs into report.json. Every artifact must carry
/// the current config hash.
inline nlohmann::ordered_json cmd_report(const RunContext& ctx) {
  for (const char* csv : {"scores.csv", "alignment.csv", "mitigation.csv", "correlation.csv"}) {
    const fs::path p = ctx.path(csv);
    check_tag(ctx, read_csv_tag(p), p);
  }
  load_model(ctx);
  load_banks(ctx);
  load_merged(ctx);
  nlohmann::ordered_json j;
  j["config"] = canonical_toml(ctx.config);
  j["audit"] = read_json(ctx, "audit.json");
  j["evaluation"] = read_json(ctx, "eval.json");
  j["correlation"] = read_json(ctx, "correlation.json");
  for (auto* section : {&j["audit"], &j["evaluation"], &j["correlation"]}) section->erase("config_hash");
  write_json(ctx, "report.json", std::move(j));
  return read_json(ctx, "report.json");
}

// --- full run ----------------------------------------------------------------

struct SeedOutputs {
  ScoreOutputs score;
  MitigationOutputs mitigation;
};

/// gen-data (in memory), train, concepts, score, mitigate and report for the
/// context's seed. `export_data` also writes the dataset images.
inline SeedOutputs run_all(const RunContext& ctx, bool export_data = false) {
  const Dataset data = export_data ? cmd_gen_data(ctx) : dataset_for(ctx);
  const FrozenClassifier model = cmd_train(ctx, &data);
  const auto banks = cmd_concepts(ctx, model, &data);
  SeedOutputs out;
  out.score = cmd_score(ctx, model, banks, &data);
  out.mitigation = cmd_mitigate(ctx, model, out.score.merged, &data);
  cmd_report(ctx);
  return out;
}

inline double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? std::nan("") : s / static_cast<double>(v.size());
}

inline double standard_error(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1)) / std::sqrt(static_cast<double>(v.size()));
}

/// Runs seeds seed .. seed + n_seeds - 1 into out/seed{k} and writes
/// summary.json with means and standard errors of the evaluation metrics.
/// With `parallel_seeds` the seeds are spread over thread_count() workers,
/// each running its seed single-threaded; artifacts are identical either way.
inline nlohmann::ordered_json cmd_pipeline(const RunContext& ctx, bool parallel_seeds = false) {
  const std::size_t n = ctx.config.n_seeds;
  std::vector<RunContext> subs;
  for (std::size_t k = 0; k < n; ++k) {
    RunConfig cfg = ctx.config;
    cfg.seed = ctx.config.seed + k;
    subs.emplace_back(cfg, ctx.out / ("seed" + std::to_string(cfg.seed)));
  }
  std::vector<std::optional<SeedOutputs>> results(n);
  if (parallel_seeds) {
    parallel_for(n, [&](std::size_t k) { results[k] = run_all(subs[k]); });
  } else {
    for (std::size_t k = 0; k < n; ++k) results[k] = run_all(subs[k]);
  }

  std::vector<double> base_acc, base_wg, sup_acc, sup_wg, abl_wg, max_score;
  nlohmann::ordered_json seeds = nlohmann::ordered_json::array();
  for (std::size_t k = 0; k < n; ++k) {
    const RunContext& sub = subs[k];
    const RunConfig& cfg = sub.config;
    const SeedOutputs& r = *results[k];
    const auto& m = r.mitigation;
    base_acc.push_back(m.base.accuracy);
    base_wg.push_back(m.base.worst_group_acc);
    sup_acc.push_back(m.suppressed.accuracy);
    sup_wg.push_back(m.suppressed.worst_group_acc);
    abl_wg.push_back(m.ablation_mean_worst_group());
    const auto ms = r.score.audit.table.max_score();
    max_score.push_back(ms ? *ms : std::nan(""));
    seeds.push_back({{"seed", cfg.seed},
                     {"config_hash", sub.hash},
                     {"bias_concepts", r.score.audit.bias_concepts.size()},
                     {"merged_bias_set", m.bias_set.size()},
                     {"bias_concept_aligned", r.score.bias_concept_aligned()},
                     {"max_score", optional_json(ms)},
                     {"base_worst_group_acc", m.base.worst_group_acc},
                     {"suppressed_worst_group_acc", m.suppressed.worst_group_acc},
                     {"ablation_mean_worst_group_acc", m.ablation_mean_worst_group()}});
  }
  auto stat = [](const std::vector<double>& v) {
    return nlohmann::ordered_json{{"mean", mean(v)}, {"stderr", standard_error(v)}};
  };
  nlohmann::ordered_json j;
  j["seeds"] = std::move(seeds);
  j["base_accuracy"] = stat(base_acc);
  j["base_worst_group_acc"] = stat(base_wg);
  j["suppressed_accuracy"] = stat(sup_acc);
  j["suppressed_worst_group_acc"] = stat(sup_wg);
  j["ablation_worst_group_acc"] = stat(abl_wg);
  j["max_score"] = stat(max_score);
  write_json(ctx, "summary.json", j);
  return j;
}

// --- external bundles --------------------------------------------------------

struct BundleAuditOutputs {
  std::vector<ConceptBank> banks;
  AuditResult audit;
  MergedBank merged;
};

/// Audits an external model from its activation bundle. Bundles hold one
/// vector per sample, so class banks are fitted on whole-sample activations
/// of the samples predicted as each class. The HEAD section supplies the
/// classifier head for the probe gradients.
inline BundleAuditOutputs cmd_audit_bundle(const RunContext& ctx, const fs::path& bundle_path) {
  const ActivationBundle b = read_bundle(bundle_path);
  if (!b.head)
    fail(ErrorKind::SchemaMismatch, bundle_path.string() + ": bundle has no HEAD section; the probe needs the head");
  const Matrix activations = b.activations.cast<double>();
  BundleAuditOutputs out;
  for (ClassId y = 0; y < b.classes(); ++y) {
    std::vector<Eigen::Index> rows;
    for (std::size_t i = 0; i < b.size(); ++i)
      if (b.predictions[i] == y) rows.push_back(static_cast<Eigen::Index>(i));
    if (rows.empty()) continue;
    Matrix A(static_cast<Eigen::Index>(rows.size()), activations.cols());
    ClassPatches patches;
    patches.class_id = y;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      A.row(static_cast<Eigen::Index>(i)) = activations.row(rows[i]);
      patches.refs.push_back({static_cast<std::uint32_t>(rows[i]), 0, 0, 0.0f});
    }
    patches.activations = std::move(A);
    BankOptions bo;
    bo.rank = static_cast<Eigen::Index>(std::min<std::size_t>(
        ctx.config.r, std::min<std::size_t>(patches.activations.rows(), patches.activations.cols())));
    bo.nmf.max_outer_iters = ctx.config.concepts.nmf_max_iters;
    bo.nmf.rel_tol = ctx.config.concepts.nmf_rel_tol;
    bo.nmf.seed = nmf_seed(ctx, y);
    bo.top_patches = ctx.config.concepts.top_patches;
    ConceptBank bank = fit_class_bank(patches, bo);
    const fs::path p = bank_path(ctx, y);
    io::write_file(p, encode_bank(bank, ctx.tag()));
    out.banks.push_back(decode_bank(io::read_file(p), p.string()));
  }
  out.audit = identify(AuditView{activations, b.labels, b.predictions, *b.head}, out.banks, ctx.config.probe);
  const ScoreLookup lookup = out.audit.table.lookup();
  out.merged = merge_banks(out.banks, ctx.config.mitigate.merge_threshold, &lookup, ctx.config.probe.tau);
  write_csv(ctx, "scores.csv", score_csv(out.audit.table));
  auto j = audit_json(out.audit);
  j["model_id"] = b.model_id;
  j["layer_name"] = b.layer_name;
  j["samples"] = b.size();
  write_json(ctx, "audit.json", std::move(j));
  io::write_file(ctx.path(kMergedFile), encode_merged(out.merged, ctx.tag()));
  write_config_echo(ctx);
  return out;
}

}  // namespace biasprobe::pipeline
