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

// biasprobe command-line interface.
//
// Exit codes: 0 success, 1 other failure, 2 config error, 3 I/O error,
// 4 schema/format error.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "biasprobe/config.hpp"
#include "biasprobe/parallel.hpp"
#include "biasprobe/pipeline.hpp"

namespace {

using biasprobe::ErrorKind;

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config:
    case ErrorKind::InvalidSpec:
      return 2;
    case ErrorKind::Io:
    case ErrorKind::FileNotFound:
      return 3;
    case ErrorKind::Format:
    case ErrorKind::SchemaMismatch:
    case ErrorKind::Integrity:
      return 4;
    default:
      return 1;
  }
}

struct GlobalOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::size_t threads = 1;
};

biasprobe::pipeline::RunContext make_context(const GlobalOptions& g) {
  biasprobe::RunConfig cfg;
  if (!g.config.empty()) cfg = biasprobe::load_run_config(g.config);
  if (g.seed) cfg.seed = *g.seed;
  if (!g.out.empty()) cfg.output_dir = g.out;
  biasprobe::thread_count() = std::max<std::size_t>(1, g.threads);
  return biasprobe::pipeline::RunContext(cfg);
}

}  // namespace

int main(int argc, char** argv) {
  namespace pl = biasprobe::pipeline;
  CLI::App app{"Label-free bias audit for frozen classifiers"};
  app.require_subcommand(1);

  GlobalOptions g;
  app.add_option("--config", g.config, "TOML run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Run seed (overrides the config)");
  app.add_option("--out", g.out, "Run directory (overrides output_dir)");
  app.add_option("--threads", g.threads, "Worker threads for per-sample maps")->check(CLI::PositiveNumber);

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic dataset and export PPM images");
  auto* trn = app.add_subcommand("train", "Train the classifier");
  auto* con = app.add_subcommand("concepts", "Fit class concept banks and write galleries");
  auto* sco = app.add_subcommand("score", "Score concepts with the gradient probe");
  auto* mit = app.add_subcommand("mitigate", "Suppress bias concepts and evaluate against random ablations");
  auto* rep = app.add_subcommand("report", "Consolidate run artifacts into report.json");
  auto* pip = app.add_subcommand("pipeline", "Run every stage for n_seeds consecutive seeds");
  bool parallel_seeds = false;
  pip->add_flag("--parallel-seeds", parallel_seeds, "Run seeds concurrently, one per worker thread");
  auto* bun = app.add_subcommand("audit-bundle", "Score concepts of an external model from an activation bundle");
  std::string bundle_path;
  bun->add_option("bundle", bundle_path, "Activation bundle (ABF1 with HEAD section)")->required();
  auto* cfg_cmd = app.add_subcommand("config", "Print the effective configuration and its hash");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const pl::RunContext ctx = make_context(g);
    if (*gen) {
      const auto data = pl::cmd_gen_data(ctx);
      std::printf("wrote %zu samples to %s\n", data.train.size() + data.audit.size() + data.test.size(),
                  ctx.path("data").c_str());
    } else if (*trn) {
      pl::cmd_train(ctx);
      std::printf("wrote %s\n", ctx.path(pl::kModelFile).c_str());
    } else if (*con) {
      const auto banks = pl::cmd_concepts(ctx, pl::load_model(ctx));
      std::printf("wrote %zu concept banks to %s\n", banks.size(), ctx.path("concepts").c_str());
    } else if (*sco) {
      const auto out = pl::cmd_score(ctx, pl::load_model(ctx), pl::load_banks(ctx));
      std::printf("scored %zu concepts, %zu above tau, %zu merged concepts (%zu flagged)\n", out.audit.table.rows.size(),
                  out.audit.bias_concepts.size(), out.merged.size(), out.merged.bias_set().size());
    } else if (*mit) {
      const auto out = pl::cmd_mitigate(ctx, pl::load_model(ctx), pl::load_merged(ctx));
      std::printf("worst-group accuracy: base %.4f, suppressed %.4f, ablation mean %.4f\n", out.base.worst_group_acc,
                  out.suppressed.worst_group_acc, out.ablation_mean_worst_group());
    } else if (*rep) {
      pl::cmd_report(ctx);
      std::printf("wrote %s\n", ctx.path("report.json").c_str());
    } else if (*pip) {
      pl::cmd_pipeline(ctx, parallel_seeds);
      std::printf("wrote %s\n", ctx.path("summary.json").c_str());
    } else if (*bun) {
      const auto out = pl::cmd_audit_bundle(ctx, bundle_path);
      std::printf("scored %zu concepts over %zu classes, %zu above tau\n", out.audit.table.rows.size(),
                  out.banks.size(), out.audit.bias_concepts.size());
    } else if (*cfg_cmd) {
      std::printf("# config_hash=%s\n%s", ctx.hash.c_str(), biasprobe::canonical_toml(ctx.config).c_str());
    }
  } catch (const biasprobe::Error& e) {
    std::fprintf(stderr, "error: %s: %s\n", std::string(biasprobe::to_string(e.kind())).c_str(), e.what());
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
