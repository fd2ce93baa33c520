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

// Runs one seed of the audit in process and prints what each stage found.
//
//   audit_walkthrough [config.toml] [run_dir]

#include <algorithm>
#include <cstdio>

#include "biasprobe.hpp"

int main(int argc, char** argv) {
  using namespace biasprobe;
  try {
    const RunConfig cfg = argc > 1 ? load_run_config(argv[1]) : RunConfig{};
    const pipeline::RunContext ctx(cfg, argc > 2 ? argv[2] : "walkthrough_run");
    const pipeline::SeedOutputs out = pipeline::run_all(ctx);

    const auto& audit = out.score.audit;
    std::printf("config %s, %zu concepts scored, %zu above tau %.2f\n", ctx.hash.c_str(), audit.table.rows.size(),
                audit.bias_concepts.size(), cfg.probe.tau);

    auto rows = out.score.alignment;
    std::erase_if(rows, [](const pipeline::AlignmentRow& r) { return !r.score; });
    std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return *a.score > *b.score; });
    std::printf("\nclass concept  score   cos(color)\n");
    for (std::size_t i = 0; i < std::min<std::size_t>(8, rows.size()); ++i)
      std::printf("%5u %7u  %6.3f  %6.3f%s\n", rows[i].class_id, rows[i].concept_index, *rows[i].score, rows[i].cosine,
                  rows[i].aligned ? "  aligned" : "");

    const auto& m = out.mitigation;
    std::printf("\n%zu merged concepts, %zu flagged\n", out.score.merged.size(), m.bias_set.size());
    std::printf("accuracy     base %.4f  suppressed %.4f\n", m.base.accuracy, m.suppressed.accuracy);
    std::printf("worst group  base %.4f  suppressed %.4f  random ablation %.4f\n", m.base.worst_group_acc,
                m.suppressed.worst_group_acc, m.ablation_mean_worst_group());
    std::printf("artifacts in %s\n", ctx.out.c_str());
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
