// Copyright 2026 The PTE Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//
// Command-line driver. One subcommand per pipeline stage plus `pipeline`
// (all stages), `baseline <kind>` and `sweep`. Exit codes: 0 success,
// 2 invariant violation, 3 configuration error, 1 anything else.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pte/errors.hpp"
#include "pte/pipeline.hpp"

namespace {

// Prints the report the command just produced, if it exists.
void print_report(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return;
  std::cout << in.rdbuf();
}

int run(int argc, char** argv) {
  CLI::App app{"pruning-then-expanding domain adaptation pipeline"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  int threads = 1;
  app.add_option("--config", config_path, "pipeline config (JSON)");
  app.add_option("--out-dir", out_dir, "run directory for all artifacts");
  auto* seed_opt =
      app.add_option("--seed", seed, "override the config's seed");
  app.add_option("--threads", threads, "beam-decode worker threads")
      ->check(CLI::PositiveNumber);

  const std::vector<std::string> stages = {
      "gen-data", "train-general", "score",    "prune",
      "distill",  "expand",        "finetune", "evaluate"};
  const std::vector<std::string> stage_help = {
      "generate the synthetic corpora",
      "train the general-domain model",
      "score parameter importance on general data",
      "partition the model into kept and prunable parts",
      "recover the pruned general core by distillation",
      "assign pruned capacity to the new domains",
      "fine-tune each domain's capacity, general core frozen",
      "report BLEU / accuracy of the general and adapted systems"};
  for (std::size_t i = 0; i < stages.size(); ++i)
    app.add_subcommand(stages[i], stage_help[i]);

  app.add_subcommand("pipeline", "run every stage in order, resuming");

  auto* baseline = app.add_subcommand(
      "baseline", "train and evaluate a comparison system");
  std::string baseline_kind;
  baseline
      ->add_option("kind", baseline_kind,
                   "one of ft, mol, ewc, random, selective")
      ->required()
      ->check(CLI::IsMember({"ft", "mol", "ewc", "random", "selective"}));

  auto* sweep = app.add_subcommand(
      "sweep", "trade-off curve over a pruning or regularization knob");
  std::string knob = "ratio";
  std::vector<double> values;
  sweep->add_option("--knob", knob, "ratio or ewc_alpha")
      ->check(CLI::IsMember({"ratio", "ewc_alpha"}));
  sweep->add_option("--values", values, "knob settings, one run each");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 3;
  }

  if (config_path.empty())
    throw pte::ConfigError("--config is required");
  if (out_dir.empty()) throw pte::ConfigError("--out-dir is required");
  if (!std::filesystem::exists(config_path))
    throw pte::ConfigError("config file not found: " + config_path);

  pte::PipelineConfig config = pte::load_pipeline_config(config_path);
  if (seed_opt->count() > 0) config.seed = seed;
  pte::set_eval_threads(threads);

  const pte::PipelinePaths paths{out_dir};
  const std::string name = app.get_subcommands().front()->get_name();
  if (name == "pipeline") {
    pte::run_pipeline(config, out_dir);
    print_report(paths.report("evaluate"));
  } else if (name == "baseline") {
    pte::run_baseline(baseline_kind, config, out_dir);
    print_report(paths.report("baseline_" + baseline_kind));
  } else if (name == "sweep") {
    if (values.empty())
      values = knob == "ratio"
                   ? std::vector<double>{0.10, 0.20, 0.30, 0.40, 0.50}
                   : std::vector<double>{0.25, 0.50, 1.00, 1.50, 2.00, 2.50};
    pte::run_sweep(knob, values, config, out_dir);
    print_report(paths.report("sweep_" + knob));
  } else {
    pte::run_stage(name, config, out_dir);
    print_report(paths.report(name == "score" ? "score" : name));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const pte::InvariantViolation& e) {
    std::cerr << "invariant violation: " << e.what() << "\n";
    return 2;
  } catch (const pte::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
