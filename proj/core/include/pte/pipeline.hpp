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
// Orchestration of the prune / distill / expand / fine-tune pipeline and
// the baseline systems as reproducible, resumable stages. Every stage
// writes a checkpoint and/or a structured-text report under a fixed
// out-dir layout; a rerun with the same config and seed is byte-identical,
// and completed stages are skipped on resume.

#ifndef PTE_PIPELINE_HPP_
#define PTE_PIPELINE_HPP_

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "pte/corpus.hpp"
#include "pte/distill.hpp"
#include "pte/partition.hpp"
#include "pte/transformer.hpp"

namespace pte {

struct DataConfig {
  int n_train = 256;
  int n_val = 64;
  int n_test = 500;
};

struct StageTrainConfig {
  int steps = 600;
  float lr = 1e-3f;
  int batch_size = 8;
  std::string optimizer = "adam";
};

struct PruneConfig {
  Granularity granularity = Granularity::kNeuron;
  double ratio = 0.10;  // §4.2 defaults: 0.10 neuron, 0.30 weight
  std::string criterion = "taylor";  // taylor | magnitude | random
  int score_sample = 64;  // general sentences the Taylor pass scores
};

struct ExpandConfig {
  ExpandInit init = ExpandInit::kUniform;
};

struct EvalConfig {
  int beam_size = 4;  // §4.2
  int max_sentences = 0;  // 0 = every test sentence
};

struct BaselineConfig {
  float mol_alpha = 1.0f;
  float ewc_alpha = 1.0f;
  int fisher_sample = 1000;
};

struct SweepConfig {
  // Equal, deliberately tight per-value adaptation budget. The main
  // `finetune` budget trains to saturation, where every knob value
  // converges to the same score and the trade-off curve flattens out.
  StageTrainConfig finetune{400, 1e-3f, 8, "adam"};
};

struct PipelineConfig {
  std::uint64_t seed = 1;
  ModelConfig model;
  int n_words = 32;  // vocabulary is the 4 specials plus this many words
  DomainSpec general;
  std::vector<DomainSpec> domains;
  DataConfig data;
  StageTrainConfig train_general;
  PruneConfig prune;
  KDConfig kd;
  ExpandConfig expand;
  StageTrainConfig finetune{300, 7.5e-5f, 8, "adam"};  // lr from §4.2
  EvalConfig eval;
  BaselineConfig baseline;
  SweepConfig sweep;

  Vocabulary vocabulary() const { return Vocabulary::fixed(n_words); }
  void validate() const;  // throws ConfigError
};

// JSON (structured-text) config round trip. Loading applies defaults for
// absent keys, rejects unknown keys, and validates; the serialized form
// enumerates every resolved value so emitted runs are self-describing.
PipelineConfig config_from_json_text(const std::string& text);
PipelineConfig load_pipeline_config(const std::string& path);
std::string config_to_json_text(const PipelineConfig& config);

// Fixed out-dir layout shared by the stages.
struct PipelinePaths {
  std::string out_dir;

  std::string data_dir() const { return out_dir + "/data"; }
  std::string checkpoint_dir() const { return out_dir + "/checkpoints"; }
  std::string report_dir() const { return out_dir + "/reports"; }
  std::string corpus_prefix(const std::string& domain,
                            const std::string& split) const {
    return data_dir() + "/" + domain + "." + split;
  }
  std::string checkpoint(const std::string& name) const {
    return checkpoint_dir() + "/" + name + ".pte1";
  }
  std::string report(const std::string& name) const {
    return report_dir() + "/" + name + ".txt";
  }
  std::string metrics_file(const std::string& name) const {
    return report_dir() + "/" + name + ".json";
  }
  std::string config_file() const { return out_dir + "/config.json"; }
};

// Worker threads beam decoding fans out over (default 1; evaluation
// results do not depend on the count).
void set_eval_threads(int n);

// Teacher-forced argmax next-token accuracy in percent over tgt plus <eos>.
double token_accuracy(const Transformer& model,
                      std::span<const SentencePair> data,
                      const MaskView* view);

// Beam decodes of every source sentence, in corpus order.
std::vector<std::vector<int>> decode_corpus(const Transformer& model,
                                            std::span<const SentencePair> data,
                                            int beam_size,
                                            const MaskView* view);

// BLEU of the model's decodes against the corpus targets.
double corpus_bleu(const Transformer& model,
                   std::span<const SentencePair> data, int beam_size,
                   const MaskView* view);

float corpus_nll(const Transformer& model, std::span<const SentencePair> data,
                 const MaskView* view);

// Individual stages, ordered gen-data -> train-general -> score -> prune ->
// distill -> expand -> finetune -> evaluate. Each consumes its
// predecessor's outputs from `out_dir` (missing input checkpoint is a
// PipelineError) and finishes by writing its report.
void stage_gen_data(const PipelineConfig& config, const std::string& out_dir);
void stage_train_general(const PipelineConfig& config,
                         const std::string& out_dir);
void stage_score(const PipelineConfig& config, const std::string& out_dir);
void stage_prune(const PipelineConfig& config, const std::string& out_dir);
void stage_distill(const PipelineConfig& config, const std::string& out_dir);
void stage_expand(const PipelineConfig& config, const std::string& out_dir);
void stage_finetune(const PipelineConfig& config, const std::string& out_dir);
void stage_evaluate(const PipelineConfig& config, const std::string& out_dir);

// Runs every stage in order, skipping stages whose outputs already exist,
// after persisting the resolved config (an out-dir holding a different
// config is a config error). Stage names: "gen-data", "train-general",
// "score", "prune", "distill", "expand", "finetune", "evaluate".
void run_stage(const std::string& stage, const PipelineConfig& config,
               const std::string& out_dir);
void run_pipeline(const PipelineConfig& config, const std::string& out_dir);

// Baseline systems. `kind` is ft | mol | ewc | random | selective; each
// reuses the shared gen-data / train-general artifacts (running them if
// absent) and writes checkpoints/baseline_<kind>.pte1 plus
// reports/baseline_<kind>.txt.
void run_baseline(const std::string& kind, const PipelineConfig& config,
                  const std::string& out_dir);

// Trade-off sweep. `knob` is "ratio" (weight-granularity prune ratio; the
// full prune..evaluate tail reruns per value in out_dir/sweep/<value>) or
// "ewc_alpha" (EWC fine-tuning per value). Every point adapts under the
// capped `sweep.finetune` budget. Emits reports/sweep_<knob>.txt with one
// (knob, #Para., Gen., In.) row per value, byte-reproducible from the
// seed.
void run_sweep(const std::string& knob, std::span<const double> values,
               const PipelineConfig& config, const std::string& out_dir);

}  // namespace pte

#endif  // PTE_PIPELINE_HPP_
