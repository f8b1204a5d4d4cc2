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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "pte/checkpoint.hpp"
#include "pte/errors.hpp"
#include "pte/pipeline.hpp"

using namespace pte;

namespace {

namespace fs = std::filesystem;

struct TempDir {
  std::string path;
  explicit TempDir(std::string p) : path(std::move(p)) {
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

// Small enough that a full pipeline run takes a couple of seconds.
PipelineConfig tiny_pipeline_config() {
  PipelineConfig c;
  c.seed = 7;
  c.model.n_layers = 2;
  c.model.d_model = 16;
  c.model.n_heads = 2;
  c.model.d_ff = 32;
  c.model.max_len = 10;
  c.n_words = 16;
  c.model.src_vocab = c.n_words + 4;
  c.model.tgt_vocab = c.n_words + 4;
  c.general = {"general", DomainKind::kCopy, 0, 12, 2, 5, 0.0, 11};
  c.domains = {{"remap", DomainKind::kTokenRemap, 12, 16, 2, 5, 0.0, 22}};
  c.data = {48, 16, 16};
  c.train_general = {80, 2e-3f, 8, "adam"};
  c.prune.granularity = Granularity::kNeuron;
  c.prune.ratio = 0.25;
  c.prune.criterion = "taylor";
  c.prune.score_sample = 16;
  c.kd.steps = 40;
  c.kd.lr = 1e-3f;
  c.kd.batch_size = 8;
  c.kd.eval_every = 10;
  c.kd.patience = 3;
  c.finetune = {40, 2e-3f, 8, "adam"};
  c.eval.beam_size = 2;
  c.eval.max_sentences = 8;
  return c;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in),
          std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("config json round-trips and validates") {
  PipelineConfig c = tiny_pipeline_config();
  const std::string text = config_to_json_text(c);
  PipelineConfig back = config_from_json_text(text);
  CHECK(config_to_json_text(back) == text);
  CHECK(back.seed == c.seed);
  CHECK(back.model.d_model == 16);
  CHECK(back.domains.size() == 1);
  CHECK(back.domains[0].name == "remap");
  CHECK(back.domains[0].kind == DomainKind::kTokenRemap);
  CHECK(back.prune.ratio == doctest::Approx(0.25));
  CHECK(back.kd.steps == 40);
  CHECK(back.finetune.lr == doctest::Approx(2e-3f));
}

TEST_CASE("config parsing applies granularity-dependent prune defaults") {
  const std::string base = R"({
    "n_words": 16,
    "model": {"n_layers": 2, "d_model": 16, "n_heads": 2, "d_ff": 32,
              "max_len": 10},
    "general": {"name": "general", "kind": "copy", "word_lo": 0,
                "word_hi": 12, "len_lo": 2, "len_hi": 5},
    "domains": [{"name": "d1", "kind": "reverse", "word_lo": 12,
                 "word_hi": 16, "len_lo": 2, "len_hi": 5}]
  })";

  PipelineConfig neuron = config_from_json_text(base);
  CHECK(neuron.prune.granularity == Granularity::kNeuron);
  CHECK(neuron.prune.ratio == doctest::Approx(0.10));
  CHECK(neuron.prune.criterion == "taylor");

  std::string weight_text = base;
  weight_text.insert(weight_text.rfind('}'),
                     R"(, "prune": {"granularity": "weight"})");
  PipelineConfig weight = config_from_json_text(weight_text);
  CHECK(weight.prune.granularity == Granularity::kWeight);
  CHECK(weight.prune.ratio == doctest::Approx(0.30));
  CHECK(weight.prune.criterion == "magnitude");
}

TEST_CASE("config parsing rejects bad input") {
  CHECK_THROWS_AS(config_from_json_text("not json"), ConfigError);
  // No domains.
  CHECK_THROWS_AS(config_from_json_text("{}"), ConfigError);
  PipelineConfig c = tiny_pipeline_config();
  std::string text = config_to_json_text(c);

  // Unknown keys anywhere are rejected.
  std::string extra = text;
  extra.insert(extra.find('{') + 1, "\"typo_key\": 1,");
  CHECK_THROWS_AS(config_from_json_text(extra), ConfigError);
  std::string nested = text;
  nested.insert(nested.find("\"ratio\""), "\"ratioo\": 0.2, ");
  CHECK_THROWS_AS(config_from_json_text(nested), ConfigError);

  // Criterion/granularity pairing.
  PipelineConfig bad = c;
  bad.prune.criterion = "magnitude";  // magnitude needs weight granularity
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.prune.ratio = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.domains[0].word_hi = 99;  // outside the vocabulary
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.domains[0].len_hi = 10;  // tgt_in would exceed max_len
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.domains.push_back(bad.domains[0]);  // duplicate name
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("evaluation helpers agree with direct computation") {
  PipelineConfig c = tiny_pipeline_config();
  Transformer model(c.model);
  Rng rng(5);
  model.init_params(rng);
  Corpus corpus = generate_domain(c.general, 6, c.vocabulary());

  // token_accuracy matches a per-row argmax recount.
  std::int64_t hits = 0, total = 0;
  for (const auto& pair : corpus.pairs) {
    std::vector<int> tgt_in = {Vocabulary::kBos};
    tgt_in.insert(tgt_in.end(), pair.tgt.begin(), pair.tgt.end());
    std::vector<int> tgt_out = pair.tgt;
    tgt_out.push_back(Vocabulary::kEos);
    auto logits = model.forward(nullptr, pair.src, tgt_in, {});
    for (std::size_t r = 0; r < tgt_out.size(); ++r) {
      int best = 0;
      for (int v = 1; v < logits->cols(); ++v)
        if (logits->v[r * logits->cols() + v] >
            logits->v[r * logits->cols() + best])
          best = v;
      hits += best == tgt_out[r];
      ++total;
    }
  }
  const double expect = 100.0 * double(hits) / double(total);
  CHECK(token_accuracy(model, corpus.pairs, nullptr) ==
        doctest::Approx(expect).epsilon(1e-12));

  // corpus_nll is the batch loss over the whole corpus.
  const float direct = nll_loss<float>(nullptr, model, corpus.pairs, {})->v[0];
  CHECK(corpus_nll(model, corpus.pairs, nullptr) == direct);

  // corpus_bleu against the model's own decodes is exactly 100.
  auto hyps = decode_corpus(model, corpus.pairs, 2, nullptr);
  std::vector<SentencePair> self;
  for (std::size_t i = 0; i < hyps.size(); ++i)
    if (!hyps[i].empty()) self.push_back({corpus.pairs[i].src, hyps[i]});
  REQUIRE(!self.empty());
  CHECK(corpus_bleu(model, self, 2, nullptr) == doctest::Approx(100.0));

  // Threaded decoding returns the same sentences in the same order.
  set_eval_threads(3);
  auto threaded = decode_corpus(model, corpus.pairs, 2, nullptr);
  set_eval_threads(1);
  CHECK(threaded == hyps);

  CHECK_THROWS_AS(token_accuracy(model, {}, nullptr), UsageError);
}

TEST_CASE("full pipeline runs, reruns byte-identically, and resumes") {
  PipelineConfig c = tiny_pipeline_config();
  TempDir a("pl_run_a");
  TempDir b("pl_run_b");
  run_pipeline(c, a.path);
  run_pipeline(c, b.path);

  PipelinePaths pa{a.path}, pb{b.path};
  const char* checkpoints[] = {"general", "pruned", "distilled", "expanded",
                               "finetuned"};
  for (const char* name : checkpoints) {
    REQUIRE(fs::exists(pa.checkpoint(name)));
    CHECK(file_digest(pa.checkpoint(name)) == file_digest(pb.checkpoint(name)));
  }
  CHECK(slurp(pa.report("evaluate")) == slurp(pb.report("evaluate")));
  CHECK(slurp(pa.metrics_file("metrics")) == slurp(pb.metrics_file("metrics")));

  // The frozen general core carries the same digest from distill onward,
  // both as recorded in the stage metadata and when recomputed.
  auto distilled = load_checkpoint(pa.checkpoint("distilled"));
  auto expanded = load_checkpoint(pa.checkpoint("expanded"));
  auto finetuned = load_checkpoint(pa.checkpoint("finetuned"));
  const std::string digest = distilled.meta.at("general_digest");
  CHECK(expanded.meta.at("general_digest") == digest);
  CHECK(finetuned.meta.at("general_digest") == digest);
  REQUIRE(finetuned.partition.has_value());
  CHECK(general_digest(finetuned.params, *finetuned.partition) == digest);

  // The expanded pool is fully consumed by the single planned domain.
  auto counts = finetuned.partition->label_counts();
  CHECK(counts.count(kFree) == 0);
  CHECK(counts.at(domain_label(1)) > 0);

  // Table-shaped report with one row per system.
  const std::string report = slurp(pa.report("evaluate"));
  CHECK(report.find("#Para.") != std::string::npos);
  CHECK(report.find("Gen.") != std::string::npos);
  CHECK(report.find("Avg.") != std::string::npos);
  CHECK(report.find("general") != std::string::npos);
  CHECK(report.find("pte") != std::string::npos);

  // Resume: wipe the tail stages and rerun; bytes match the fresh run.
  fs::remove(pa.checkpoint("finetuned"));
  fs::remove(pa.report("finetune"));
  fs::remove(pa.report("evaluate"));
  fs::remove(pa.metrics_file("metrics"));
  const std::string general_before = file_digest(pa.checkpoint("general"));
  run_pipeline(c, a.path);
  CHECK(file_digest(pa.checkpoint("general")) == general_before);
  CHECK(file_digest(pa.checkpoint("finetuned")) ==
        file_digest(pb.checkpoint("finetuned")));
  CHECK(slurp(pa.report("evaluate")) == slurp(pb.report("evaluate")));
}

TEST_CASE("multi-domain expansion consumes the pool in equal shares") {
  PipelineConfig c = tiny_pipeline_config();
  c.general.word_hi = 10;
  c.domains = {{"d1", DomainKind::kTokenRemap, 10, 14, 2, 5, 0.0, 21},
               {"d2", DomainKind::kReverse, 10, 14, 2, 5, 0.0, 22},
               {"d3", DomainKind::kCopy, 14, 16, 2, 5, 0.0, 23}};
  c.train_general.steps = 30;
  c.kd.steps = 10;
  c.finetune.steps = 10;
  TempDir dir("pl_multi");
  for (const char* stage : {"gen-data", "train-general", "score", "prune",
                            "distill", "expand"})
    run_stage(stage, c, dir.path);

  PipelinePaths paths{dir.path};
  auto pruned = load_checkpoint(paths.checkpoint("pruned"));
  REQUIRE(pruned.partition.has_value());
  const auto free_total = pruned.partition->label_counts().at(kFree);

  auto expanded = load_checkpoint(paths.checkpoint("expanded"));
  REQUIRE(expanded.partition.has_value());
  auto counts = expanded.partition->label_counts();
  CHECK(counts.count(kFree) == 0);
  std::int64_t domain_total = 0;
  for (int k = 1; k <= 3; ++k) {
    CHECK(counts.at(domain_label(k)) > 0);
    domain_total += counts.at(domain_label(k));
  }
  CHECK(domain_total == free_total);

  // Neuron shares are near-equal, so weight counts stay within one
  // site's worth of each other (largest slice: one d_ff unit).
  const std::int64_t site_weight = 2 * c.model.d_model + 1;
  for (int i = 1; i <= 3; ++i)
    for (int j = 1; j <= 3; ++j)
      CHECK(std::abs(counts.at(domain_label(i)) - counts.at(domain_label(j)))
            <= site_weight);

  // Fine-tuning and evaluation still work with three domains.
  run_stage("finetune", c, dir.path);
  run_stage("evaluate", c, dir.path);
  auto finetuned = load_checkpoint(paths.checkpoint("finetuned"));
  CHECK(finetuned.meta.at("general_digest") ==
        expanded.meta.at("general_digest"));
}

TEST_CASE("stages demand their inputs and out-dirs pin their config") {
  PipelineConfig c = tiny_pipeline_config();
  TempDir dir("pl_guard");
  CHECK_THROWS_AS(stage_prune(c, dir.path), PipelineError);
  CHECK_THROWS_AS(stage_evaluate(c, dir.path), PipelineError);
  CHECK_THROWS_AS(stage_train_general(c, dir.path), PipelineError);

  run_stage("gen-data", c, dir.path);
  PipelineConfig other = c;
  other.seed = 8;
  CHECK_THROWS_AS(run_stage("gen-data", other, dir.path), ConfigError);
  CHECK_THROWS_AS(run_stage("bogus", c, dir.path), ConfigError);
}
