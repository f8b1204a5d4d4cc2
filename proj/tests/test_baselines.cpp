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
#include <cmath>
#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "doctest.h"
#include "pte/baselines.hpp"
#include "pte/corpus.hpp"
#include "pte/distill.hpp"
#include "pte/errors.hpp"
#include "pte/importance.hpp"
#include "pte/partition.hpp"
#include "pte/transformer.hpp"

using namespace pte;

namespace {

ModelConfig tiny_config(int vocab) {
  ModelConfig c;
  c.n_layers = 2;
  c.d_model = 16;
  c.n_heads = 2;
  c.d_ff = 32;
  c.src_vocab = vocab;
  c.tgt_vocab = vocab;
  c.max_len = 12;
  return c;
}

Corpus make_corpus(DomainKind kind, std::uint64_t seed, int n,
                   const Vocabulary& vocab) {
  DomainSpec spec;
  spec.name = kind == DomainKind::kCopy ? "general" : "in";
  spec.kind = kind;
  spec.word_lo = 0;
  spec.word_hi = 8;
  spec.len_lo = 2;
  spec.len_hi = 6;
  spec.seed = seed;
  return generate_domain(spec, n, vocab);
}

bool params_equal(const Transformer& a, const Transformer& b) {
  for (const auto& [name, t] : a.params()) {
    const auto& u = b.param(name);
    if (t->v.size() != u->v.size()) return false;
    if (std::memcmp(t->v.data(), u->v.data(), t->v.size() * sizeof(float)) !=
        0)
      return false;
  }
  return true;
}

// Mean word-level KD of `model` against `teacher` over `data`, the
// function-space distance MOL is meant to bound.
double mean_kd(const Transformer& teacher, const Transformer& model,
               std::span<const SentencePair> data) {
  double total = 0.0;
  for (const auto& pair : data) {
    std::vector<int> tgt_in = {Vocabulary::kBos};
    tgt_in.insert(tgt_in.end(), pair.tgt.begin(), pair.tgt.end());
    auto t = teacher.forward(nullptr, pair.src, tgt_in, {});
    auto s = model.forward(nullptr, pair.src, tgt_in, {});
    total += kd_loss<float>(nullptr, t, s, 1.0f)->v[0];
  }
  return total / static_cast<double>(data.size());
}

}  // namespace

TEST_CASE("zero-step fine-tuning leaves every parameter bit-identical") {
  auto vocab = Vocabulary::fixed(8);
  Transformer model(tiny_config(vocab.size()));
  Rng rng(3);
  model.init_params(rng);
  const auto before = model.clone();

  auto data = make_corpus(DomainKind::kCopy, 5, 8, vocab);
  TrainOptions opts;
  opts.steps = 0;
  Rng train_rng(7);
  const float loss = finetune(model, data.pairs, opts, train_rng);
  CHECK(loss == 0.0f);
  CHECK(params_equal(model, before));
}

TEST_CASE("fine-tuning reduces the training loss") {
  auto vocab = Vocabulary::fixed(8);
  Transformer model(tiny_config(vocab.size()));
  Rng rng(11);
  model.init_params(rng);

  auto data = make_corpus(DomainKind::kCopy, 13, 16, vocab);
  const float before = nll_loss<float>(nullptr, model, data.pairs, {})->v[0];

  TrainOptions opts;
  opts.steps = 60;
  opts.lr = 1e-3f;
  opts.batch_size = 8;
  Rng train_rng(17);
  finetune(model, data.pairs, opts, train_rng);
  const float after = nll_loss<float>(nullptr, model, data.pairs, {})->v[0];
  CHECK(after < before);
}

TEST_CASE("train options are validated") {
  TrainOptions opts;
  opts.lr = 0.0f;
  CHECK_THROWS_AS(opts.validate(), ConfigError);
  opts = TrainOptions{};
  opts.steps = -1;
  CHECK_THROWS_AS(opts.validate(), ConfigError);
  opts = TrainOptions{};
  opts.batch_size = 0;
  CHECK_THROWS_AS(opts.validate(), ConfigError);
  opts = TrainOptions{};
  opts.trainable.clear();
  CHECK_THROWS_AS(opts.validate(), ConfigError);
  opts = TrainOptions{};
  opts.optimizer = "lbfgs";
  CHECK_THROWS_AS(opts.validate(), ConfigError);
}

TEST_CASE("train_model rejects an empty dataset") {
  auto vocab = Vocabulary::fixed(8);
  Transformer model(tiny_config(vocab.size()));
  Rng rng(3);
  model.init_params(rng);
  TrainOptions opts;
  Rng train_rng(5);
  CHECK_THROWS_AS(finetune(model, {}, opts, train_rng), UsageError);
}

TEST_CASE("mol loss with alpha zero is exactly the plain nll") {
  auto vocab = Vocabulary::fixed(8);
  Transformer model(tiny_config(vocab.size()));
  Transformer teacher(tiny_config(vocab.size()));
  Rng rng(19);
  model.init_params(rng);
  teacher.init_params(rng);

  auto data = make_corpus(DomainKind::kReverse, 23, 6, vocab);
  auto mol = mol_loss(nullptr, model, teacher, data.pairs, 0.0f);
  auto nll = nll_loss<float>(nullptr, model, data.pairs, {});
  CHECK(mol->v[0] == nll->v[0]);
}

TEST_CASE("mol loss is the nll plus alpha times the batch-mean kd") {
  auto vocab = Vocabulary::fixed(8);
  Transformer model(tiny_config(vocab.size()));
  Transformer teacher(tiny_config(vocab.size()));
  Rng rng(29);
  model.init_params(rng);
  teacher.init_params(rng);

  auto data = make_corpus(DomainKind::kReverse, 31, 5, vocab);
  const float alpha = 0.7f;
  auto mol = mol_loss(nullptr, model, teacher, data.pairs, alpha);

  auto nll = nll_loss<float>(nullptr, model, data.pairs, {});
  TensorPtr<float> acc_kd;
  for (const auto& pair : data.pairs) {
    std::vector<int> tgt_in = {Vocabulary::kBos};
    tgt_in.insert(tgt_in.end(), pair.tgt.begin(), pair.tgt.end());
    auto t = teacher.forward(nullptr, pair.src, tgt_in, {});
    auto s = model.forward(nullptr, pair.src, tgt_in, {});
    auto kd = kd_loss<float>(nullptr, t, s, 1.0f);
    acc_kd = acc_kd ? add<float>(nullptr, acc_kd, kd) : kd;
  }
  const float inv = 1.0f / static_cast<float>(data.pairs.size());
  const float expected = nll->v[0] + acc_kd->v[0] * (alpha * inv);
  CHECK(mol->v[0] == doctest::Approx(expected).epsilon(1e-6));
  CHECK_THROWS_AS(mol_loss(nullptr, model, teacher, data.pairs, -0.5f),
                  ConfigError);
  CHECK_THROWS_AS(mol_loss(nullptr, model, teacher, {}, 1.0f), UsageError);
}

TEST_CASE("a larger mol alpha keeps the model closer to the teacher") {
  auto vocab = Vocabulary::fixed(8);
  Transformer teacher(tiny_config(vocab.size()));
  Rng rng(37);
  teacher.init_params(rng);

  auto general = make_corpus(DomainKind::kCopy, 41, 16, vocab);
  ParamPartition part = all_general_partition(teacher.params());
  for (int e = 0; e < 80; ++e) {
    Tape tape;
    auto l = nll_loss<float>(&tape, teacher, general.pairs, {});
    teacher.zero_grads();
    tape.backward(l);
    masked_sgd_step(teacher.params(), part, {kGeneral}, 0.05f, false);
  }

  auto in_domain = make_corpus(DomainKind::kReverse, 43, 16, vocab);
  auto run = [&](float alpha) {
    auto model = teacher.clone();
    TrainOptions opts;
    opts.steps = 40;
    opts.lr = 1e-3f;
    opts.batch_size = 8;
    LossFn loss_fn = [&](Tape* tape, std::span<const SentencePair> batch) {
      return mol_loss(tape, model, teacher, batch, alpha);
    };
    auto model_part = all_general_partition(model.params());
    Rng train_rng(47);
    train_model(model, model_part, in_domain.pairs, loss_fn, opts, train_rng);
    return mean_kd(teacher, model, general.pairs);
  };

  const double drift_plain = run(0.0f);
  const double drift_mol = run(8.0f);
  CHECK(drift_mol < drift_plain);
}

TEST_CASE("single-sample fisher equals the squared gradient exactly") {
  auto vocab = Vocabulary::fixed(8);
  Transformer model(tiny_config(vocab.size()));
  Rng rng(53);
  model.init_params(rng);

  auto data = make_corpus(DomainKind::kCopy, 59, 1, vocab);
  auto fisher = estimate_fisher(model, data.pairs);
  CHECK(fisher.n_samples == 1);

  Tape tape;
  auto loss = nll_loss<float>(&tape, model, data.pairs, {});
  model.zero_grads();
  tape.backward(loss);
  for (const auto& [name, f] : fisher.values) {
    const auto& t = model.param(name);
    REQUIRE(f.size() == t->v.size());
    for (std::size_t i = 0; i < f.size(); ++i) {
      const float g = t->g.empty() ? 0.0f : t->g[i];
      CHECK(f[i] == g * g);
    }
  }
}

TEST_CASE("fisher matches a per-sample accumulation loop") {
  auto vocab = Vocabulary::fixed(8);
  Transformer model(tiny_config(vocab.size()));
  Rng rng(61);
  model.init_params(rng);

  auto data = make_corpus(DomainKind::kCopy, 67, 5, vocab);
  auto fisher = estimate_fisher(model, data.pairs);
  CHECK(fisher.n_samples == 5);

  std::map<std::string, std::vector<double>> acc;
  for (const auto& [name, t] : model.params())
    acc[name].assign(t->v.size(), 0.0);
  for (const auto& pair : data.pairs) {
    Tape tape;
    std::span<const SentencePair> one(&pair, 1);
    auto loss = nll_loss<float>(&tape, model, one, {});
    model.zero_grads();
    tape.backward(loss);
    for (const auto& [name, t] : model.params()) {
      if (t->g.empty()) continue;
      for (std::size_t i = 0; i < t->g.size(); ++i)
        acc[name][i] += static_cast<double>(t->g[i]) * t->g[i];
    }
  }
  for (const auto& [name, f] : fisher.values)
    for (std::size_t i = 0; i < f.size(); ++i)
      CHECK(f[i] ==
            doctest::Approx(acc[name][i] / 5.0).epsilon(1e-8).scale(1.0));
}

TEST_CASE("fisher is invariant to the sample order") {
  auto vocab = Vocabulary::fixed(8);
  Transformer model(tiny_config(vocab.size()));
  Rng rng(71);
  model.init_params(rng);

  auto data = make_corpus(DomainKind::kCopy, 73, 6, vocab);
  auto forward = estimate_fisher(model, data.pairs);
  std::vector<SentencePair> reversed(data.pairs.rbegin(), data.pairs.rend());
  auto backward = estimate_fisher(model, reversed);
  for (const auto& [name, f] : forward.values)
    for (std::size_t i = 0; i < f.size(); ++i)
      CHECK(f[i] == doctest::Approx(backward.values.at(name)[i])
                        .epsilon(1e-10)
                        .scale(1.0));
}

TEST_CASE("parameters that never touch the loss get zero fisher mass") {
  auto vocab = Vocabulary::fixed(8);
  Transformer model(tiny_config(vocab.size()));
  Rng rng(79);
  model.init_params(rng);

  // Sentences over words 0..3 only; word 7's embedding rows stay unused.
  DomainSpec spec;
  spec.kind = DomainKind::kCopy;
  spec.word_lo = 0;
  spec.word_hi = 4;
  spec.len_lo = 2;
  spec.len_hi = 5;
  spec.seed = 83;
  auto data = generate_domain(spec, 6, vocab);

  auto fisher = estimate_fisher(model, data.pairs);
  const int unused = Vocabulary::word_id(7);
  const int d = model.config().d_model;
  const auto& src_f = fisher.values.at("src_embed");
  const auto& tgt_f = fisher.values.at("tgt_embed");
  for (int j = 0; j < d; ++j) {
    CHECK(src_f[static_cast<std::size_t>(unused) * d + j] == 0.0f);
    CHECK(tgt_f[static_cast<std::size_t>(unused) * d + j] == 0.0f);
  }

  // The estimator leaves no gradients behind.
  for (const auto& [name, t] : model.params())
    for (float g : t->g) CHECK(g == 0.0f);

  CHECK_THROWS_AS(estimate_fisher(model, {}), UsageError);
}

TEST_CASE("ewc penalty reproduces the hand-worked example") {
  auto w = make_tensor<float>({2}, {0.6f, 0.3f});
  w->requires_grad = true;
  std::map<std::string, TensorPtr<float>> params = {{"w", w}};
  FisherDiag fisher;
  fisher.values["w"] = {1.0f, 2.0f};
  std::map<std::string, std::vector<float>> snapshot = {{"w", {0.5f, 0.2f}}};

  auto penalty = ewc_penalty(nullptr, params, fisher, snapshot);
  CHECK(penalty->v[0] == doctest::Approx(0.03).epsilon(1e-6));
}

TEST_CASE("ewc penalty gradient is 2 alpha F delta and matches fd") {
  auto w = make_tensor<float>({3}, {0.5f, -0.25f, 1.0f});
  w->requires_grad = true;
  std::map<std::string, TensorPtr<float>> params = {{"w", w}};
  FisherDiag fisher;
  fisher.values["w"] = {0.5f, 2.0f, 0.0f};
  std::map<std::string, std::vector<float>> snapshot = {
      {"w", {0.25f, 0.25f, -1.0f}}};

  Tape tape;
  auto penalty = ewc_penalty(&tape, params, fisher, snapshot);
  tape.backward(penalty);
  REQUIRE(w->g.size() == 3);
  CHECK(w->g[0] == doctest::Approx(2.0 * 0.5 * 0.25).epsilon(1e-6));
  CHECK(w->g[1] == doctest::Approx(2.0 * 2.0 * -0.5).epsilon(1e-6));
  CHECK(w->g[2] == 0.0f);  // zero fisher mass, no pull

  // The penalty is quadratic, so central differences are exact up to
  // rounding even at a large step.
  const float h = 0.01f;
  for (int i = 0; i < 3; ++i) {
    const float saved = w->v[i];
    w->v[i] = saved + h;
    const float up = ewc_penalty(nullptr, params, fisher, snapshot)->v[0];
    w->v[i] = saved - h;
    const float dn = ewc_penalty(nullptr, params, fisher, snapshot)->v[0];
    w->v[i] = saved;
    const float fd = (up - dn) / (2.0f * h);
    CHECK(w->g[i] == doctest::Approx(fd).epsilon(1e-3).scale(1.0));
  }
}

TEST_CASE("ewc loss equals the nll exactly at the snapshot point") {
  auto vocab = Vocabulary::fixed(8);
  Transformer model(tiny_config(vocab.size()));
  Rng rng(89);
  model.init_params(rng);

  auto data = make_corpus(DomainKind::kReverse, 97, 4, vocab);
  auto snapshot = param_snapshot(model);
  auto fisher = estimate_fisher(model, data.pairs);

  auto penalty = ewc_penalty(nullptr, model.params(), fisher, snapshot);
  CHECK(penalty->v[0] == 0.0f);

  auto ewc = ewc_loss(nullptr, model, data.pairs, fisher, snapshot, 1.5f);
  auto nll = nll_loss<float>(nullptr, model, data.pairs, {});
  CHECK(ewc->v[0] == nll->v[0]);
}

TEST_CASE("ewc loss is the nll plus the scaled penalty and is nonnegative") {
  auto vocab = Vocabulary::fixed(8);
  Transformer model(tiny_config(vocab.size()));
  Rng rng(101);
  model.init_params(rng);

  auto data = make_corpus(DomainKind::kReverse, 103, 4, vocab);
  auto fisher = estimate_fisher(model, data.pairs);
  auto snapshot = param_snapshot(model);
  // Drift every parameter a little so the penalty is active.
  for (const auto& [name, t] : model.params())
    for (auto& v : t->v) v += 0.01f;

  auto penalty = ewc_penalty(nullptr, model.params(), fisher, snapshot);
  CHECK(penalty->v[0] > 0.0f);
  auto nll = nll_loss<float>(nullptr, model, data.pairs, {});
  auto ewc = ewc_loss(nullptr, model, data.pairs, fisher, snapshot, 0.5f);
  CHECK(ewc->v[0] ==
        doctest::Approx(nll->v[0] + 0.5f * penalty->v[0]).epsilon(1e-6));
  CHECK_THROWS_AS(ewc_loss(nullptr, model, data.pairs, fisher, snapshot, -1.0f),
                  ConfigError);

  // Congruence failures are consistency errors.
  auto broken = snapshot;
  broken.erase("out.b");
  CHECK_THROWS_AS(ewc_penalty(nullptr, model.params(), fisher, broken),
                  ConsistencyError);
  auto short_fisher = fisher;
  short_fisher.values["out.b"].pop_back();
  CHECK_THROWS_AS(ewc_penalty(nullptr, model.params(), short_fisher, snapshot),
                  ConsistencyError);
}

TEST_CASE("random weight partition frees floor(ratio numel) per matrix") {
  auto vocab = Vocabulary::fixed(8);
  Transformer model(tiny_config(vocab.size()));
  Rng rng(107);
  model.init_params(rng);

  Rng part_rng(109);
  auto part = ablation_random_partition(model, 0.3, Granularity::kWeight,
                                        part_rng);
  CHECK(part.granularity == Granularity::kWeight);
  for (const auto& [name, t] : model.params()) {
    const auto& labels = part.labels.at(name);
    std::int64_t free = 0;
    for (Label l : labels) free += (l == kFree) ? 1 : 0;
    if (t->shape.size() == 2 && name.find(".ln") == std::string::npos) {
      CHECK(free == static_cast<std::int64_t>(0.3 * t->numel()));
    } else {
      CHECK(free == 0);
    }
  }

  Rng same_rng(109);
  auto again = ablation_random_partition(model, 0.3, Granularity::kWeight,
                                         same_rng);
  CHECK(again.labels == part.labels);

  Rng other_rng(113);
  auto other = ablation_random_partition(model, 0.3, Granularity::kWeight,
                                         other_rng);
  CHECK(other.labels != part.labels);
}

TEST_CASE("random neuron partition frees floor(ratio size) sites per group") {
  auto vocab = Vocabulary::fixed(8);
  Transformer model(tiny_config(vocab.size()));
  Rng rng(127);
  model.init_params(rng);

  Rng part_rng(131);
  auto part = ablation_random_partition(model, 0.25, Granularity::kNeuron,
                                        part_rng);
  CHECK(part.granularity == Granularity::kNeuron);
  // Tracked groups: enc.1.attn (16), enc.1.ffn (32), dec.0.self (16),
  // dec.0.cross (16), dec.0.ffn (32); floor(0.25 * size) each.
  CHECK(part.free_site_order.size() == 4 + 8 + 4 + 4 + 8);
  // The protected layers stay fully GENERAL.
  for (const auto& name : {"enc.0.ffn.b1", "dec.1.ffn.b1"})
    for (Label l : part.labels.at(name)) CHECK(l == kGeneral);
}

TEST_CASE("selective fine-tuning trains only the free parameters") {
  auto vocab = Vocabulary::fixed(8);
  Transformer model(tiny_config(vocab.size()));
  Rng rng(137);
  model.init_params(rng);

  auto report = magnitude_importance(model);
  auto part = build_weight_partition(model.params(), report.weight_scores,
                                     0.3, {});
  const auto before = model.clone();

  auto data = make_corpus(DomainKind::kReverse, 139, 12, vocab);
  TrainOptions opts;
  opts.steps = 20;
  opts.lr = 1e-3f;
  Rng train_rng(149);
  const float loss = ablation_selective_ft(model, part, data.pairs, opts,
                                           train_rng);
  CHECK(std::isfinite(loss));

  bool any_free_changed = false;
  for (const auto& [name, t] : model.params()) {
    const auto& labels = part.labels.at(name);
    const auto& old = before.param(name);
    for (std::size_t i = 0; i < t->v.size(); ++i) {
      if (labels[i] == kGeneral) {
        CHECK(t->v[i] == old->v[i]);
      } else if (t->v[i] != old->v[i]) {
        any_free_changed = true;
      }
    }
  }
  CHECK(any_free_changed);
}
