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
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "pte/corpus.hpp"
#include "pte/errors.hpp"
#include "pte/importance.hpp"
#include "pte/partition.hpp"
#include "pte/transformer.hpp"

using namespace pte;

namespace {

ModelConfig two_layer_config(int vocab) {
  ModelConfig c;
  c.n_layers = 2;
  c.d_model = 8;
  c.n_heads = 2;
  c.d_ff = 12;
  c.src_vocab = vocab;
  c.tgt_vocab = vocab;
  c.max_len = 12;
  return c;
}

std::vector<SentencePair> copy_pairs(int n, int vocab, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<SentencePair> out;
  for (int i = 0; i < n; ++i) {
    std::vector<int> s;
    const int len = static_cast<int>(rng.uniform_int(2, 6));
    for (int j = 0; j < len; ++j)
      s.push_back(static_cast<int>(rng.uniform_int(4, vocab)));
    out.push_back({s, s});
  }
  return out;
}

}  // namespace

TEST_CASE("taylor accumulation matches the hand-evaluated example") {
  // One neuron, h = 0.5 on both examples, gradients 0.2 and -0.4.
  TensorT<float> a;
  a.shape = {1, 1};
  a.v = {0.5f};
  a.g = {0.2f};
  TensorT<float> b;
  b.shape = {1, 1};
  b.v = {0.5f};
  b.g = {-0.4f};
  std::vector<double> acc(1, 0.0);
  accumulate_taylor(a, acc);
  accumulate_taylor(b, acc);
  CHECK(acc[0] / 2.0 == doctest::Approx(0.15).epsilon(1e-6));
}

TEST_CASE("taylor accumulation is linear in the gradient") {
  TensorT<float> act;
  act.shape = {3, 2};
  act.v = {0.5f, -1.0f, 2.0f, 0.25f, -0.75f, 1.5f};
  act.g = {0.1f, 0.2f, -0.3f, 0.4f, 0.5f, -0.6f};
  std::vector<double> once(2, 0.0);
  accumulate_taylor(act, once);

  for (auto& g : act.g) g *= 2.0f;
  std::vector<double> doubled(2, 0.0);
  accumulate_taylor(act, doubled);
  CHECK(doubled[0] == doctest::Approx(2.0 * once[0]).epsilon(1e-12));
  CHECK(doubled[1] == doctest::Approx(2.0 * once[1]).epsilon(1e-12));
}

TEST_CASE("missing gradients count as zero") {
  TensorT<float> act;
  act.shape = {2, 2};
  act.v = {1.0f, 2.0f, 3.0f, 4.0f};
  std::vector<double> acc(2, 5.0);
  accumulate_taylor(act, acc);
  CHECK(acc[0] == 5.0);
  CHECK(acc[1] == 5.0);
  std::vector<double> wrong(3, 0.0);
  CHECK_THROWS_AS(accumulate_taylor(act, wrong), ConsistencyError);
}

TEST_CASE("tracked sites skip the first encoder and last decoder layer") {
  ModelConfig c;
  c.n_layers = 2;
  c.d_model = 64;
  c.n_heads = 4;
  c.d_ff = 128;
  c.src_vocab = 100;
  c.tgt_vocab = 100;
  auto sites = tracked_neurons(c);
  // Per skipped pair of layers: one encoder layer (attn + ffn) and one
  // decoder layer (self + cross + ffn) remain.
  CHECK(sites.size() ==
        static_cast<std::size_t>((c.n_layers - 1) *
                                 (3 * c.d_model + 2 * c.d_ff)));
  for (const auto& site : sites) {
    CHECK(site.group.find("enc.0.") == std::string::npos);
    CHECK(site.group.find("dec.1.") == std::string::npos);
  }
  auto again = tracked_neurons(c);
  REQUIRE(again.size() == sites.size());
  for (std::size_t i = 0; i < sites.size(); ++i) {
    CHECK(again[i].group == sites[i].group);
    CHECK(again[i].channel == sites[i].channel);
  }
  ModelConfig single = c;
  single.n_layers = 1;
  CHECK(tracked_neurons(single).empty());
}

TEST_CASE("every tracked site names real tensors and channels") {
  auto cfg = two_layer_config(10);
  Transformer model(cfg);
  auto sites = tracked_neurons(cfg);
  REQUIRE_FALSE(sites.empty());
  for (const auto& site : sites) {
    REQUIRE(site.slices.size() == 3);
    for (const auto& slice : site.slices) {
      auto t = model.param(slice.tensor);
      const int extent = slice.dim == 1 ? t->shape[1] : t->shape[0];
      CHECK(slice.index >= 0);
      CHECK(slice.index < extent);
    }
  }
}

TEST_CASE("magnitude importance is the elementwise absolute value") {
  auto cfg = two_layer_config(9);
  Transformer model(cfg);
  Rng rng(5);
  model.init_params(rng);
  model.param("out.w")->v[0] = -0.7f;
  model.param("out.w")->v[1] = 0.0f;

  auto report = magnitude_importance(model);
  CHECK(report.criterion == "magnitude");
  CHECK(report.granularity == Granularity::kWeight);
  CHECK(report.weight_scores.at("out.w")[0] == 0.7f);
  CHECK(report.weight_scores.at("out.w")[1] == 0.0f);
  CHECK(report.weight_scores.count("enc.0.ln1.g") == 0);  // 1-D skipped
  for (const auto& [name, scores] : report.weight_scores) {
    const auto& t = model.param(name);
    REQUIRE(scores.size() == t->v.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
      CHECK(scores[i] >= 0.0f);
      CHECK(scores[i] == std::fabs(t->v[i]));
    }
  }

  // Argsort oracle on one matrix.
  const auto& s = report.weight_scores.at("enc.0.attn.wq");
  const auto& w = model.param("enc.0.attn.wq")->v;
  std::vector<int> by_score(s.size()), by_abs(w.size());
  std::iota(by_score.begin(), by_score.end(), 0);
  std::iota(by_abs.begin(), by_abs.end(), 0);
  std::stable_sort(by_score.begin(), by_score.end(),
                   [&](int a, int b) { return s[a] < s[b]; });
  std::stable_sort(by_abs.begin(), by_abs.end(), [&](int a, int b) {
    return std::fabs(w[a]) < std::fabs(w[b]);
  });
  CHECK(by_score == by_abs);
}

TEST_CASE("a zero weight is pruned first at any ratio") {
  auto cfg = two_layer_config(9);
  Transformer model(cfg);
  Rng rng(7);
  model.init_params(rng);
  auto wq = model.param("enc.0.attn.wq");
  for (auto& x : wq->v) x += (x >= 0 ? 0.05f : -0.05f);  // no accidental zeros
  wq->v[17] = 0.0f;

  auto report = magnitude_importance(model);
  auto part =
      build_weight_partition(model.params(), report.weight_scores, 0.05, {});
  CHECK(part.labels_of("enc.0.attn.wq")[17] == kFree);
  REQUIRE_FALSE(part.free_weight_order.empty());
}

TEST_CASE("taylor importance matches a per-example loop oracle") {
  auto cfg = two_layer_config(10);
  Transformer model(cfg);
  Rng rng(11);
  model.init_params(rng);
  auto data = copy_pairs(6, 10, 23);

  auto report = taylor_importance(model, data);
  CHECK(report.criterion == "taylor");
  CHECK(report.n_examples == 6);
  REQUIRE(report.site_scores.size() == report.sites.size());
  for (float s : report.site_scores) {
    CHECK(s >= 0.0f);
    CHECK(std::isfinite(s));
  }

  // Independent accumulation: one forward/backward per sentence, explicit
  // loops over the traced activations.
  std::vector<double> oracle(report.sites.size(), 0.0);
  for (const auto& pair : data) {
    Tape tape;
    ActivationTrace trace;
    ForwardOptions opts;
    opts.trace = &trace;
    auto loss = nll_loss<float>(&tape, model, std::span(&pair, 1), opts);
    tape.backward(loss);
    for (std::size_t i = 0; i < report.sites.size(); ++i) {
      const auto& site = report.sites[i];
      const auto& act = trace.activations.at(site.group);
      const int cols = act->cols();
      for (int r = 0; r < act->rows(); ++r) {
        const std::size_t k =
            static_cast<std::size_t>(r) * cols + site.channel;
        const double g = act->g.empty() ? 0.0 : act->g[k];
        oracle[i] += std::fabs(act->v[k] * g);
      }
    }
  }
  for (std::size_t i = 0; i < oracle.size(); ++i) {
    const double want = oracle[i] / data.size();
    const double got = report.site_scores[i];
    CHECK(std::fabs(want - got) <=
          1e-6 * (std::fabs(want) + std::fabs(got) + 1e-9));
  }
}

TEST_CASE("a dead neuron scores exactly zero") {
  auto cfg = two_layer_config(10);
  Transformer model(cfg);
  Rng rng(13);
  model.init_params(rng);
  // Silence channel 3 of the second encoder FFN: zero incoming weights and
  // bias, so its ReLU output is always zero.
  auto w1 = model.param("enc.1.ffn.w1");
  for (int r = 0; r < w1->shape[0]; ++r)
    w1->v[static_cast<std::size_t>(r) * w1->shape[1] + 3] = 0.0f;
  model.param("enc.1.ffn.b1")->v[3] = 0.0f;

  auto data = copy_pairs(4, 10, 29);
  auto report = taylor_importance(model, data);
  for (std::size_t i = 0; i < report.sites.size(); ++i)
    if (report.sites[i].group == "enc.1.ffn" && report.sites[i].channel == 3)
      CHECK(report.site_scores[i] == 0.0f);
}

TEST_CASE("taylor scores are invariant to batch partitioning") {
  auto cfg = two_layer_config(10);
  Transformer model(cfg);
  Rng rng(17);
  model.init_params(rng);
  auto data = copy_pairs(6, 10, 31);

  auto full = taylor_importance(model, data);
  auto head = taylor_importance(model, std::span(data).subspan(0, 2));
  auto tail = taylor_importance(model, std::span(data).subspan(2));
  for (std::size_t i = 0; i < full.site_scores.size(); ++i) {
    const double merged =
        (2.0 * head.site_scores[i] + 4.0 * tail.site_scores[i]) / 6.0;
    CHECK(std::fabs(merged - full.site_scores[i]) < 1e-6);
  }
}

TEST_CASE("taylor importance requires data and resets gradients") {
  auto cfg = two_layer_config(10);
  Transformer model(cfg);
  Rng rng(19);
  model.init_params(rng);
  CHECK_THROWS_AS(taylor_importance(model, {}), UsageError);

  auto data = copy_pairs(2, 10, 37);
  taylor_importance(model, data);
  for (const auto& [name, t] : model.params())
    for (float g : t->g) CHECK(g == 0.0f);
}

TEST_CASE("reports serialize deterministically") {
  auto cfg = two_layer_config(10);
  Transformer model(cfg);
  Rng rng(23);
  model.init_params(rng);
  auto data = copy_pairs(3, 10, 41);
  auto report = taylor_importance(model, data);

  const std::string path_a = "report_a.txt", path_b = "report_b.txt";
  write_report(report, path_a);
  write_report(report, path_b);
  std::ifstream fa(path_a), fb(path_b);
  std::stringstream sa, sb;
  sa << fa.rdbuf();
  sb << fb.rdbuf();
  CHECK(sa.str() == sb.str());
  CHECK(sa.str().find("criterion taylor") == 0);
  CHECK(sa.str().find("enc.1.ffn.0 ") != std::string::npos);
  std::remove(path_a.c_str());
  std::remove(path_b.c_str());

  auto mag = magnitude_importance(model);
  write_report(mag, path_a);
  std::ifstream fm(path_a);
  std::stringstream sm;
  sm << fm.rdbuf();
  CHECK(sm.str().find("tensor enc.0.attn.wq 64") != std::string::npos);
  std::remove(path_a.c_str());
}

TEST_CASE("taylor sites feed the neuron partition builder directly") {
  auto cfg = two_layer_config(10);
  Transformer model(cfg);
  Rng rng(43);
  model.init_params(rng);
  auto data = copy_pairs(4, 10, 47);
  auto report = taylor_importance(model, data);

  auto part = build_neuron_partition(model.params(), report.sites,
                                     report.site_scores, 0.25, {});
  part.check_conservation(model.params());
  CHECK(part.label_counts().at(kFree) > 0);
  // Protected layers keep every channel.
  for (Label l : part.labels_of("enc.0.ffn.b1")) CHECK(l == kGeneral);
  for (Label l : part.labels_of("dec.1.ffn.b1")) CHECK(l == kGeneral);
  std::int64_t free_b1 = 0;
  for (Label l : part.labels_of("enc.1.ffn.b1")) free_b1 += (l == kFree);
  CHECK(free_b1 == 3);  // floor(0.25 * 12)
}
