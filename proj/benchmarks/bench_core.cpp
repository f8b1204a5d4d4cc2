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
// Microbenchmarks for the hot paths: tape matmul, transformer forward and
// backward, masked forward, beam decoding, Taylor scoring, and BLEU.

#include <benchmark/benchmark.h>

#include <vector>

#include "pte/corpus.hpp"
#include "pte/importance.hpp"
#include "pte/metrics.hpp"
#include "pte/partition.hpp"
#include "pte/tensor.hpp"
#include "pte/transformer.hpp"

namespace {

using namespace pte;

ModelConfig bench_config() {
  ModelConfig c;
  c.n_layers = 2;
  c.d_model = 64;
  c.n_heads = 4;
  c.d_ff = 128;
  c.src_vocab = 68;
  c.tgt_vocab = 68;
  c.max_len = 32;
  return c;
}

Transformer bench_model() {
  Transformer model(bench_config());
  Rng rng(17);
  model.init_params(rng);
  return model;
}

std::vector<SentencePair> bench_batch(int n, int len) {
  Rng rng(23);
  std::vector<SentencePair> batch(n);
  for (auto& pair : batch) {
    pair.src.resize(len);
    pair.tgt.resize(len);
    for (int& id : pair.src) id = rng.uniform_int(4, 68);
    for (int& id : pair.tgt) id = rng.uniform_int(4, 68);
  }
  return batch;
}

void BM_TapeMatmul(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Rng rng(5);
  auto a = make_tensor<float>({n, n});
  auto b = make_tensor<float>({n, n});
  a->requires_grad = b->requires_grad = true;
  for (auto& v : a->v) v = static_cast<float>(rng.normal());
  for (auto& v : b->v) v = static_cast<float>(rng.normal());
  for (auto _ : state) {
    Tape tape;
    auto c = matmul(&tape, a, b);
    auto loss = sum(&tape, c);
    tape.backward(loss);
    benchmark::DoNotOptimize(a->g.data());
    a->zero_grad();
    b->zero_grad();
  }
  state.SetItemsProcessed(state.iterations() * 2LL * n * n * n);
}

void BM_Forward(benchmark::State& state) {
  Transformer model = bench_model();
  auto batch = bench_batch(1, static_cast<int>(state.range(0)));
  std::vector<int> tgt_in = {Vocabulary::kBos};
  tgt_in.insert(tgt_in.end(), batch[0].tgt.begin(), batch[0].tgt.end());
  for (auto _ : state) {
    auto logits = model.forward(nullptr, batch[0].src, tgt_in, {});
    benchmark::DoNotOptimize(logits->v.data());
  }
}

void BM_ForwardBackward(benchmark::State& state) {
  Transformer model = bench_model();
  auto batch = bench_batch(8, static_cast<int>(state.range(0)));
  for (auto _ : state) {
    Tape tape;
    auto loss = nll_loss<float>(&tape, model, batch, {});
    tape.backward(loss);
    benchmark::DoNotOptimize(loss->v[0]);
    model.zero_grads();
  }
}

void BM_MaskedForward(benchmark::State& state) {
  Transformer model = bench_model();
  auto report = magnitude_importance(model);
  auto partition =
      build_weight_partition(model.params(), report.weight_scores, 0.3,
                             standard_exclusions(model.params()));
  MaskView view(partition, {kGeneral}, model.params());
  auto batch = bench_batch(1, static_cast<int>(state.range(0)));
  std::vector<int> tgt_in = {Vocabulary::kBos};
  tgt_in.insert(tgt_in.end(), batch[0].tgt.begin(), batch[0].tgt.end());
  ForwardOptions opts;
  opts.view = &view;
  for (auto _ : state) {
    auto logits = model.forward(nullptr, batch[0].src, tgt_in, opts);
    benchmark::DoNotOptimize(logits->v.data());
  }
}

void BM_BeamDecode(benchmark::State& state) {
  Transformer model = bench_model();
  auto batch = bench_batch(1, 12);
  const int beam = static_cast<int>(state.range(0));
  for (auto _ : state) {
    auto result = decode(model, batch[0].src, beam, 16, nullptr);
    benchmark::DoNotOptimize(result.tokens.data());
  }
}

void BM_TaylorScore(benchmark::State& state) {
  Transformer model = bench_model();
  auto batch = bench_batch(static_cast<int>(state.range(0)), 12);
  for (auto _ : state) {
    auto report = taylor_importance(model, batch);
    benchmark::DoNotOptimize(report.site_scores.data());
  }
}

void BM_Bleu(benchmark::State& state) {
  Rng rng(31);
  const int n = static_cast<int>(state.range(0));
  std::vector<std::vector<int>> hyps(n), refs(n);
  for (int i = 0; i < n; ++i) {
    const int len = rng.uniform_int(8, 24);
    hyps[i].resize(len);
    refs[i].resize(len);
    for (int& id : hyps[i]) id = rng.uniform_int(4, 68);
    refs[i] = hyps[i];
    if (len > 2) refs[i][1] = rng.uniform_int(4, 68);
  }
  for (auto _ : state) {
    double score = bleu(hyps, refs);
    benchmark::DoNotOptimize(score);
  }
}

BENCHMARK(BM_TapeMatmul)->Arg(32)->Arg(64)->Arg(128);
BENCHMARK(BM_Forward)->Arg(8)->Arg(16);
BENCHMARK(BM_ForwardBackward)->Arg(8)->Arg(16);
BENCHMARK(BM_MaskedForward)->Arg(8)->Arg(16);
BENCHMARK(BM_BeamDecode)->Arg(1)->Arg(4);
BENCHMARK(BM_TaylorScore)->Arg(4);
BENCHMARK(BM_Bleu)->Arg(64)->Arg(512);

}  // namespace

BENCHMARK_MAIN();
