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
// Comparison systems: plain fine-tuning, mixture-of-losses (Eq. 14),
// elastic weight consolidation (Eq. 15), and the random-pruning and
// selective fine-tuning ablations, plus the shared training loop they and
// the pipeline stages run on.

#ifndef PTE_BASELINES_HPP_
#define PTE_BASELINES_HPP_

#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "pte/corpus.hpp"
#include "pte/partition.hpp"
#include "pte/rng.hpp"
#include "pte/tensor.hpp"
#include "pte/transformer.hpp"

namespace pte {

// Builds the batch loss on the tape. The batch is already selected.
using LossFn =
    std::function<TensorPtr<float>(Tape*, std::span<const SentencePair>)>;

struct TrainOptions {
  float lr = 7.5e-5f;  // §4.2 default for every system
  int steps = 100;
  int batch_size = 8;
  std::set<Label> trainable = {kGeneral};
  bool general_frozen = false;
  std::string optimizer = "adam";  // or "sgd"

  void validate() const;  // throws ConfigError
};

// Shuffle-and-cycle minibatch loop: draws batches from `data` in seeded
// shuffled order, builds the loss, backpropagates, and applies the
// label-restricted update. Returns the final batch loss (0 for 0 steps).
float train_model(Transformer& model, const ParamPartition& partition,
                  std::span<const SentencePair> data, const LossFn& loss_fn,
                  const TrainOptions& opts, Rng& rng);

// Plain fine-tuning: every parameter trains on the in-domain data (the
// forgetting-prone baseline).
float finetune(Transformer& model, std::span<const SentencePair> data,
               const TrainOptions& opts, Rng& rng);

// Eq. 14: nll_loss(batch) + alpha * mean word-level KD against the frozen
// general teacher on the same batch. alpha = 0 is exactly the plain NLL.
TensorPtr<float> mol_loss(Tape* tape, const Transformer& model,
                          const Transformer& teacher,
                          std::span<const SentencePair> batch, float alpha);

struct FisherDiag {
  std::map<std::string, std::vector<float>> values;
  std::int64_t n_samples = 0;
};

// Empirical diagonal Fisher: F_i = mean over sample sentences of the
// squared NLL gradient. Deterministic for a fixed sample order; the model's
// gradients are zeroed afterwards.
FisherDiag estimate_fisher(const Transformer& model,
                           std::span<const SentencePair> sample);

// alpha-free quadratic penalty sum_i F_i (theta_i - snapshot_i)^2 over every
// parameter, with gradient 2 F_i (theta_i - snapshot_i).
TensorPtr<float> ewc_penalty(
    Tape* tape, const std::map<std::string, TensorPtr<float>>& params,
    const FisherDiag& fisher,
    const std::map<std::string, std::vector<float>>& snapshot);

// Eq. 15: nll_loss(batch) + alpha * ewc_penalty.
TensorPtr<float> ewc_loss(
    Tape* tape, const Transformer& model, std::span<const SentencePair> batch,
    const FisherDiag& fisher,
    const std::map<std::string, std::vector<float>>& snapshot, float alpha);

// Values of every parameter, keyed by name (the theta_G snapshot).
std::map<std::string, std::vector<float>> param_snapshot(
    const Transformer& model);

// Partition built from seeded uniform-random scores instead of importance.
ParamPartition ablation_random_partition(const Transformer& model,
                                         double ratio,
                                         Granularity granularity, Rng& rng);

// Selective fine-tuning: trains exactly the FREE-labeled (unimportant)
// parameters; the full unmasked model serves both domains at inference.
float ablation_selective_ft(Transformer& model,
                            const ParamPartition& partition,
                            std::span<const SentencePair> data,
                            const TrainOptions& opts, Rng& rng);

}  // namespace pte

#endif  // PTE_BASELINES_HPP_
