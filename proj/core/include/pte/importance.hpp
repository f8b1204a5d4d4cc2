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
// Importance estimation for pruning. The Taylor criterion scores a neuron
// by the averaged |activation x gradient| of its traced output (Eq. 9); the
// magnitude criterion scores an individual weight by its absolute value
// (Eq. 10).

#ifndef PTE_IMPORTANCE_HPP_
#define PTE_IMPORTANCE_HPP_

#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "pte/corpus.hpp"
#include "pte/partition.hpp"
#include "pte/transformer.hpp"

namespace pte {

struct ImportanceReport {
  Granularity granularity = Granularity::kWeight;
  std::string criterion;        // "magnitude" or "taylor"
  std::int64_t n_examples = 0;  // sentences scored (Taylor only)

  // Weight granularity: one score per entry of every 2-D parameter tensor.
  std::map<std::string, std::vector<float>> weight_scores;

  // Neuron granularity: scores indexed like `sites`.
  std::vector<NeuronSite> sites;
  std::vector<float> site_scores;
};

// Neuron sites the Taylor criterion tracks: every FFN hidden unit and every
// attention value channel, except those of the first encoder layer and the
// last decoder layer. Ordering is fixed: encoder layers ascending (attention
// then FFN), then decoder layers ascending (self, cross, FFN), channels
// ascending within each group.
std::vector<NeuronSite> tracked_neurons(const ModelConfig& config);

// Tensors the standard pruning policy never touches: every layer-norm gain
// and bias. (First-encoder-layer and last-decoder-layer protection in
// neuron mode comes from tracked_neurons leaving them untracked.)
std::set<std::string> standard_exclusions(
    const std::map<std::string, TensorPtr<float>>& params);

// Eq. 10: score(w) = |w| for every 2-D parameter tensor.
ImportanceReport magnitude_importance(const Transformer& model);

// Eq. 9: score(site) = (1/T) sum over sentences and token positions of
// |activation x gradient|, T = number of sentences. Dropout stays off; the
// model's parameter gradients are zeroed afterwards.
ImportanceReport taylor_importance(const Transformer& model,
                                   std::span<const SentencePair> data);

// Adds |v x g| per channel of one traced activation [rows x channels] into
// `acc` (length channels). Zero rows contribute nothing; a missing gradient
// buffer counts as all-zero gradients.
void accumulate_taylor(const TensorT<float>& act, std::vector<double>& acc);

// Structured-text dump (site or tensor name followed by scores) for
// inspection; byte-deterministic for a given report.
void write_report(const ImportanceReport& report, const std::string& path);

// Inverse of write_report. Neuron-mode sites carry group and channel only;
// callers rebuild the parameter slices from the model configuration via
// tracked_neurons. Malformed input is a data error.
ImportanceReport read_report(const std::string& path);

}  // namespace pte

#endif  // PTE_IMPORTANCE_HPP_
