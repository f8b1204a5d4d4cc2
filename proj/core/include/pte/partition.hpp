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
// Parameter partitioning. Every parameter entry carries a label: GENERAL
// (the retained core, frozen after distillation), FREE (pruned capacity
// awaiting expansion), or DOMAIN(k) (capacity granted to domain k). A
// MaskView selects the label set visible to a forward pass; masked-out
// entries behave exactly as value zero.

#ifndef PTE_PARTITION_HPP_
#define PTE_PARTITION_HPP_

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "pte/rng.hpp"
#include "pte/tensor.hpp"

namespace pte {

using Label = std::uint8_t;

constexpr Label kGeneral = 0;
constexpr Label kFree = 1;

constexpr Label domain_label(int k) { return static_cast<Label>(1 + k); }
constexpr int domain_of(Label label) { return static_cast<int>(label) - 1; }

enum class Granularity { kWeight, kNeuron };

Granularity granularity_from_string(const std::string& s);
std::string granularity_to_string(Granularity g);

// One row, column, or bias entry of a named tensor.
//   dim 0: row `index` of a 2-D tensor, or entry `index` of a 1-D tensor.
//   dim 1: column `index` of a 2-D tensor.
struct TensorSlice {
  std::string tensor;
  int dim = 0;
  int index = 0;
};

// A prunable unit: channel `channel` of the activation traced under `group`
// (e.g. "enc.0.ffn"), together with every parameter slice that feeds or
// consumes it.
struct NeuronSite {
  std::string group;
  int channel = 0;
  std::vector<TensorSlice> slices;
};

struct ParamPartition {
  Granularity granularity = Granularity::kWeight;
  int n_domains_planned = 1;
  int next_domain = 1;

  // One label per entry of every parameter tensor, congruent with its shape.
  std::map<std::string, std::vector<Label>> labels;

  // Tensors that are never pruned (all-GENERAL by construction).
  std::set<std::string> exclusions;

  // Pruned items in ascending importance; expansion consumes from the front.
  struct WeightRef {
    std::string tensor;
    std::int64_t index = 0;
  };
  std::vector<WeightRef> free_weight_order;  // weight granularity
  std::vector<int> free_site_order;          // neuron granularity
  std::vector<NeuronSite> sites;             // neuron granularity site table

  const std::vector<Label>& labels_of(const std::string& name) const;
  std::map<Label, std::int64_t> label_counts() const;

  // Verifies label arrays are congruent with `params` and that GENERAL +
  // FREE + sum DOMAIN(k) covers every entry. Throws ConsistencyError.
  void check_conservation(
      const std::map<std::string, TensorPtr<float>>& params) const;
};

// Selects the labels visible to a forward pass. Views never activate FREE
// and always include GENERAL. Mask tensors are precomputed for the float
// parameter set handed to the constructor; other scalar types are built on
// demand.
class MaskView {
 public:
  MaskView(const ParamPartition& partition, std::set<Label> active,
           const std::map<std::string, TensorPtr<float>>& params);

  bool is_active(Label label) const { return active_.count(label) > 0; }
  const std::set<Label>& active() const { return active_; }
  const ParamPartition& partition() const { return *partition_; }

  // 0/1 mask congruent with the named tensor, or nullptr when every entry
  // is active (no masking required).
  template <typename T>
  TensorPtr<T> mask_for(const std::string& name, const Shape& shape) const;

 private:
  const ParamPartition* partition_;
  std::set<Label> active_;
  std::map<std::string, TensorPtr<float>> float_masks_;
  std::set<std::string> unmasked_;
};

// SGD update w -= lr * w.grad restricted to entries whose label is in
// `trainable`. Entries outside the set are bit-identical afterwards.
// When general_frozen is set, a trainable set containing GENERAL is a usage
// error (the fine-tuning phase must not touch the frozen core).
void masked_sgd_step(std::map<std::string, TensorPtr<float>>& params,
                     const ParamPartition& partition,
                     const std::set<Label>& trainable, float lr,
                     bool general_frozen);

// Adam with the same label restriction. Moment buffers are keyed by tensor
// name and created lazily; the step count is shared across tensors.
class MaskedAdam {
 public:
  explicit MaskedAdam(float lr, float beta1 = 0.9f, float beta2 = 0.999f,
                      float eps = 1e-8f);

  void step(std::map<std::string, TensorPtr<float>>& params,
            const ParamPartition& partition, const std::set<Label>& trainable,
            bool general_frozen);

  float lr() const { return lr_; }
  void set_lr(float lr) { lr_ = lr; }

 private:
  float lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::map<std::string, std::vector<float>> m_, v_;
};

// Every entry of every tensor labeled GENERAL; the label set full training
// (plain fine-tuning, general pre-training) runs under.
ParamPartition all_general_partition(
    const std::map<std::string, TensorPtr<float>>& params);

// Weight granularity: within each target matrix the floor(ratio * numel)
// lowest-scoring entries become FREE (ties by lower flat index). Targets
// are the non-excluded 2-D tensors covered by `scores`; everything else is
// all-GENERAL.
ParamPartition build_weight_partition(
    const std::map<std::string, TensorPtr<float>>& params,
    const std::map<std::string, std::vector<float>>& scores, double ratio,
    const std::set<std::string>& exclusions, int n_domains_planned = 1);

// Neuron granularity: within each site group the floor(ratio * group size)
// lowest-scoring sites become FREE; every slice of a pruned site is
// labeled FREE. `scores` is indexed like `sites`.
ParamPartition build_neuron_partition(
    const std::map<std::string, TensorPtr<float>>& params,
    const std::vector<NeuronSite>& sites, const std::vector<float>& scores,
    double ratio, const std::set<std::string>& exclusions,
    int n_domains_planned = 1);

enum class ExpandInit { kZero, kUniform };

// Relabels the next 1/n_domains_planned share of the FREE pool (all of it
// for a single planned domain) as DOMAIN(domain), consuming the pool in
// ascending importance, and re-initializes the affected values. Throws
// CapacityError when the pool is exhausted.
void expand(ParamPartition& partition,
            std::map<std::string, TensorPtr<float>>& params, int domain,
            ExpandInit init, Rng* rng);

}  // namespace pte

#endif  // PTE_PARTITION_HPP_
