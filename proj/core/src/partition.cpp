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

#include "pte/partition.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pte/errors.hpp"

namespace pte {

Granularity granularity_from_string(const std::string& s) {
  if (s == "weight") return Granularity::kWeight;
  if (s == "neuron") return Granularity::kNeuron;
  throw ConfigError("unknown granularity: " + s);
}

std::string granularity_to_string(Granularity g) {
  return g == Granularity::kWeight ? "weight" : "neuron";
}

const std::vector<Label>& ParamPartition::labels_of(
    const std::string& name) const {
  auto it = labels.find(name);
  if (it == labels.end())
    throw ConsistencyError("partition has no labels for tensor: " + name);
  return it->second;
}

std::map<Label, std::int64_t> ParamPartition::label_counts() const {
  std::map<Label, std::int64_t> counts;
  for (const auto& [name, arr] : labels)
    for (Label l : arr) ++counts[l];
  return counts;
}

void ParamPartition::check_conservation(
    const std::map<std::string, TensorPtr<float>>& params) const {
  if (labels.size() != params.size())
    throw ConsistencyError("partition covers " +
                           std::to_string(labels.size()) + " tensors, model " +
                           std::to_string(params.size()));
  std::int64_t total = 0;
  for (const auto& [name, t] : params) {
    const auto& arr = labels_of(name);
    if (static_cast<std::int64_t>(arr.size()) != t->numel())
      throw ConsistencyError("label array for " + name +
                             " is not congruent with the tensor");
    total += t->numel();
    if (exclusions.count(name)) {
      for (Label l : arr)
        if (l != kGeneral)
          throw ConsistencyError("excluded tensor " + name +
                                 " has a non-GENERAL label");
    }
  }
  std::int64_t labeled = 0;
  for (const auto& [label, n] : label_counts()) labeled += n;
  if (labeled != total)
    throw ConsistencyError("label count " + std::to_string(labeled) +
                           " does not match parameter count " +
                           std::to_string(total));
}

MaskView::MaskView(const ParamPartition& partition, std::set<Label> active,
                   const std::map<std::string, TensorPtr<float>>& params)
    : partition_(&partition), active_(std::move(active)) {
  if (active_.count(kFree))
    throw UsageError("a mask view must not activate FREE labels");
  if (!active_.count(kGeneral))
    throw UsageError("a mask view must include the GENERAL label");
  for (const auto& [name, t] : params) {
    const auto& arr = partition_->labels_of(name);
    if (static_cast<std::int64_t>(arr.size()) != t->numel())
      throw ConsistencyError("label array for " + name +
                             " is not congruent with the tensor");
    bool all_active = true;
    for (Label l : arr)
      if (!active_.count(l)) {
        all_active = false;
        break;
      }
    if (all_active) {
      unmasked_.insert(name);
      continue;
    }
    auto mask = make_tensor<float>(t->shape);
    for (std::size_t i = 0; i < arr.size(); ++i)
      mask->v[i] = active_.count(arr[i]) ? 1.0f : 0.0f;
    float_masks_[name] = std::move(mask);
  }
}

template <typename T>
TensorPtr<T> MaskView::mask_for(const std::string& name,
                                const Shape& shape) const {
  if (unmasked_.count(name)) return nullptr;
  if constexpr (std::is_same_v<T, float>) {
    auto it = float_masks_.find(name);
    if (it != float_masks_.end()) return it->second;
  }
  const auto& arr = partition_->labels_of(name);
  if (static_cast<std::int64_t>(arr.size()) != shape_numel(shape))
    throw ConsistencyError("label array for " + name +
                           " is not congruent with shape " + shape_str(shape));
  bool all_active = true;
  auto mask = make_tensor<T>(shape);
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const bool on = active_.count(arr[i]) > 0;
    all_active = all_active && on;
    mask->v[i] = on ? T(1) : T(0);
  }
  if (all_active) return nullptr;
  return mask;
}

template TensorPtr<float> MaskView::mask_for<float>(const std::string&,
                                                    const Shape&) const;
template TensorPtr<double> MaskView::mask_for<double>(const std::string&,
                                                      const Shape&) const;

void masked_sgd_step(std::map<std::string, TensorPtr<float>>& params,
                     const ParamPartition& partition,
                     const std::set<Label>& trainable, float lr,
                     bool general_frozen) {
  if (general_frozen && trainable.count(kGeneral))
    throw UsageError(
        "GENERAL parameters are frozen in this phase and cannot be trained");
  for (auto& [name, t] : params) {
    if (t->g.empty()) continue;
    const auto& arr = partition.labels_of(name);
    for (std::size_t i = 0; i < arr.size(); ++i)
      if (trainable.count(arr[i])) t->v[i] -= lr * t->g[i];
  }
}

MaskedAdam::MaskedAdam(float lr, float beta1, float beta2, float eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void MaskedAdam::step(std::map<std::string, TensorPtr<float>>& params,
                      const ParamPartition& partition,
                      const std::set<Label>& trainable, bool general_frozen) {
  if (general_frozen && trainable.count(kGeneral))
    throw UsageError(
        "GENERAL parameters are frozen in this phase and cannot be trained");
  ++t_;
  const float bc1 = 1.0f - std::pow(beta1_, static_cast<float>(t_));
  const float bc2 = 1.0f - std::pow(beta2_, static_cast<float>(t_));
  for (auto& [name, t] : params) {
    if (t->g.empty()) continue;
    const auto& arr = partition.labels_of(name);
    auto& m = m_[name];
    auto& v = v_[name];
    if (m.size() != t->v.size()) m.assign(t->v.size(), 0.0f);
    if (v.size() != t->v.size()) v.assign(t->v.size(), 0.0f);
    for (std::size_t i = 0; i < arr.size(); ++i) {
      if (!trainable.count(arr[i])) continue;
      const float g = t->g[i];
      m[i] = beta1_ * m[i] + (1.0f - beta1_) * g;
      v[i] = beta2_ * v[i] + (1.0f - beta2_) * g * g;
      const float mhat = m[i] / bc1;
      const float vhat = v[i] / bc2;
      t->v[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

namespace {

std::map<std::string, std::vector<Label>> all_general_labels(
    const std::map<std::string, TensorPtr<float>>& params) {
  std::map<std::string, std::vector<Label>> labels;
  for (const auto& [name, t] : params)
    labels[name].assign(static_cast<std::size_t>(t->numel()), kGeneral);
  return labels;
}

void check_ratio(double ratio) {
  if (!(ratio > 0.0 && ratio < 1.0))
    throw ConfigError("prune ratio must be in (0, 1), got " +
                      std::to_string(ratio));
}

}  // namespace

ParamPartition all_general_partition(
    const std::map<std::string, TensorPtr<float>>& params) {
  ParamPartition partition;
  for (const auto& [name, t] : params)
    partition.labels[name].assign(t->v.size(), kGeneral);
  return partition;
}

ParamPartition build_weight_partition(
    const std::map<std::string, TensorPtr<float>>& params,
    const std::map<std::string, std::vector<float>>& scores, double ratio,
    const std::set<std::string>& exclusions, int n_domains_planned) {
  check_ratio(ratio);
  if (n_domains_planned < 1)
    throw ConfigError("n_domains_planned must be >= 1");

  ParamPartition part;
  part.granularity = Granularity::kWeight;
  part.n_domains_planned = n_domains_planned;
  part.exclusions = exclusions;
  part.labels = all_general_labels(params);

  struct FreeItem {
    float score;
    std::string tensor;
    std::int64_t index;
  };
  std::vector<FreeItem> pool;
  for (const auto& [name, t] : params) {
    if (t->shape.size() != 2 || exclusions.count(name)) continue;
    auto it = scores.find(name);
    if (it == scores.end())
      throw ConsistencyError("importance report is missing tensor: " + name);
    const auto& s = it->second;
    if (static_cast<std::int64_t>(s.size()) != t->numel())
      throw ConsistencyError("importance scores for " + name +
                             " are not congruent with the tensor");
    const std::int64_t n = t->numel();
    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::int64_t a, std::int64_t b) {
                       if (s[a] != s[b]) return s[a] < s[b];
                       return a < b;
                     });
    const std::int64_t n_free =
        static_cast<std::int64_t>(std::floor(ratio * static_cast<double>(n)));
    auto& arr = part.labels[name];
    for (std::int64_t i = 0; i < n_free; ++i) {
      arr[static_cast<std::size_t>(order[i])] = kFree;
      pool.push_back({s[order[i]], name, order[i]});
    }
  }
  std::stable_sort(pool.begin(), pool.end(),
                   [](const FreeItem& a, const FreeItem& b) {
                     if (a.score != b.score) return a.score < b.score;
                     if (a.tensor != b.tensor) return a.tensor < b.tensor;
                     return a.index < b.index;
                   });
  part.free_weight_order.reserve(pool.size());
  for (const auto& item : pool)
    part.free_weight_order.push_back({item.tensor, item.index});
  return part;
}

namespace {

// Flat indices covered by one slice of a site.
std::vector<std::int64_t> slice_indices(
    const TensorSlice& slice,
    const std::map<std::string, TensorPtr<float>>& params) {
  auto it = params.find(slice.tensor);
  if (it == params.end())
    throw ConsistencyError("site references unknown tensor: " + slice.tensor);
  const auto& t = *it->second;
  std::vector<std::int64_t> out;
  if (slice.dim == 0) {
    if (t.shape.size() == 1) {
      if (slice.index < 0 || slice.index >= t.shape[0])
        throw ConsistencyError("site slice out of range in " + slice.tensor);
      out.push_back(slice.index);
    } else if (t.shape.size() == 2) {
      if (slice.index < 0 || slice.index >= t.shape[0])
        throw ConsistencyError("site slice out of range in " + slice.tensor);
      const int cols = t.shape[1];
      for (int j = 0; j < cols; ++j)
        out.push_back(static_cast<std::int64_t>(slice.index) * cols + j);
    } else {
      throw ConsistencyError("site slice on unsupported rank in " +
                             slice.tensor);
    }
  } else if (slice.dim == 1) {
    if (t.shape.size() != 2 || slice.index < 0 || slice.index >= t.shape[1])
      throw ConsistencyError("site slice out of range in " + slice.tensor);
    const int rows = t.shape[0], cols = t.shape[1];
    for (int i = 0; i < rows; ++i)
      out.push_back(static_cast<std::int64_t>(i) * cols + slice.index);
  } else {
    throw ConsistencyError("site slice has invalid dim");
  }
  return out;
}

}  // namespace

ParamPartition build_neuron_partition(
    const std::map<std::string, TensorPtr<float>>& params,
    const std::vector<NeuronSite>& sites, const std::vector<float>& scores,
    double ratio, const std::set<std::string>& exclusions,
    int n_domains_planned) {
  check_ratio(ratio);
  if (n_domains_planned < 1)
    throw ConfigError("n_domains_planned must be >= 1");
  if (sites.size() != scores.size())
    throw ConsistencyError("site and score counts differ");

  ParamPartition part;
  part.granularity = Granularity::kNeuron;
  part.n_domains_planned = n_domains_planned;
  part.exclusions = exclusions;
  part.labels = all_general_labels(params);
  part.sites = sites;

  std::map<std::string, std::vector<int>> by_group;
  for (int i = 0; i < static_cast<int>(sites.size()); ++i) {
    for (const auto& slice : sites[i].slices)
      if (exclusions.count(slice.tensor))
        throw ConsistencyError("site touches excluded tensor: " +
                               slice.tensor);
    by_group[sites[i].group].push_back(i);
  }

  std::vector<int> pruned;
  for (const auto& [group, members] : by_group) {
    std::vector<int> order = members;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      if (scores[a] != scores[b]) return scores[a] < scores[b];
      return a < b;
    });
    const int n_free = static_cast<int>(
        std::floor(ratio * static_cast<double>(members.size())));
    for (int i = 0; i < n_free; ++i) pruned.push_back(order[i]);
  }
  for (int idx : pruned)
    for (const auto& slice : sites[idx].slices)
      for (std::int64_t flat : slice_indices(slice, params))
        part.labels[slice.tensor][static_cast<std::size_t>(flat)] = kFree;

  std::stable_sort(pruned.begin(), pruned.end(), [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] < scores[b];
    return a < b;
  });
  part.free_site_order = std::move(pruned);
  return part;
}

void expand(ParamPartition& partition,
            std::map<std::string, TensorPtr<float>>& params, int domain,
            ExpandInit init, Rng* rng) {
  if (domain < 1) throw UsageError("domain ids start at 1");
  if (domain != partition.next_domain)
    throw UsageError("domains must be expanded in order; expected domain " +
                     std::to_string(partition.next_domain));
  if (init == ExpandInit::kUniform && rng == nullptr)
    throw UsageError("uniform expansion init requires an RNG");

  const Label new_label = domain_label(domain);
  auto reinit = [&](TensorPtr<float>& t, std::int64_t i) {
    t->v[static_cast<std::size_t>(i)] =
        init == ExpandInit::kZero
            ? 0.0f
            : static_cast<float>(rng->uniform(-0.01, 0.01));
  };

  std::int64_t consumed = 0;
  if (partition.granularity == Granularity::kWeight) {
    const std::int64_t total =
        static_cast<std::int64_t>(partition.free_weight_order.size());
    const std::int64_t base = total / partition.n_domains_planned;
    const std::int64_t rem = total % partition.n_domains_planned;
    const std::int64_t share = base + (domain <= rem ? 1 : 0);
    for (const auto& ref : partition.free_weight_order) {
      if (consumed >= share) break;
      auto& arr = partition.labels.at(ref.tensor);
      if (arr[static_cast<std::size_t>(ref.index)] != kFree) continue;
      arr[static_cast<std::size_t>(ref.index)] = new_label;
      reinit(params.at(ref.tensor), ref.index);
      ++consumed;
    }
  } else {
    const std::int64_t total =
        static_cast<std::int64_t>(partition.free_site_order.size());
    const std::int64_t base = total / partition.n_domains_planned;
    const std::int64_t rem = total % partition.n_domains_planned;
    const std::int64_t share = base + (domain <= rem ? 1 : 0);
    for (int site_idx : partition.free_site_order) {
      if (consumed >= share) break;
      const auto& site = partition.sites[static_cast<std::size_t>(site_idx)];
      bool still_free = true;
      for (const auto& slice : site.slices) {
        const auto idxs = slice_indices(slice, params);
        const auto& arr = partition.labels.at(slice.tensor);
        for (std::int64_t flat : idxs)
          if (arr[static_cast<std::size_t>(flat)] != kFree) still_free = false;
      }
      if (!still_free) continue;
      for (const auto& slice : site.slices) {
        auto& arr = partition.labels.at(slice.tensor);
        auto& t = params.at(slice.tensor);
        for (std::int64_t flat : slice_indices(slice, params)) {
          arr[static_cast<std::size_t>(flat)] = new_label;
          reinit(t, flat);
        }
      }
      ++consumed;
    }
  }
  if (consumed == 0)
    throw CapacityError("no FREE capacity remaining for domain " +
                        std::to_string(domain));
  ++partition.next_domain;
}

}  // namespace pte
