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

#include "pte/baselines.hpp"

#include <algorithm>
#include <memory>
#include <numeric>
#include <utility>

#include "pte/distill.hpp"
#include "pte/errors.hpp"
#include "pte/importance.hpp"

namespace pte {

void TrainOptions::validate() const {
  if (!(lr > 0.0f)) throw ConfigError("train lr must be positive");
  if (steps < 0) throw ConfigError("train steps must be >= 0");
  if (batch_size < 1) throw ConfigError("train batch_size must be >= 1");
  if (trainable.empty()) throw ConfigError("trainable label set is empty");
  if (optimizer != "adam" && optimizer != "sgd")
    throw ConfigError("optimizer must be adam or sgd, got " + optimizer);
}

float train_model(Transformer& model, const ParamPartition& partition,
                  std::span<const SentencePair> data, const LossFn& loss_fn,
                  const TrainOptions& opts, Rng& rng) {
  opts.validate();
  if (data.empty()) throw UsageError("train_model: empty data");

  MaskedAdam adam(opts.lr);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  std::size_t cursor = 0;

  float last_loss = 0.0f;
  for (int step = 1; step <= opts.steps; ++step) {
    std::vector<SentencePair> batch;
    const int n = std::min<int>(opts.batch_size, static_cast<int>(data.size()));
    for (int b = 0; b < n; ++b) {
      if (cursor == order.size()) {
        rng.shuffle(order);
        cursor = 0;
      }
      batch.push_back(data[order[cursor++]]);
    }
    Tape tape;
    auto loss = loss_fn(&tape, batch);
    last_loss = loss->v[0];
    model.zero_grads();
    tape.backward(loss);
    if (opts.optimizer == "adam")
      adam.step(model.params(), partition, opts.trainable,
                opts.general_frozen);
    else
      masked_sgd_step(model.params(), partition, opts.trainable, opts.lr,
                      opts.general_frozen);
  }
  return last_loss;
}

float finetune(Transformer& model, std::span<const SentencePair> data,
               const TrainOptions& opts, Rng& rng) {
  auto partition = all_general_partition(model.params());
  LossFn loss_fn = [&model](Tape* tape, std::span<const SentencePair> batch) {
    return nll_loss<float>(tape, model, batch, {});
  };
  TrainOptions o = opts;
  o.trainable = {kGeneral};
  o.general_frozen = false;
  return train_model(model, partition, data, loss_fn, o, rng);
}

TensorPtr<float> mol_loss(Tape* tape, const Transformer& model,
                          const Transformer& teacher,
                          std::span<const SentencePair> batch, float alpha) {
  if (!(alpha >= 0.0f)) throw ConfigError("MOL alpha must be >= 0");
  if (batch.empty()) throw UsageError("mol_loss: empty batch");
  if (alpha == 0.0f) return nll_loss<float>(tape, model, batch, {});
  if (teacher.config().tgt_vocab != model.config().tgt_vocab)
    throw ConsistencyError("MOL teacher target vocabulary differs");

  TensorPtr<float> acc_ce, acc_kd;
  for (const auto& pair : batch) {
    std::vector<int> tgt_in;
    tgt_in.reserve(pair.tgt.size() + 1);
    tgt_in.push_back(Vocabulary::kBos);
    tgt_in.insert(tgt_in.end(), pair.tgt.begin(), pair.tgt.end());
    std::vector<int> tgt_out = pair.tgt;
    tgt_out.push_back(Vocabulary::kEos);

    auto logits = model.forward(tape, pair.src, tgt_in, {});
    auto teacher_logits = teacher.forward(nullptr, pair.src, tgt_in, {});
    auto ce = cross_entropy(tape, logits, tgt_out, -1);
    auto kd = kd_loss<float>(tape, teacher_logits, logits, 1.0f);
    acc_ce = acc_ce ? add(tape, acc_ce, ce) : ce;
    acc_kd = acc_kd ? add(tape, acc_kd, kd) : kd;
  }
  const float inv = 1.0f / static_cast<float>(batch.size());
  return add(tape, scale(tape, acc_ce, inv),
             scale(tape, acc_kd, alpha * inv));
}

FisherDiag estimate_fisher(const Transformer& model,
                           std::span<const SentencePair> sample) {
  if (sample.empty()) throw UsageError("estimate_fisher: empty sample");

  std::map<std::string, std::vector<double>> acc;
  for (const auto& [name, t] : model.params())
    acc[name].assign(t->v.size(), 0.0);

  for (const auto& pair : sample) {
    for (const auto& [name, t] : model.params()) t->zero_grad();
    Tape tape;
    auto loss = nll_loss<float>(&tape, model, {&pair, 1}, {});
    tape.backward(loss);
    for (const auto& [name, t] : model.params()) {
      if (t->g.empty()) continue;
      auto& a = acc[name];
      for (std::size_t i = 0; i < t->g.size(); ++i) {
        const double g = static_cast<double>(t->g[i]);
        a[i] += g * g;
      }
    }
  }
  for (const auto& [name, t] : model.params()) t->zero_grad();

  FisherDiag fisher;
  fisher.n_samples = static_cast<std::int64_t>(sample.size());
  const double inv = 1.0 / static_cast<double>(sample.size());
  for (auto& [name, a] : acc) {
    auto& out = fisher.values[name];
    out.resize(a.size());
    for (std::size_t i = 0; i < a.size(); ++i)
      out[i] = static_cast<float>(a[i] * inv);
  }
  return fisher;
}

TensorPtr<float> ewc_penalty(
    Tape* tape, const std::map<std::string, TensorPtr<float>>& params,
    const FisherDiag& fisher,
    const std::map<std::string, std::vector<float>>& snapshot) {
  double total = 0.0;
  struct Term {
    TensorPtr<float> t;
    std::vector<float> coeff;  // 2 F_i (theta_i - snapshot_i) at forward
  };
  std::vector<Term> terms;

  for (const auto& [name, f] : fisher.values) {
    auto pit = params.find(name);
    if (pit == params.end())
      throw ConsistencyError("Fisher names unknown tensor " + name);
    const auto& t = pit->second;
    auto sit = snapshot.find(name);
    if (sit == snapshot.end())
      throw ConsistencyError("snapshot is missing tensor " + name);
    if (f.size() != t->v.size() || sit->second.size() != t->v.size())
      throw ConsistencyError("Fisher or snapshot size mismatch for " + name);

    Term term;
    term.t = t;
    term.coeff.resize(t->v.size());
    for (std::size_t i = 0; i < t->v.size(); ++i) {
      const double d =
          static_cast<double>(t->v[i]) - static_cast<double>(sit->second[i]);
      total += static_cast<double>(f[i]) * d * d;
      term.coeff[i] = static_cast<float>(2.0 * f[i] * d);
    }
    terms.push_back(std::move(term));
  }

  auto out = make_scalar<float>(static_cast<float>(total));
  check_finite(*out, "ewc_penalty");
  if (tape != nullptr) {
    out->requires_grad = true;
    auto shared = std::make_shared<std::vector<Term>>(std::move(terms));
    tape->record([shared, out]() {
      if (out->g.empty()) return;
      const float g = out->g[0];
      for (const auto& term : *shared) {
        if (!term.t->requires_grad) continue;
        term.t->ensure_grad();
        for (std::size_t i = 0; i < term.coeff.size(); ++i)
          term.t->g[i] += g * term.coeff[i];
      }
    });
  }
  return out;
}

TensorPtr<float> ewc_loss(
    Tape* tape, const Transformer& model, std::span<const SentencePair> batch,
    const FisherDiag& fisher,
    const std::map<std::string, std::vector<float>>& snapshot, float alpha) {
  if (!(alpha >= 0.0f)) throw ConfigError("EWC alpha must be >= 0");
  auto nll = nll_loss<float>(tape, model, batch, {});
  auto penalty = ewc_penalty(tape, model.params(), fisher, snapshot);
  return add(tape, nll, scale(tape, penalty, alpha));
}

std::map<std::string, std::vector<float>> param_snapshot(
    const Transformer& model) {
  std::map<std::string, std::vector<float>> snapshot;
  for (const auto& [name, t] : model.params()) snapshot[name] = t->v;
  return snapshot;
}

ParamPartition ablation_random_partition(const Transformer& model,
                                         double ratio,
                                         Granularity granularity, Rng& rng) {
  const auto exclusions = standard_exclusions(model.params());
  if (granularity == Granularity::kWeight) {
    std::map<std::string, std::vector<float>> scores;
    for (const auto& [name, t] : model.params()) {
      if (t->shape.size() != 2 || exclusions.count(name)) continue;
      auto& s = scores[name];
      s.resize(t->v.size());
      for (auto& v : s) v = static_cast<float>(rng.uniform());
    }
    return build_weight_partition(model.params(), scores, ratio, exclusions);
  }
  const auto sites = tracked_neurons(model.config());
  std::vector<float> scores(sites.size());
  for (auto& v : scores) v = static_cast<float>(rng.uniform());
  return build_neuron_partition(model.params(), sites, scores, ratio,
                                exclusions);
}

float ablation_selective_ft(Transformer& model,
                            const ParamPartition& partition,
                            std::span<const SentencePair> data,
                            const TrainOptions& opts, Rng& rng) {
  LossFn loss_fn = [&model](Tape* tape, std::span<const SentencePair> batch) {
    return nll_loss<float>(tape, model, batch, {});
  };
  TrainOptions o = opts;
  o.trainable = {kFree};
  o.general_frozen = true;
  return train_model(model, partition, data, loss_fn, o, rng);
}

}  // namespace pte
