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

#include "pte/distill.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "pte/errors.hpp"

namespace pte {

void KDConfig::validate() const {
  if (!(temperature > 0.0f))
    throw ConfigError("KD temperature must be positive");
  if (data != "in_domain" && data != "general")
    throw ConfigError("KD data source must be in_domain or general");
  if (steps < 0) throw ConfigError("KD steps must be >= 0");
  if (!(lr > 0.0f)) throw ConfigError("KD lr must be positive");
  if (batch_size < 1) throw ConfigError("KD batch_size must be >= 1");
  if (eval_every < 1) throw ConfigError("KD eval_every must be >= 1");
  if (patience < 1) throw ConfigError("KD patience must be >= 1");
}

namespace {

// Row-wise softmax of logits/tau into `out`, one row at a time.
template <typename T>
void softmax_row(const T* logits, int n, double tau, double* out) {
  double mx = logits[0] / tau;
  for (int j = 1; j < n; ++j) mx = std::max(mx, logits[j] / tau);
  double denom = 0.0;
  for (int j = 0; j < n; ++j) {
    out[j] = std::exp(logits[j] / tau - mx);
    denom += out[j];
  }
  for (int j = 0; j < n; ++j) out[j] /= denom;
}

}  // namespace

template <typename T>
TensorPtr<T> kd_loss(TapeT<T>* tape, const TensorPtr<T>& teacher_logits,
                     const TensorPtr<T>& student_logits, T temperature,
                     std::span<const int> keep) {
  if (teacher_logits->shape != student_logits->shape)
    throw ConsistencyError("teacher and student logits differ in shape: " +
                           shape_str(teacher_logits->shape) + " vs " +
                           shape_str(student_logits->shape));
  if (!(temperature > T(0)))
    throw ConfigError("KD temperature must be positive");
  const int rows = student_logits->rows(), cols = student_logits->cols();
  if (!keep.empty() && static_cast<int>(keep.size()) != rows)
    throw ConsistencyError("keep mask length does not match row count");

  const double tau = static_cast<double>(temperature);
  std::vector<int> kept;
  for (int i = 0; i < rows; ++i)
    if (keep.empty() || keep[i] != 0) kept.push_back(i);
  if (kept.empty()) throw UsageError("kd_loss: every row is masked out");

  // q and p are saved for the backward pass.
  auto q = std::make_shared<std::vector<double>>(kept.size() * cols);
  auto p = std::make_shared<std::vector<double>>(kept.size() * cols);
  double total = 0.0;
  for (std::size_t r = 0; r < kept.size(); ++r) {
    const std::size_t base = static_cast<std::size_t>(kept[r]) * cols;
    softmax_row(teacher_logits->v.data() + base, cols, tau,
                q->data() + r * cols);
    softmax_row(student_logits->v.data() + base, cols, tau,
                p->data() + r * cols);
    for (int j = 0; j < cols; ++j) {
      const double qv = (*q)[r * cols + j];
      if (qv > 0.0) total -= qv * std::log((*p)[r * cols + j]);
    }
  }
  const double n = static_cast<double>(kept.size());
  auto loss = make_scalar<T>(static_cast<T>(total / n));
  check_finite(*loss, "kd_loss");

  if (tape != nullptr && student_logits->requires_grad) {
    loss->requires_grad = true;
    auto kept_copy = std::make_shared<std::vector<int>>(kept);
    auto student = student_logits;
    auto out = loss;
    tape->record([student, out, q, p, kept_copy, cols, n, tau]() {
      if (out->g.empty()) return;
      const double d = static_cast<double>(out->g[0]) / (n * tau);
      student->ensure_grad();
      for (std::size_t r = 0; r < kept_copy->size(); ++r) {
        const std::size_t base =
            static_cast<std::size_t>((*kept_copy)[r]) * cols;
        for (int j = 0; j < cols; ++j)
          student->g[base + j] += static_cast<T>(
              d * ((*p)[r * cols + j] - (*q)[r * cols + j]));
      }
    });
  }
  return loss;
}

template TensorPtr<float> kd_loss<float>(TapeT<float>*,
                                         const TensorPtr<float>&,
                                         const TensorPtr<float>&, float,
                                         std::span<const int>);
template TensorPtr<double> kd_loss<double>(TapeT<double>*,
                                           const TensorPtr<double>&,
                                           const TensorPtr<double>&, double,
                                           std::span<const int>);

namespace {

float masked_val_nll(const Transformer& model, const MaskView& view,
                     std::span<const SentencePair> val) {
  ForwardOptions opts;
  opts.view = &view;
  auto loss = nll_loss<float>(nullptr, model, val, opts);
  return loss->v[0];
}

std::map<std::string, std::vector<float>> snapshot(const Transformer& model) {
  std::map<std::string, std::vector<float>> s;
  for (const auto& [name, t] : model.params()) s[name] = t->v;
  return s;
}

void restore(Transformer& model,
             const std::map<std::string, std::vector<float>>& s) {
  for (auto& [name, t] : model.params()) t->v = s.at(name);
}

}  // namespace

KDResult run_kd_phase(const Transformer& teacher, Transformer& student,
                      const ParamPartition& partition,
                      std::span<const SentencePair> train_data,
                      std::span<const SentencePair> general_val,
                      const KDConfig& config, Rng& rng) {
  config.validate();
  if (teacher.config().param_count() != student.config().param_count() ||
      teacher.config().tgt_vocab != student.config().tgt_vocab)
    throw ConsistencyError("teacher and student configurations differ");
  if (train_data.empty()) throw UsageError("KD phase needs training data");
  if (general_val.empty()) throw UsageError("KD phase needs validation data");

  MaskView view(partition, {kGeneral}, student.params());
  ForwardOptions student_opts;
  student_opts.view = &view;

  KDResult result;
  result.initial_val_loss = masked_val_nll(student, view, general_val);
  result.best_val_loss = result.initial_val_loss;
  result.val_history.push_back(result.initial_val_loss);
  auto best_state = snapshot(student);

  MaskedAdam adam(config.lr);
  std::vector<std::size_t> order(train_data.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  std::size_t cursor = 0;
  int stale = 0;

  for (int step = 1; step <= config.steps; ++step) {
    Tape tape;
    TensorPtr<float> acc;
    const int batch = std::min<int>(config.batch_size,
                                    static_cast<int>(train_data.size()));
    for (int b = 0; b < batch; ++b) {
      if (cursor == order.size()) {
        rng.shuffle(order);
        cursor = 0;
      }
      const auto& pair = train_data[order[cursor++]];
      std::vector<int> tgt_in = {Vocabulary::kBos};
      tgt_in.insert(tgt_in.end(), pair.tgt.begin(), pair.tgt.end());
      auto teacher_logits = teacher.forward(nullptr, pair.src, tgt_in, {});
      auto student_logits =
          student.forward(&tape, pair.src, tgt_in, student_opts);
      auto loss = kd_loss<float>(&tape, teacher_logits, student_logits,
                                 config.temperature);
      acc = acc ? add(&tape, acc, loss) : loss;
    }
    auto loss = scale(&tape, acc, 1.0f / static_cast<float>(batch));
    student.zero_grads();
    tape.backward(loss);
    adam.step(student.params(), partition, {kGeneral}, false);
    result.steps_run = step;

    if (step % config.eval_every == 0 || step == config.steps) {
      const float val = masked_val_nll(student, view, general_val);
      result.val_history.push_back(val);
      if (val < result.best_val_loss) {
        result.best_val_loss = val;
        best_state = snapshot(student);
        stale = 0;
      } else if (++stale >= config.patience) {
        break;
      }
    }
  }
  restore(student, best_state);
  return result;
}

}  // namespace pte
