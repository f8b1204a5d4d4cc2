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
// Word-level knowledge distillation (Eq. 11): the unpruned general-domain
// model teaches the pruned student, which trains only its GENERAL-labeled
// parameters under the GENERAL mask view.

#ifndef PTE_DISTILL_HPP_
#define PTE_DISTILL_HPP_

#include <span>
#include <string>
#include <vector>

#include "pte/corpus.hpp"
#include "pte/partition.hpp"
#include "pte/rng.hpp"
#include "pte/tensor.hpp"
#include "pte/transformer.hpp"

namespace pte {

struct KDConfig {
  float temperature = 1.0f;
  std::string data = "in_domain";  // which corpus feeds the phase
  int steps = 300;
  float lr = 1e-3f;
  int batch_size = 8;
  int eval_every = 20;  // validation cadence, in steps
  int patience = 5;     // evals without improvement before stopping

  void validate() const;  // throws ConfigError
};

// Mean over kept rows of -sum_v q_v log p_v with q = softmax(teacher/tau)
// and p = softmax(student/tau). `keep` marks rows entering the mean (1 =
// keep); empty means every row. Gradients flow to the student only; the
// per-row student gradient is (p - q) / (N * tau).
template <typename T>
TensorPtr<T> kd_loss(TapeT<T>* tape, const TensorPtr<T>& teacher_logits,
                     const TensorPtr<T>& student_logits, T temperature,
                     std::span<const int> keep = {});

struct KDResult {
  int steps_run = 0;
  float initial_val_loss = 0.0f;
  float best_val_loss = 0.0f;
  std::vector<float> val_history;  // one entry per evaluation, step 0 first
};

// Distills `student` (under the partition's GENERAL view, updating only
// GENERAL-labeled parameters with Adam) against the frozen teacher on
// `train_data`, early-stopping on general-domain validation NLL and
// restoring the best parameters seen, the step-0 state included. Teacher
// parameters are never written.
KDResult run_kd_phase(const Transformer& teacher, Transformer& student,
                      const ParamPartition& partition,
                      std::span<const SentencePair> train_data,
                      std::span<const SentencePair> general_val,
                      const KDConfig& config, Rng& rng);

}  // namespace pte

#endif  // PTE_DISTILL_HPP_
